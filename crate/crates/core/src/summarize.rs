//! Per-cluster documents, the all-clusters topic prompt, and response
//! parsing back into one topic per cluster.

use crate::cluster::ClusterModel;
use crate::corpus::Post;
use crate::gateway::{render, ChatRequest, Gateway, GatewayError, PromptTemplate, TokenBudget};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("no clusters to summarize: every post is noise")]
    EmptyClusterSet,
    #[error("labels cover {labels} posts but {posts} were given")]
    LabelMismatch { labels: usize, posts: usize },
    #[error("cluster {cluster}: post {post} alone exceeds the per-cluster budget share")]
    OversizedPost { cluster: usize, post: String },
    #[error("expected {expected} topics, found {found}")]
    CountMismatch { found: usize, expected: usize },
    #[error("unparseable line: {0:?}")]
    UnparseableLine(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// All of one cluster's member posts, concatenated in ascending post-id
/// order, blank line between posts. Noise is never documented.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDocument {
    pub cluster: usize,
    pub text: String,
    /// Posts included after budget truncation.
    pub member_count: usize,
    pub token_cost: usize,
}

/// One summarized topic per non-noise cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub cluster: usize,
    pub topic: String,
}

/// Build one document per cluster 0..K-1.
///
/// Each document gets an equal share (`limit / K`) of the budget; posts
/// are dropped whole from the end of the id-ordered member list until the
/// document fits. A single member post larger than the share is an error
/// rather than a silent half-post.
pub fn assemble_documents(
    posts: &[Post],
    model: &ClusterModel,
    budget: &TokenBudget,
) -> Result<Vec<ClusterDocument>, SummarizeError> {
    assemble_documents_from_labels(posts, &model.labels, model.n_clusters(), budget)
}

/// [`assemble_documents`] over bare labels, for callers that reloaded the
/// assignment artifact rather than holding a full cluster model.
pub fn assemble_documents_from_labels(
    posts: &[Post],
    labels: &[i32],
    k: usize,
    budget: &TokenBudget,
) -> Result<Vec<ClusterDocument>, SummarizeError> {
    if labels.len() != posts.len() {
        return Err(SummarizeError::LabelMismatch {
            labels: labels.len(),
            posts: posts.len(),
        });
    }
    if k == 0 {
        return Err(SummarizeError::EmptyClusterSet);
    }
    let share = budget.limit / k;

    let mut members: Vec<Vec<&Post>> = vec![Vec::new(); k];
    for (post, label) in posts.iter().zip(labels) {
        if *label >= 0 {
            members[*label as usize].push(post);
        }
    }

    let mut documents = Vec::with_capacity(k);
    for (cluster, mut posts) in members.into_iter().enumerate() {
        posts.sort_by(|x, y| x.id.cmp(&y.id));

        // Longest id-ordered prefix whose joined text fits the share,
        // counting the actual separator bytes.
        let mut included = 0usize;
        let mut bytes = 0usize;
        for post in &posts {
            let piece = post.content().len() + if included > 0 { 2 } else { 0 };
            if (bytes + piece).div_ceil(4) > share {
                break;
            }
            bytes += piece;
            included += 1;
        }
        if included == 0 && !posts.is_empty() {
            return Err(SummarizeError::OversizedPost {
                cluster,
                post: posts[0].id.clone(),
            });
        }
        if included < posts.len() {
            log::warn!(
                "cluster {cluster}: dropped {} of {} posts to fit the budget share",
                posts.len() - included,
                posts.len()
            );
        }

        let text = posts[..included]
            .iter()
            .map(|p| p.content())
            .collect::<Vec<_>>()
            .join("\n\n");
        documents.push(ClusterDocument {
            cluster,
            token_cost: budget.cost(&text),
            member_count: included,
            text,
        });
    }
    Ok(documents)
}

/// Render the one-shot topic prompt over every cluster document:
/// `Cluster <i>:` blocks in id order, N bound to the cluster count.
pub fn build_topic_prompt(docs: &[ClusterDocument]) -> Result<String, SummarizeError> {
    if docs.is_empty() {
        return Err(SummarizeError::EmptyClusterSet);
    }
    let blocks: Vec<String> = docs
        .iter()
        .map(|d| format!("Cluster {}:\n{}", d.cluster, d.text))
        .collect();
    let mut bindings = BTreeMap::new();
    bindings.insert("N".to_string(), docs.len().to_string());
    bindings.insert("Post Content".to_string(), blocks.join("\n\n"));
    Ok(render(&PromptTemplate::topic_summary(), &bindings)?)
}

/// Parse a `Cluster <i>: <topic>` line; `None` for preamble/other lines.
fn parse_topic_line(line: &str) -> Option<Result<TopicSummary, SummarizeError>> {
    let trimmed = line.trim_start();
    let rest = trimmed.strip_prefix("Cluster ")?;
    let colon = rest.find(':')?;
    let id_part = rest[..colon].trim();
    let cluster: usize = id_part.parse().ok()?;
    let topic = rest[colon + 1..].trim();
    if topic.is_empty() {
        return Some(Err(SummarizeError::UnparseableLine(line.to_string())));
    }
    Some(Ok(TopicSummary {
        cluster,
        topic: topic.to_string(),
    }))
}

/// Parse the topic response: exactly `expected` lines of
/// `Cluster <i>: <topic>`, ids 0..K-1 each appearing once. Prose before,
/// between, or after the list is skipped.
pub fn parse_topics(response: &str, expected: usize) -> Result<Vec<TopicSummary>, SummarizeError> {
    let mut by_cluster: BTreeMap<usize, String> = BTreeMap::new();
    let mut found = 0usize;
    for line in response.lines() {
        let Some(parsed) = parse_topic_line(line) else {
            continue;
        };
        let summary = parsed?;
        if summary.cluster < expected && !by_cluster.contains_key(&summary.cluster) {
            by_cluster.insert(summary.cluster, summary.topic);
        }
        found += 1;
    }

    if found != expected || by_cluster.len() != expected {
        return Err(SummarizeError::CountMismatch { found, expected });
    }
    Ok(by_cluster
        .into_iter()
        .map(|(cluster, topic)| TopicSummary { cluster, topic })
        .collect())
}

/// Summarize every cluster in one request; on a count mismatch, fall back
/// to one request per cluster.
pub fn summarize_topics(
    docs: &[ClusterDocument],
    gateway: &Gateway,
    model_id: &str,
) -> Result<Vec<TopicSummary>, SummarizeError> {
    let prompt = build_topic_prompt(docs)?;
    let response = gateway.complete(&ChatRequest::new(prompt, model_id))?;
    match parse_topics(&response.text, docs.len()) {
        Ok(topics) => Ok(topics),
        Err(SummarizeError::CountMismatch { found, expected }) => {
            log::warn!(
                "one-shot topic response had {found} of {expected} clusters; retrying per cluster"
            );
            let mut topics = Vec::with_capacity(docs.len());
            for doc in docs {
                let single = ClusterDocument {
                    cluster: 0,
                    text: doc.text.clone(),
                    member_count: doc.member_count,
                    token_cost: doc.token_cost,
                };
                let prompt = build_topic_prompt(std::slice::from_ref(&single))?;
                let response = gateway.complete(&ChatRequest::new(prompt, model_id))?;
                let parsed = parse_topics(&response.text, 1)?;
                topics.push(TopicSummary {
                    cluster: doc.cluster,
                    topic: parsed.into_iter().next().expect("one topic parsed").topic,
                });
            }
            Ok(topics)
        }
        Err(other) => Err(other),
    }
}

/// Write `topics.json`: `[{"cluster", "topic"}]` sorted by cluster id.
pub fn write_topics(topics: &[TopicSummary], path: &Path) -> Result<(), SummarizeError> {
    let mut sorted = topics.to_vec();
    sorted.sort_by_key(|t| t.cluster);
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), &sorted).map_err(std::io::Error::other)?;
    Ok(())
}

pub fn read_topics(path: &Path) -> Result<Vec<TopicSummary>, SummarizeError> {
    let text = std::fs::read_to_string(path)?;
    let topics: Vec<TopicSummary> = serde_json::from_str(&text).map_err(std::io::Error::other)?;
    Ok(topics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{CondensedNode, CondensedTree, ClusterModel};
    use crate::corpus::Comment;
    use crate::gateway::count_tokens;

    fn post(id: &str, body: &str) -> Post {
        Post {
            id: id.to_string(),
            subreddit: "s".into(),
            title: format!("title {id}"),
            body: body.to_string(),
            created_utc: 0,
            karma: 0,
            comments: vec![Comment {
                id: format!("{id}-c"),
                body: "c".into(),
                karma: 0,
                created_utc: 0,
            }],
            label: None,
        }
    }

    fn model_with_labels(labels: Vec<i32>) -> ClusterModel {
        let k = labels.iter().copied().max().map_or(0, |m| (m + 1) as usize);
        ClusterModel {
            stabilities: vec![1.0; k],
            tree: CondensedTree {
                nodes: vec![CondensedNode {
                    parent: None,
                    lambda_birth: 0.0,
                    lambda_death: 0.0,
                    size: labels.len(),
                }],
                exits: Vec::new(),
                n_points: labels.len(),
            },
            mst: Vec::new(),
            labels,
        }
    }

    #[test]
    fn documents_order_members_by_post_id() {
        // Cluster 0 holds p3 and p1, cluster 1 holds p2.
        let posts = vec![post("p3", "three"), post("p1", "one"), post("p2", "two")];
        let model = model_with_labels(vec![0, 0, 1]);
        let docs = assemble_documents(&posts, &model, &TokenBudget::default()).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].text, "title p1\none\n\ntitle p3\nthree");
        assert_eq!(docs[1].text, "title p2\ntwo");
        assert_eq!(docs[0].member_count, 2);
    }

    #[test]
    fn all_noise_is_an_error() {
        let posts = vec![post("p1", "x")];
        let model = model_with_labels(vec![-1]);
        assert!(matches!(
            assemble_documents(&posts, &model, &TokenBudget::default()),
            Err(SummarizeError::EmptyClusterSet)
        ));
    }

    #[test]
    fn oversized_cluster_truncates_at_whole_posts() {
        let long = "word ".repeat(400); // ~500 tokens
        let posts = vec![post("pa", &long), post("pb", &long), post("pc", &long)];
        let model = model_with_labels(vec![0, 0, 0]);
        // Share = 1200 tokens: two long posts fit, the third does not.
        let budget = TokenBudget::with_limit(1200);
        let docs = assemble_documents(&posts, &model, &budget).unwrap();
        assert_eq!(docs[0].member_count, 2);
        assert!(docs[0].token_cost <= 1200);
        // Whole-post boundary: the text is exactly the first two documents.
        let expected = format!("{}\n\n{}", posts[0].content(), posts[1].content());
        assert_eq!(docs[0].text, expected);
    }

    #[test]
    fn single_oversized_post_is_an_error() {
        let long = "word ".repeat(400);
        let posts = vec![post("pa", &long)];
        let model = model_with_labels(vec![0]);
        let budget = TokenBudget::with_limit(100);
        assert!(matches!(
            assemble_documents(&posts, &model, &budget),
            Err(SummarizeError::OversizedPost { cluster: 0, .. })
        ));
    }

    #[test]
    fn documents_are_deterministic() {
        let posts = vec![post("a", "x"), post("b", "y"), post("c", "z")];
        let model = model_with_labels(vec![0, 1, 0]);
        let budget = TokenBudget::default();
        let once = assemble_documents(&posts, &model, &budget).unwrap();
        let twice = assemble_documents(&posts, &model, &budget).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn topic_prompt_counts_clusters() {
        let posts: Vec<Post> = (0..3).map(|i| post(&format!("p{i}"), "body")).collect();
        let model = model_with_labels(vec![0, 1, 2]);
        let docs = assemble_documents(&posts, &model, &TokenBudget::default()).unwrap();
        let prompt = build_topic_prompt(&docs).unwrap();
        assert!(prompt.contains("grouped into 3 (based on the outputs of DBSCAN) distinct clusters"));
        assert!(prompt.contains("Here are 3 clusters of posts: Cluster 0:\n"));
        assert!(prompt.contains("Cluster 2:\n"));

        let single = build_topic_prompt(&docs[..1]).unwrap();
        assert!(single.contains("Here are 1 clusters of posts:"));
    }

    #[test]
    fn prompt_cost_stays_within_budget_after_assembly() {
        let long = "word ".repeat(100);
        let posts: Vec<Post> = (0..40).map(|i| post(&format!("p{i:02}"), &long)).collect();
        let labels: Vec<i32> = (0..40).map(|i| i % 4).collect();
        let model = model_with_labels(labels);
        // Documents get the budget minus the template's own overhead.
        let budget = TokenBudget::with_limit(2000);
        let overhead = {
            let mut bindings = BTreeMap::new();
            bindings.insert("N".to_string(), "40".to_string());
            bindings.insert("Post Content".to_string(), String::new());
            count_tokens(&render(&PromptTemplate::topic_summary(), &bindings).unwrap())
        };
        let doc_budget = TokenBudget::with_limit(budget.limit - overhead - 40);
        let docs = assemble_documents(&posts, &model, &doc_budget).unwrap();
        let prompt = build_topic_prompt(&docs).unwrap();
        assert!(count_tokens(&prompt) <= budget.limit);
    }

    #[test]
    fn parses_well_formed_response() {
        let response = "Cluster 0: emotional turmoil in intimate relationships\nCluster 1: custody and legal battles\n";
        let topics = parse_topics(response, 2).unwrap();
        assert_eq!(topics.len(), 2);
        assert_eq!(topics[0].topic, "emotional turmoil in intimate relationships");
        assert_eq!(topics[1].cluster, 1);
    }

    #[test]
    fn skips_prose_preamble() {
        let response = "Here are the summaries you asked for:\n\nCluster 0: topic a\nCluster 1: topic b\nHope that helps!";
        let topics = parse_topics(response, 2).unwrap();
        assert_eq!(topics.len(), 2);
    }

    #[test]
    fn missing_cluster_is_count_mismatch() {
        let response: String = (0..20)
            .filter(|i| *i != 7)
            .map(|i| format!("Cluster {i}: topic {i}\n"))
            .collect();
        assert!(matches!(
            parse_topics(&response, 20),
            Err(SummarizeError::CountMismatch { found: 19, expected: 20 })
        ));
    }

    #[test]
    fn empty_topic_is_unparseable() {
        assert!(matches!(
            parse_topics("Cluster 0: \n", 1),
            Err(SummarizeError::UnparseableLine(_))
        ));
    }

    #[test]
    fn parse_is_bijective_over_ids() {
        let response = "Cluster 0: a\nCluster 0: duplicate\nCluster 1: b\n";
        assert!(matches!(
            parse_topics(response, 2),
            Err(SummarizeError::CountMismatch { .. })
        ));
    }

    #[test]
    fn topics_artifact_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topics.json");
        let topics = vec![
            TopicSummary { cluster: 1, topic: "b".into() },
            TopicSummary { cluster: 0, topic: "a".into() },
        ];
        write_topics(&topics, &path).unwrap();
        let loaded = read_topics(&path).unwrap();
        assert_eq!(loaded[0].cluster, 0);
        assert_eq!(loaded[1].cluster, 1);
    }
}

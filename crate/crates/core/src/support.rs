//! Support extraction: top-karma comment selection, the global support
//! pool, per-cluster support phrases, and the similarity mapping that ties
//! per-cluster supports back to pool entries per topic.

use crate::corpus::{Comment, Post};
use crate::embed::{cosine, embed_text, EmbedError, EmbeddingProvider};
use crate::gateway::{
    count_tokens, fit_to_budget, render, ChatRequest, Gateway, GatewayError, PromptTemplate,
    TokenBudget,
};
use crate::summarize::TopicSummary;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SupportError {
    #[error("cluster {0} has no comments")]
    EmptyCluster(usize),
    #[error("no support entries parsed from the pool response")]
    EmptyPool,
    #[error("unparseable line: {0:?}")]
    UnparseableLine(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One entry of the global support pool. Ids are 1-based; names are
/// unique case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportCategory {
    pub id: usize,
    pub name: String,
    pub description: String,
}

/// Raw support phrases extracted from one cluster's comments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSupports {
    pub cluster: usize,
    pub phrases: Vec<String>,
}

/// One row of the topic-support association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSupportRow {
    pub cluster: usize,
    pub topic: String,
    /// Pool ids, deduplicated and ascending.
    pub supports: Vec<usize>,
    /// Raw phrases that matched nothing above the threshold.
    pub unmapped: Vec<String>,
}

/// The bipartite cluster-to-support association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSupportMap {
    pub threshold: f64,
    pub rows: Vec<TopicSupportRow>,
}

/// Top `k` comments of a cluster: pooled across the cluster's posts,
/// karma descending, ties by ascending comment id.
pub fn top_comments<'a>(posts: &[&'a Post], k: usize) -> Vec<&'a Comment> {
    let mut comments: Vec<&Comment> = posts.iter().flat_map(|p| p.comments.iter()).collect();
    comments.sort_by(|x, y| y.karma.cmp(&x.karma).then(x.id.cmp(&y.id)));
    comments.truncate(k);
    comments
}

fn comment_block(comments: &[&Comment]) -> Vec<String> {
    comments.iter().map(|c| format!("- {}", c.body)).collect()
}

/// Render a support prompt, fitting `items` into what the budget leaves
/// after the template itself. Items are joined with newlines and never
/// split; the final prompt is re-checked against the budget.
fn render_fitted(
    template: &PromptTemplate,
    placeholder: &str,
    items: &[String],
    budget: &TokenBudget,
) -> Result<String, SupportError> {
    let overhead = {
        let mut bindings = BTreeMap::new();
        bindings.insert(placeholder.to_string(), String::new());
        budget.cost(&render(template, &bindings)?)
    };
    // One token covers each joining newline under the byte-quarter rule.
    let reserve = overhead + items.len();
    let item_budget = TokenBudget {
        limit: budget.limit.saturating_sub(reserve),
        counting_rule: budget.counting_rule,
    };
    let fitted = fit_to_budget(items, &item_budget)?;
    if fitted.len() < items.len() {
        log::warn!(
            "support prompt truncated to {} of {} comment items",
            fitted.len(),
            items.len()
        );
    }

    let mut bindings = BTreeMap::new();
    bindings.insert(placeholder.to_string(), fitted.join("\n"));
    let prompt = render(template, &bindings)?;
    debug_assert!(count_tokens(&prompt) <= budget.limit);
    Ok(prompt)
}

/// Parse one `Support <i>: <name> — <description>` line; description is
/// optional and the dash may be an em/en dash or a spaced hyphen.
fn parse_pool_line(line: &str) -> Option<Result<(String, String), SupportError>> {
    let trimmed = line.trim_start();
    let rest = trimmed.strip_prefix("Support ")?;
    let colon = rest.find(':')?;
    rest[..colon].trim().parse::<usize>().ok()?;
    let body = rest[colon + 1..].trim();
    if body.is_empty() {
        return Some(Err(SupportError::UnparseableLine(line.to_string())));
    }
    for separator in [" \u{2014} ", " \u{2013} ", " - "] {
        if let Some(pos) = body.find(separator) {
            let name = body[..pos].trim();
            let description = body[pos + separator.len()..].trim();
            if name.is_empty() {
                return Some(Err(SupportError::UnparseableLine(line.to_string())));
            }
            return Some(Ok((name.to_string(), description.to_string())));
        }
    }
    Some(Ok((body.to_string(), String::new())))
}

/// Build the global support pool from every cluster's top comments.
///
/// Comments go in cluster-major order under the budget; the response is
/// parsed as `Support <i>: <name> — <description>` lines and deduplicated
/// by case-folded name, ids assigned 1..m in response order.
pub fn extract_global_pool(
    per_cluster_comments: &[(usize, Vec<&Comment>)],
    gateway: &Gateway,
    model_id: &str,
) -> Result<Vec<SupportCategory>, SupportError> {
    let items: Vec<String> = per_cluster_comments
        .iter()
        .flat_map(|(_, comments)| comment_block(comments))
        .collect();
    let prompt = render_fitted(
        &PromptTemplate::support_global(),
        "Top-10 Comment Content across All Clusters",
        &items,
        &gateway.budget,
    )?;
    let response = gateway.complete(&ChatRequest::new(prompt, model_id))?;

    let mut pool: Vec<SupportCategory> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for line in response.text.lines() {
        let Some(parsed) = parse_pool_line(line) else {
            continue;
        };
        let (name, description) = parsed?;
        if !seen.insert(name.to_lowercase()) {
            log::warn!("duplicate support name {name:?} dropped from the pool");
            continue;
        }
        pool.push(SupportCategory {
            id: pool.len() + 1,
            name,
            description,
        });
    }
    if pool.is_empty() {
        return Err(SupportError::EmptyPool);
    }
    Ok(pool)
}

/// Parse a numbered-list line (`1. x`, `2) y`, or `- z`).
fn parse_phrase_line(line: &str) -> Option<String> {
    let trimmed = line.trim();
    let phrase = if let Some(rest) = trimmed.strip_prefix("- ") {
        rest
    } else {
        let digits = trimmed.chars().take_while(char::is_ascii_digit).count();
        if digits == 0 {
            return None;
        }
        let after = &trimmed[digits..];
        after.strip_prefix(". ").or_else(|| after.strip_prefix(") "))?
    };
    let phrase = phrase.trim();
    (!phrase.is_empty()).then(|| phrase.to_string())
}

/// Extract raw support phrases from one cluster's top comments.
pub fn extract_cluster_supports(
    cluster: usize,
    comments: &[&Comment],
    gateway: &Gateway,
    model_id: &str,
) -> Result<Vec<String>, SupportError> {
    if comments.is_empty() {
        return Err(SupportError::EmptyCluster(cluster));
    }
    let items = comment_block(comments);
    let prompt = render_fitted(
        &PromptTemplate::support_cluster(),
        "Top-10 Comment Content within Each Cluster",
        &items,
        &gateway.budget,
    )?;
    let response = gateway.complete(&ChatRequest::new(prompt, model_id))?;
    Ok(response.text.lines().filter_map(parse_phrase_line).collect())
}

fn pool_embedding_text(entry: &SupportCategory) -> String {
    if entry.description.is_empty() {
        entry.name.clone()
    } else {
        format!("{}\n{}", entry.name, entry.description)
    }
}

/// Map each cluster's raw phrases onto the pool by embedding cosine
/// similarity. A phrase joins the best-matching pool entry when the
/// similarity reaches `threshold`, otherwise it lands in `unmapped`.
pub fn map_supports(
    pool: &[SupportCategory],
    topics: &[TopicSummary],
    per_cluster: &[ClusterSupports],
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<TopicSupportMap, SupportError> {
    if pool.is_empty() {
        return Err(SupportError::EmptyPool);
    }
    let pool_vectors = pool
        .iter()
        .map(|entry| embed_text(&pool_embedding_text(entry), provider))
        .collect::<Result<Vec<_>, _>>()?;
    let topic_by_cluster: BTreeMap<usize, &str> =
        topics.iter().map(|t| (t.cluster, t.topic.as_str())).collect();

    let mut rows = Vec::with_capacity(per_cluster.len());
    for supports in per_cluster {
        let mut matched: BTreeSet<usize> = BTreeSet::new();
        let mut unmapped = Vec::new();
        for phrase in &supports.phrases {
            let vector = embed_text(phrase, provider)?;
            let best = pool
                .iter()
                .zip(&pool_vectors)
                .map(|(entry, pv)| (entry.id, cosine(&vector, pv)))
                .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
            match best {
                Some((id, similarity)) if similarity >= threshold => {
                    matched.insert(id);
                }
                _ => unmapped.push(phrase.clone()),
            }
        }
        rows.push(TopicSupportRow {
            cluster: supports.cluster,
            topic: topic_by_cluster
                .get(&supports.cluster)
                .map_or_else(String::new, |t| (*t).to_string()),
            supports: matched.into_iter().collect(),
            unmapped,
        });
    }

    Ok(TopicSupportMap { threshold, rows })
}

// ---------------------------------------------------------------------------
// Stage artifacts
// ---------------------------------------------------------------------------

/// Write `supports.json`: the pool entries.
pub fn write_pool(pool: &[SupportCategory], path: &Path) -> Result<(), SupportError> {
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), pool).map_err(std::io::Error::other)?;
    Ok(())
}

pub fn read_pool(path: &Path) -> Result<Vec<SupportCategory>, SupportError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text).map_err(std::io::Error::other)?)
}

/// Write `mapping.json`: per-cluster topic, support ids, and unmapped
/// phrases.
pub fn write_mapping(map: &TopicSupportMap, path: &Path) -> Result<(), SupportError> {
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), map).map_err(std::io::Error::other)?;
    Ok(())
}

pub fn read_mapping(path: &Path) -> Result<TopicSupportMap, SupportError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text).map_err(std::io::Error::other)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingProvider;
    use crate::gateway::MockBackend;
    use proptest::prelude::*;

    fn comment(id: &str, karma: i64) -> Comment {
        Comment {
            id: id.to_string(),
            body: format!("comment {id}"),
            karma,
            created_utc: 0,
        }
    }

    fn post_with_comments(id: &str, comments: Vec<Comment>) -> Post {
        Post {
            id: id.to_string(),
            subreddit: "s".into(),
            title: format!("t {id}"),
            body: String::new(),
            created_utc: 0,
            karma: 0,
            comments,
            label: None,
        }
    }

    #[test]
    fn top_comments_sorts_by_karma_then_id() {
        let p1 = post_with_comments("p1", vec![comment("c1", 5), comment("c2", 3)]);
        let p2 = post_with_comments("p2", vec![comment("c3", 9)]);
        let top = top_comments(&[&p1, &p2], 10);
        let ids: Vec<&str> = top.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["c3", "c1", "c2"]);
    }

    #[test]
    fn top_comments_caps_at_k() {
        let comments: Vec<Comment> = (0..25).map(|i| comment(&format!("c{i:02}"), i)).collect();
        let p = post_with_comments("p", comments);
        assert_eq!(top_comments(&[&p], 10).len(), 10);
    }

    #[test]
    fn top_comments_breaks_karma_ties_by_id() {
        let p = post_with_comments("p", vec![comment("b", 7), comment("a", 7)]);
        let top = top_comments(&[&p], 10);
        assert_eq!(top[0].id, "a");
        assert_eq!(top[1].id, "b");
    }

    fn scripted_gateway_for(template: &PromptTemplate, placeholder: &str, items: &[String], response: &str) -> Gateway {
        let mut bindings = BTreeMap::new();
        bindings.insert(placeholder.to_string(), items.join("\n"));
        let prompt = render(template, &bindings).unwrap();
        Gateway::new(Box::new(MockBackend::new().script(&prompt, response)))
    }

    #[test]
    fn global_pool_parses_scripted_entries() {
        let c1 = comment("c1", 5);
        let c2 = comment("c2", 4);
        let comments: Vec<&Comment> = vec![&c1, &c2];
        let items = comment_block(&comments);
        let gateway = scripted_gateway_for(
            &PromptTemplate::support_global(),
            "Top-10 Comment Content across All Clusters",
            &items,
            "Support 1: prioritize safety and healing \u{2014} Encourage victims to focus on wellbeing.\n\
             Support 2: seek professional support \u{2014} Therapy and counseling resources.\n\
             Support 3: build a support system - Friends and family networks.\n",
        );
        let pool = extract_global_pool(&[(0, comments)], &gateway, "m").unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(pool[0].id, 1);
        assert_eq!(pool[0].name, "prioritize safety and healing");
        assert_eq!(pool[2].description, "Friends and family networks.");
    }

    #[test]
    fn global_pool_deduplicates_case_folded_names() {
        let c1 = comment("c1", 5);
        let comments: Vec<&Comment> = vec![&c1];
        let items = comment_block(&comments);
        let gateway = scripted_gateway_for(
            &PromptTemplate::support_global(),
            "Top-10 Comment Content across All Clusters",
            &items,
            "Support 1: Listen Without Judgment\nSupport 2: listen without judgment\n",
        );
        let pool = extract_global_pool(&[(0, comments)], &gateway, "m").unwrap();
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn empty_pool_response_is_an_error() {
        let c1 = comment("c1", 5);
        let comments: Vec<&Comment> = vec![&c1];
        let items = comment_block(&comments);
        let gateway = scripted_gateway_for(
            &PromptTemplate::support_global(),
            "Top-10 Comment Content across All Clusters",
            &items,
            "I could not find any supports.",
        );
        assert!(matches!(
            extract_global_pool(&[(0, comments)], &gateway, "m"),
            Err(SupportError::EmptyPool)
        ));
    }

    #[test]
    fn cluster_supports_parse_numbered_list() {
        let c1 = comment("c1", 5);
        let comments: Vec<&Comment> = vec![&c1];
        let items = comment_block(&comments);
        let gateway = scripted_gateway_for(
            &PromptTemplate::support_cluster(),
            "Top-10 Comment Content within Each Cluster",
            &items,
            "Sure.\n1. prioritize safety and healing\n2) trust your instincts\n- set boundaries\n",
        );
        let phrases = extract_cluster_supports(0, &comments, &gateway, "m").unwrap();
        assert_eq!(phrases, ["prioritize safety and healing", "trust your instincts", "set boundaries"]);
    }

    #[test]
    fn empty_comment_cluster_is_guarded() {
        let gateway = Gateway::new(Box::new(MockBackend::new()));
        assert!(matches!(
            extract_cluster_supports(3, &[], &gateway, "m"),
            Err(SupportError::EmptyCluster(3))
        ));
    }

    fn pool_of(names: &[&str]) -> Vec<SupportCategory> {
        names
            .iter()
            .enumerate()
            .map(|(i, name)| SupportCategory {
                id: i + 1,
                name: (*name).to_string(),
                description: String::new(),
            })
            .collect()
    }

    #[test]
    fn identical_phrase_maps_with_cosine_one() {
        let pool = pool_of(&["prioritize safety and healing", "seek professional support"]);
        let topics = vec![TopicSummary { cluster: 0, topic: "topic".into() }];
        let per_cluster = vec![ClusterSupports {
            cluster: 0,
            phrases: vec!["prioritize safety and healing".to_string()],
        }];
        let map = map_supports(&pool, &topics, &per_cluster, &HashingProvider, 0.6).unwrap();
        assert_eq!(map.rows[0].supports, vec![1]);
        assert!(map.rows[0].unmapped.is_empty());
    }

    #[test]
    fn disjoint_vocabulary_phrase_stays_unmapped() {
        let pool = pool_of(&["alpha beta gamma", "delta epsilon zeta"]);
        let topics = vec![TopicSummary { cluster: 0, topic: "t".into() }];
        let per_cluster = vec![ClusterSupports {
            cluster: 0,
            phrases: vec!["entirely different words here".to_string()],
        }];
        let map = map_supports(&pool, &topics, &per_cluster, &HashingProvider, 0.6).unwrap();
        assert!(map.rows[0].supports.is_empty());
        assert_eq!(map.rows[0].unmapped.len(), 1);
    }

    #[test]
    fn duplicate_matches_collapse_to_a_set() {
        let pool = pool_of(&["stay safe today"]);
        let topics = vec![TopicSummary { cluster: 0, topic: "t".into() }];
        let per_cluster = vec![ClusterSupports {
            cluster: 0,
            phrases: vec!["stay safe today".to_string(), "stay safe today".to_string()],
        }];
        let map = map_supports(&pool, &topics, &per_cluster, &HashingProvider, 0.6).unwrap();
        assert_eq!(map.rows[0].supports, vec![1]);
    }

    #[test]
    fn mapping_artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pool_of(&["a", "b"]);
        write_pool(&pool, &dir.path().join("supports.json")).unwrap();
        assert_eq!(read_pool(&dir.path().join("supports.json")).unwrap(), pool);

        let map = TopicSupportMap {
            threshold: 0.6,
            rows: vec![TopicSupportRow {
                cluster: 0,
                topic: "t".into(),
                supports: vec![1],
                unmapped: vec!["x".into()],
            }],
        };
        write_mapping(&map, &dir.path().join("mapping.json")).unwrap();
        assert_eq!(read_mapping(&dir.path().join("mapping.json")).unwrap(), map);
    }

    proptest! {
        // Selection is the true top-min(k, n) under (karma desc, id asc)
        // and always a subset of the input.
        #[test]
        fn top_comments_matches_sort_oracle(karmas in proptest::collection::vec(-50i64..50, 0..40)) {
            let comments: Vec<Comment> = karmas.iter().enumerate()
                .map(|(i, k)| comment(&format!("c{i:02}"), *k))
                .collect();
            let p = post_with_comments("p", comments.clone());
            let top = top_comments(&[&p], 10);

            let mut oracle: Vec<&Comment> = comments.iter().collect();
            oracle.sort_by(|x, y| y.karma.cmp(&x.karma).then(x.id.cmp(&y.id)));
            oracle.truncate(10);
            let got: Vec<&str> = top.iter().map(|c| c.id.as_str()).collect();
            let want: Vec<&str> = oracle.iter().map(|c| c.id.as_str()).collect();
            prop_assert_eq!(got, want);
        }

        // Referential integrity: mapped ids exist in the pool; mapped
        // phrases + unmapped phrases account for every input phrase.
        #[test]
        fn mapping_referential_integrity(phrases in proptest::collection::vec("[a-z]{3,8}( [a-z]{3,8}){0,3}", 1..8)) {
            let pool = pool_of(&["safety first plan", "professional help line"]);
            let topics = vec![TopicSummary { cluster: 0, topic: "t".into() }];
            let per_cluster = vec![ClusterSupports { cluster: 0, phrases: phrases.clone() }];
            let map = map_supports(&pool, &topics, &per_cluster, &HashingProvider, 0.6).unwrap();
            let row = &map.rows[0];
            prop_assert!(row.supports.iter().all(|id| pool.iter().any(|p| p.id == *id)));
            let mapped_count = phrases.len() - row.unmapped.len();
            prop_assert!(row.supports.len() <= mapped_count.max(phrases.len()));
            prop_assert!(row.unmapped.iter().all(|u| phrases.contains(u)));
        }
    }
}

//! Corpus loading, validation, filtering, and partitioning.
//!
//! Owns all dataset bookkeeping: engagement filtering, the human-labeled
//! subset vs. the unlabeled remainder, and the merge of model predictions
//! back into a fully labeled corpus. All functions are pure over their
//! inputs and safe for concurrent read-only use.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Subreddit names that ship as the default allowlist. Advisory only: the
/// loader accepts any subreddit string and never enforces this list.
pub const DEFAULT_SUBREDDITS: [&str; 12] = [
    "domesticviolence",
    "relationships",
    "AbuseInterrupted",
    "abusiverelationships",
    "traumatoolbox",
    "familycourt",
    "abusiveparents",
    "raisedbynarcissists",
    "abusivesiblings",
    "insaneparents",
    "relationship_advice",
    "emotionalabuse",
];

/// Binary disclosure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DisclosureValue {
    SelfDisclosure,
    NonSelfDisclosure,
}

impl DisclosureValue {
    pub fn as_yes_no(&self) -> &'static str {
        match self {
            DisclosureValue::SelfDisclosure => "yes",
            DisclosureValue::NonSelfDisclosure => "no",
        }
    }

    pub fn from_yes_no(s: &str) -> Option<Self> {
        match s {
            "yes" => Some(DisclosureValue::SelfDisclosure),
            "no" => Some(DisclosureValue::NonSelfDisclosure),
            _ => None,
        }
    }
}

/// Where a label came from. Merging never overwrites `Human` with `Model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelSource {
    Human,
    Model,
}

/// A disclosure label together with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosureLabel {
    pub value: DisclosureValue,
    pub source: LabelSource,
}

impl DisclosureLabel {
    pub fn human(value: DisclosureValue) -> Self {
        DisclosureLabel {
            value,
            source: LabelSource::Human,
        }
    }

    pub fn model(value: DisclosureValue) -> Self {
        DisclosureLabel {
            value,
            source: LabelSource::Model,
        }
    }
}

/// One comment on a post.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comment {
    pub id: String,
    pub body: String,
    /// Platform net vote score; may be negative. Missing in an export maps
    /// to 0, the platform's neutral score.
    pub karma: i64,
    pub created_utc: i64,
}

/// One social-media submission with its comment list.
#[derive(Debug, Clone, PartialEq)]
pub struct Post {
    pub id: String,
    pub subreddit: String,
    pub title: String,
    pub body: String,
    pub created_utc: i64,
    pub karma: i64,
    pub comments: Vec<Comment>,
    pub label: Option<DisclosureLabel>,
}

impl Post {
    /// The text a model sees for this post: title, a single newline, then
    /// body. When either side is blank after trimming, the other is used
    /// alone with no dangling newline.
    pub fn content(&self) -> String {
        let title_blank = self.title.trim().is_empty();
        let body_blank = self.body.trim().is_empty();
        match (title_blank, body_blank) {
            (false, false) => format!("{}\n{}", self.title, self.body),
            (false, true) => self.title.clone(),
            (true, false) => self.body.clone(),
            // Rejected at load time; unreachable for loaded corpora.
            (true, true) => String::new(),
        }
    }
}

/// The labeled/unlabeled split of a corpus.
///
/// `labeled` holds exactly the posts with human annotations; `unlabeled`
/// holds the remainder, in their original order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPartition {
    pub labeled: Vec<Post>,
    pub unlabeled: Vec<Post>,
}

impl CorpusPartition {
    pub fn total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }
}

/// Per-class label totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTally {
    pub self_disclosure: usize,
    pub non_self_disclosure: usize,
}

impl LabelTally {
    pub fn count<'a>(posts: impl IntoIterator<Item = &'a Post>) -> Self {
        let mut tally = LabelTally::default();
        for post in posts {
            match post.label.map(|l| l.value) {
                Some(DisclosureValue::SelfDisclosure) => tally.self_disclosure += 1,
                Some(DisclosureValue::NonSelfDisclosure) => tally.non_self_disclosure += 1,
                None => {}
            }
        }
        tally
    }

    pub fn is_balanced(&self) -> bool {
        self.self_disclosure == self.non_self_disclosure
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate post id {0:?}")]
    DuplicateId(String),
    #[error("unknown post id {0:?}")]
    UnknownId(String),
    #[error("predictions missing for {0} unlabeled posts (first missing id {1:?})")]
    CoverageGap(usize, String),
    #[error("label source violation for post {id:?}: {reason}")]
    SourceViolation { id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// JSONL wire records
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommentRecord {
    id: String,
    body: String,
    #[serde(default)]
    karma: i64,
    created_utc: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PostRecord {
    id: String,
    subreddit: String,
    title: String,
    body: String,
    created_utc: i64,
    #[serde(default)]
    karma: i64,
    comments: Vec<CommentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    /// Provenance of `label`; absent means human. Only the pipeline's own
    /// artifacts ever carry "model" here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_source: Option<String>,
}

impl PostRecord {
    fn into_post(self, line: usize) -> Result<Post, CorpusError> {
        let malformed = |reason: String| CorpusError::MalformedRecord { line, reason };

        if self.id.is_empty() {
            return Err(malformed("post id is empty".into()));
        }
        if self.title.trim().is_empty() && self.body.trim().is_empty() {
            return Err(malformed(format!(
                "post {:?} has no text: title and body are both blank",
                self.id
            )));
        }

        let label = match (self.label.as_deref(), self.label_source.as_deref()) {
            (None, _) => None,
            (Some(value), source) => {
                let value = DisclosureValue::from_yes_no(value).ok_or_else(|| {
                    malformed(format!("label must be \"yes\" or \"no\", got {value:?}"))
                })?;
                let source = match source {
                    None | Some("human") => LabelSource::Human,
                    Some("model") => LabelSource::Model,
                    Some(other) => {
                        return Err(malformed(format!(
                            "label_source must be \"human\" or \"model\", got {other:?}"
                        )))
                    }
                };
                Some(DisclosureLabel { value, source })
            }
        };

        let mut comments = Vec::with_capacity(self.comments.len());
        for c in self.comments {
            if c.id.is_empty() {
                return Err(malformed(format!("comment on post {:?} has empty id", self.id)));
            }
            if c.body.trim().is_empty() {
                return Err(malformed(format!(
                    "comment {:?} on post {:?} has blank body",
                    c.id, self.id
                )));
            }
            comments.push(Comment {
                id: c.id,
                body: c.body,
                karma: c.karma,
                created_utc: c.created_utc,
            });
        }

        Ok(Post {
            id: self.id,
            subreddit: self.subreddit,
            title: self.title,
            body: self.body,
            created_utc: self.created_utc,
            karma: self.karma,
            comments,
            label,
        })
    }

    fn from_post(post: &Post) -> Self {
        PostRecord {
            id: post.id.clone(),
            subreddit: post.subreddit.clone(),
            title: post.title.clone(),
            body: post.body.clone(),
            created_utc: post.created_utc,
            karma: post.karma,
            comments: post
                .comments
                .iter()
                .map(|c| CommentRecord {
                    id: c.id.clone(),
                    body: c.body.clone(),
                    karma: c.karma,
                    created_utc: c.created_utc,
                })
                .collect(),
            label: post.label.map(|l| l.value.as_yes_no().to_string()),
            // Omitted for human labels so plain corpora stay on the
            // documented external schema.
            label_source: match post.label {
                Some(DisclosureLabel {
                    source: LabelSource::Model,
                    ..
                }) => Some("model".to_string()),
                _ => None,
            },
        }
    }
}

/// Load a JSONL corpus: one post object per line, UTF-8, LF terminated.
///
/// Input order is preserved. Blank lines are skipped. Duplicate ids and
/// schema violations are hard errors; posts with no text are rejected here
/// because no downstream stage can use them.
pub fn load_posts(path: &Path) -> Result<Vec<Post>, CorpusError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut posts = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let record: PostRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        let post = record.into_post(line_no)?;
        if !seen.insert(post.id.clone()) {
            return Err(CorpusError::DuplicateId(post.id));
        }
        posts.push(post);
    }
    Ok(posts)
}

/// Inverse of [`load_posts`]: one JSON object per line, LF terminated.
pub fn write_posts(posts: &[Post], path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    for post in posts {
        let record = PostRecord::from_post(post);
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Keep only posts that received at least one comment.
///
/// Returns the retained posts (order preserved) and the number removed.
pub fn filter_engaged(posts: Vec<Post>) -> (Vec<Post>, usize) {
    let before = posts.len();
    let kept: Vec<Post> = posts.into_iter().filter(|p| !p.comments.is_empty()).collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Split a corpus into the human-labeled subset and the unlabeled remainder.
///
/// Every id in `human_labels` must exist in `posts` and carry a `Human`
/// source. A class imbalance in the labeled subset is logged, not fatal.
pub fn partition(
    posts: Vec<Post>,
    human_labels: &BTreeMap<String, DisclosureLabel>,
) -> Result<CorpusPartition, CorpusError> {
    let known: HashSet<&str> = posts.iter().map(|p| p.id.as_str()).collect();
    for (id, label) in human_labels {
        if !known.contains(id.as_str()) {
            return Err(CorpusError::UnknownId(id.clone()));
        }
        if label.source != LabelSource::Human {
            return Err(CorpusError::SourceViolation {
                id: id.clone(),
                reason: "partition labels must have source = Human".into(),
            });
        }
    }

    let mut labeled = Vec::with_capacity(human_labels.len());
    let mut unlabeled = Vec::with_capacity(posts.len().saturating_sub(human_labels.len()));
    for mut post in posts {
        if let Some(label) = human_labels.get(&post.id) {
            post.label = Some(*label);
            labeled.push(post);
        } else {
            post.label = None;
            unlabeled.push(post);
        }
    }

    let tally = LabelTally::count(&labeled);
    if !labeled.is_empty() && !tally.is_balanced() {
        log::warn!(
            "labeled subset is imbalanced: {} self-disclosure vs {} non-self-disclosure",
            tally.self_disclosure,
            tally.non_self_disclosure
        );
    }

    Ok(CorpusPartition { labeled, unlabeled })
}

/// Merge model predictions over the unlabeled posts into a fully labeled
/// corpus. Human labels are never touched.
///
/// `predictions` must cover exactly the unlabeled ids and carry `Model`
/// source; predictions aimed at human-labeled posts or unknown ids are
/// rejected.
pub fn merge_annotations(
    partition: CorpusPartition,
    predictions: &HashMap<String, DisclosureLabel>,
) -> Result<Vec<Post>, CorpusError> {
    let human_ids: HashSet<&str> = partition.labeled.iter().map(|p| p.id.as_str()).collect();
    let unlabeled_ids: HashSet<&str> = partition.unlabeled.iter().map(|p| p.id.as_str()).collect();

    for (id, label) in predictions {
        if human_ids.contains(id.as_str()) {
            return Err(CorpusError::SourceViolation {
                id: id.clone(),
                reason: "prediction targets a human-labeled post".into(),
            });
        }
        if !unlabeled_ids.contains(id.as_str()) {
            return Err(CorpusError::UnknownId(id.clone()));
        }
        if label.source != LabelSource::Model {
            return Err(CorpusError::SourceViolation {
                id: id.clone(),
                reason: "prediction labels must have source = Model".into(),
            });
        }
    }

    let mut missing: Vec<&str> = unlabeled_ids
        .iter()
        .filter(|id| !predictions.contains_key(**id))
        .copied()
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        return Err(CorpusError::CoverageGap(missing.len(), missing[0].to_string()));
    }

    let CorpusPartition { labeled, unlabeled } = partition;
    let mut merged = labeled;
    merged.extend(unlabeled.into_iter().map(|mut post| {
        post.label = Some(predictions[&post.id]);
        post
    }));
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn post(id: &str, n_comments: usize) -> Post {
        Post {
            id: id.to_string(),
            subreddit: "domesticviolence".to_string(),
            title: format!("title {id}"),
            body: format!("body {id}"),
            created_utc: 1_700_000_000,
            karma: 3,
            comments: (0..n_comments)
                .map(|i| Comment {
                    id: format!("{id}-c{i}"),
                    body: format!("comment {i}"),
                    karma: i as i64,
                    created_utc: 1_700_000_100 + i as i64,
                })
                .collect(),
            label: None,
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_empty_file_gives_empty_corpus() {
        let f = write_lines(&[]);
        assert!(load_posts(f.path()).unwrap().is_empty());
    }

    #[test]
    fn load_one_record_with_two_comments() {
        let f = write_lines(&[concat!(
            r#"{"id":"p1","subreddit":"relationships","title":"t","body":"b","created_utc":1,"karma":2,"#,
            r#""comments":[{"id":"c1","body":"x","karma":1,"created_utc":2},{"id":"c2","body":"y","karma":0,"created_utc":3}]}"#
        )]);
        let posts = load_posts(f.path()).unwrap();
        assert_eq!(posts.len(), 1);
        assert_eq!(posts[0].comments.len(), 2);
        assert!(posts[0].label.is_none());
    }

    #[test]
    fn load_rejects_missing_title() {
        let f = write_lines(&[
            r#"{"id":"p1","subreddit":"s","body":"b","created_utc":1,"karma":0,"comments":[]}"#,
        ]);
        match load_posts(f.path()) {
            Err(CorpusError::MalformedRecord { line: 1, .. }) => {}
            other => panic!("expected MalformedRecord(1), got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let rec = r#"{"id":"p1","subreddit":"s","title":"t","body":"b","created_utc":1,"karma":0,"comments":[]}"#;
        let f = write_lines(&[rec, rec]);
        match load_posts(f.path()) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "p1"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_blank_text() {
        let f = write_lines(&[
            r#"{"id":"p1","subreddit":"s","title":"  ","body":"\t","created_utc":1,"karma":0,"comments":[]}"#,
        ]);
        assert!(matches!(
            load_posts(f.path()),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn missing_karma_defaults_to_zero() {
        let f = write_lines(&[concat!(
            r#"{"id":"p1","subreddit":"s","title":"t","body":"b","created_utc":1,"#,
            r#""comments":[{"id":"c1","body":"x","created_utc":2}]}"#
        )]);
        let posts = load_posts(f.path()).unwrap();
        assert_eq!(posts[0].karma, 0);
        assert_eq!(posts[0].comments[0].karma, 0);
    }

    #[test]
    fn filter_engaged_keeps_commented_posts() {
        let posts = vec![post("a", 0), post("b", 1), post("c", 3), post("d", 0)];
        let (kept, removed) = filter_engaged(posts);
        assert_eq!(kept.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(removed, 2);
    }

    #[test]
    fn filter_engaged_is_identity_on_engaged_corpus() {
        let posts = vec![post("a", 1), post("b", 2)];
        let (kept, removed) = filter_engaged(posts.clone());
        assert_eq!(kept, posts);
        assert_eq!(removed, 0);
    }

    #[test]
    fn partition_splits_and_counts() {
        let posts = vec![post("a", 1), post("b", 1), post("c", 1)];
        let mut labels = BTreeMap::new();
        labels.insert("b".to_string(), DisclosureLabel::human(DisclosureValue::SelfDisclosure));
        let part = partition(posts, &labels).unwrap();
        assert_eq!(part.labeled.len(), 1);
        assert_eq!(part.unlabeled.len(), 2);
        assert_eq!(part.labeled[0].id, "b");
        assert_eq!(
            part.labeled[0].label,
            Some(DisclosureLabel::human(DisclosureValue::SelfDisclosure))
        );
    }

    #[test]
    fn partition_with_no_labels_leaves_all_unlabeled() {
        let posts = vec![post("a", 1), post("b", 1)];
        let part = partition(posts, &BTreeMap::new()).unwrap();
        assert!(part.labeled.is_empty());
        assert_eq!(part.unlabeled.len(), 2);
    }

    #[test]
    fn partition_rejects_unknown_id() {
        let posts = vec![post("a", 1)];
        let mut labels = BTreeMap::new();
        labels.insert("zz".to_string(), DisclosureLabel::human(DisclosureValue::SelfDisclosure));
        assert!(matches!(partition(posts, &labels), Err(CorpusError::UnknownId(id)) if id == "zz"));
    }

    #[test]
    fn merge_covers_unlabeled_and_keeps_human_labels() {
        let posts = vec![post("a", 1), post("b", 1), post("c", 1)];
        let mut labels = BTreeMap::new();
        labels.insert("a".to_string(), DisclosureLabel::human(DisclosureValue::SelfDisclosure));
        let part = partition(posts, &labels).unwrap();

        let mut predictions = HashMap::new();
        predictions.insert("b".to_string(), DisclosureLabel::model(DisclosureValue::SelfDisclosure));
        predictions.insert("c".to_string(), DisclosureLabel::model(DisclosureValue::NonSelfDisclosure));
        let merged = merge_annotations(part, &predictions).unwrap();

        assert_eq!(merged.len(), 3);
        assert!(merged.iter().all(|p| p.label.is_some()));
        let tally = LabelTally::count(&merged);
        assert_eq!(tally.self_disclosure, 2);
        assert_eq!(tally.non_self_disclosure, 1);
        let human = merged.iter().find(|p| p.id == "a").unwrap();
        assert_eq!(human.label.unwrap().source, LabelSource::Human);
    }

    #[test]
    fn merge_rejects_prediction_for_human_labeled_post() {
        let posts = vec![post("a", 1), post("b", 1)];
        let mut labels = BTreeMap::new();
        labels.insert("a".to_string(), DisclosureLabel::human(DisclosureValue::SelfDisclosure));
        let part = partition(posts, &labels).unwrap();

        let mut predictions = HashMap::new();
        predictions.insert("a".to_string(), DisclosureLabel::model(DisclosureValue::NonSelfDisclosure));
        predictions.insert("b".to_string(), DisclosureLabel::model(DisclosureValue::NonSelfDisclosure));
        assert!(matches!(
            merge_annotations(part, &predictions),
            Err(CorpusError::SourceViolation { id, .. }) if id == "a"
        ));
    }

    #[test]
    fn merge_reports_coverage_gap() {
        let posts = vec![post("a", 1), post("b", 1)];
        let part = partition(posts, &BTreeMap::new()).unwrap();
        let mut predictions = HashMap::new();
        predictions.insert("a".to_string(), DisclosureLabel::model(DisclosureValue::SelfDisclosure));
        assert!(matches!(
            merge_annotations(part, &predictions),
            Err(CorpusError::CoverageGap(1, id)) if id == "b"
        ));
    }

    #[test]
    fn merge_of_empty_unlabeled_set_is_identity() {
        let posts = vec![post("a", 1)];
        let mut labels = BTreeMap::new();
        labels.insert("a".to_string(), DisclosureLabel::human(DisclosureValue::SelfDisclosure));
        let part = partition(posts, &labels).unwrap();
        let merged = merge_annotations(part.clone(), &HashMap::new()).unwrap();
        assert_eq!(merged, part.labeled);
    }

    proptest! {
        // Conservation: every partition preserves the total post count.
        #[test]
        fn partition_conserves_posts(n in 0usize..40, labeled_mask in proptest::collection::vec(any::<bool>(), 0..40)) {
            let posts: Vec<Post> = (0..n).map(|i| post(&format!("p{i}"), 1)).collect();
            let mut labels = BTreeMap::new();
            for (i, flag) in labeled_mask.iter().enumerate().take(n) {
                if *flag {
                    let value = if i % 2 == 0 { DisclosureValue::SelfDisclosure } else { DisclosureValue::NonSelfDisclosure };
                    labels.insert(format!("p{i}"), DisclosureLabel::human(value));
                }
            }
            let part = partition(posts, &labels).unwrap();
            prop_assert_eq!(part.total(), n);
            prop_assert_eq!(part.labeled.len(), labels.len());
        }

        // Merge arithmetic: per-class totals add up across sources.
        #[test]
        fn merge_totals_are_sums(n in 1usize..30, human_mask in proptest::collection::vec(any::<bool>(), 30), values in proptest::collection::vec(any::<bool>(), 30)) {
            let posts: Vec<Post> = (0..n).map(|i| post(&format!("p{i}"), 1)).collect();
            let mut labels = BTreeMap::new();
            for i in 0..n {
                if human_mask[i] {
                    let value = if values[i] { DisclosureValue::SelfDisclosure } else { DisclosureValue::NonSelfDisclosure };
                    labels.insert(format!("p{i}"), DisclosureLabel::human(value));
                }
            }
            let part = partition(posts, &labels).unwrap();
            let human_tally = LabelTally::count(&part.labeled);

            let mut predictions = HashMap::new();
            for p in &part.unlabeled {
                let i: usize = p.id[1..].parse().unwrap();
                let value = if values[(i + 7) % 30] { DisclosureValue::SelfDisclosure } else { DisclosureValue::NonSelfDisclosure };
                predictions.insert(p.id.clone(), DisclosureLabel::model(value));
            }
            let model_tally = LabelTally::count(
                part.unlabeled.iter().map(|p| {
                    let mut q = p.clone();
                    q.label = Some(predictions[&p.id]);
                    q
                }).collect::<Vec<_>>().iter(),
            );

            let merged = merge_annotations(part, &predictions).unwrap();
            let total = LabelTally::count(&merged);
            prop_assert_eq!(total.self_disclosure, human_tally.self_disclosure + model_tally.self_disclosure);
            prop_assert_eq!(total.non_self_disclosure, human_tally.non_self_disclosure + model_tally.non_self_disclosure);
        }

        // Idempotence of the engagement filter.
        #[test]
        fn filter_engaged_idempotent(counts in proptest::collection::vec(0usize..4, 0..30)) {
            let posts: Vec<Post> = counts.iter().enumerate().map(|(i, c)| post(&format!("p{i}"), *c)).collect();
            let (once, _) = filter_engaged(posts);
            let (twice, removed) = filter_engaged(once.clone());
            prop_assert_eq!(once, twice);
            prop_assert_eq!(removed, 0);
        }

        // Round-trip through the JSONL serializer is exact on all fields.
        #[test]
        fn jsonl_round_trip(n in 0usize..12, label_kind in proptest::collection::vec(0u8..3, 12)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("posts.jsonl");
            let posts: Vec<Post> = (0..n).map(|i| {
                let mut p = post(&format!("p{i}"), i % 3);
                p.title = format!("tïtle {i} \"quoted\""); // exercise non-ASCII + escapes
                p.karma = i as i64 - 4;
                p.label = match label_kind[i] {
                    0 => None,
                    1 => Some(DisclosureLabel::human(DisclosureValue::SelfDisclosure)),
                    _ => Some(DisclosureLabel::model(DisclosureValue::NonSelfDisclosure)),
                };
                p
            }).collect();
            write_posts(&posts, &path).unwrap();
            let loaded = load_posts(&path).unwrap();
            prop_assert_eq!(loaded, posts);
        }
    }
}

//! Self-disclosure detection: prompt construction, verdict parsing, and
//! corpus-scale classification through a chat backend.

use crate::corpus::{DisclosureLabel, DisclosureValue, Post};
use crate::gateway::{render, ChatRequest, Gateway, GatewayError, PromptTemplate, TemplateName};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("ambiguous verdict: {0:?}")]
    AmbiguousVerdict(String),
    #[error("post {id}: {source}")]
    Backend {
        id: String,
        #[source]
        source: GatewayError,
    },
    #[error("post {0} already carries a label; pass allow_labeled to reclassify")]
    AlreadyLabeled(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Accepted affirmative/negative surface forms, matched after
/// normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictLexicon {
    pub affirmative: Vec<String>,
    pub negative: Vec<String>,
}

impl Default for VerdictLexicon {
    fn default() -> Self {
        VerdictLexicon {
            affirmative: vec!["yes".to_string()],
            negative: vec!["no".to_string()],
        }
    }
}

/// Configuration for the prompted classifier: the backend model id, the
/// detection template, and the verdict lexicon.
pub struct DetectorConfig {
    pub model_id: String,
    pub template: PromptTemplate,
    pub lexicon: VerdictLexicon,
    /// Permit classifying posts that already carry a label.
    pub allow_labeled: bool,
}

impl DetectorConfig {
    pub fn new(model_id: &str) -> Self {
        DetectorConfig {
            model_id: model_id.to_string(),
            template: PromptTemplate::detection(),
            lexicon: VerdictLexicon::default(),
            allow_labeled: false,
        }
    }
}

/// A parsed model verdict. Only [`parse_verdict`] constructs these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub label: DisclosureLabel,
    pub raw_text: String,
}

/// Render the detection prompt for one post: `[Post Content]` becomes
/// title, a single newline, then body (title alone when the body is blank).
pub fn build_detection_prompt(template: &PromptTemplate, post: &Post) -> String {
    debug_assert_eq!(template.name, TemplateName::Detection);
    let mut bindings = BTreeMap::new();
    bindings.insert("Post Content".to_string(), post.content());
    render(template, &bindings).expect("detection template binds a single placeholder")
}

/// Map raw model output to a verdict.
///
/// Matching is case-insensitive after trimming whitespace, surrounding
/// quotes, and terminal punctuation; anything longer than 8 characters
/// after the whitespace trim is ambiguous outright.
pub fn parse_verdict(raw: &str, lexicon: &VerdictLexicon) -> Result<Verdict, DetectError> {
    let trimmed = raw.trim();
    let ambiguous = || DetectError::AmbiguousVerdict(raw.to_string());
    if trimmed.chars().count() > 8 {
        return Err(ambiguous());
    }
    let unquoted = trimmed.trim_matches(|c| matches!(c, '"' | '\'' | '\u{201C}' | '\u{201D}' | '\u{2018}' | '\u{2019}'));
    let stripped = unquoted
        .trim_end_matches(|c| matches!(c, '.' | '!' | '?' | ',' | ';' | ':'))
        .trim();
    let lowered = stripped.to_lowercase();

    let value = if lexicon.affirmative.iter().any(|s| s == &lowered) {
        DisclosureValue::SelfDisclosure
    } else if lexicon.negative.iter().any(|s| s == &lowered) {
        DisclosureValue::NonSelfDisclosure
    } else {
        return Err(ambiguous());
    };

    Ok(Verdict {
        label: DisclosureLabel::model(value),
        raw_text: raw.to_string(),
    })
}

/// One successfully classified post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedPost {
    pub id: String,
    pub label: DisclosureValue,
    pub raw: String,
}

/// A post whose verdict stayed ambiguous after the retry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationFailure {
    pub id: String,
    pub raw: String,
}

/// Result of a corpus classification run. Every input post lands in
/// exactly one of `classified` or `failures`; nothing is silently
/// defaulted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassificationOutcome {
    /// In input order.
    pub classified: Vec<ClassifiedPost>,
    /// In input order.
    pub failures: Vec<ClassificationFailure>,
}

impl ClassificationOutcome {
    pub fn labels(&self) -> BTreeMap<String, DisclosureLabel> {
        self.classified
            .iter()
            .map(|c| (c.id.clone(), DisclosureLabel::model(c.label)))
            .collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let yes = self
            .classified
            .iter()
            .filter(|c| c.label == DisclosureValue::SelfDisclosure)
            .count();
        (yes, self.classified.len() - yes)
    }
}

/// Classify every post, retrying ambiguous verdicts once and recording
/// persistent ambiguity in the failure sidecar. Gateway failures abort
/// with the offending post id attached.
pub fn classify_corpus(
    posts: &[Post],
    config: &DetectorConfig,
    gateway: &Gateway,
) -> Result<ClassificationOutcome, DetectError> {
    if !config.allow_labeled {
        if let Some(labeled) = posts.iter().find(|p| p.label.is_some()) {
            return Err(DetectError::AlreadyLabeled(labeled.id.clone()));
        }
    }

    let requests: Vec<ChatRequest> = posts
        .iter()
        .map(|post| {
            ChatRequest::new(build_detection_prompt(&config.template, post), &config.model_id)
        })
        .collect();

    let mut outcome = ClassificationOutcome::default();
    let responses = gateway.complete_batch(&requests);
    for ((post, request), response) in posts.iter().zip(&requests).zip(responses) {
        let response = response.map_err(|source| DetectError::Backend {
            id: post.id.clone(),
            source,
        })?;
        match parse_verdict(&response.text, &config.lexicon) {
            Ok(verdict) => outcome.classified.push(ClassifiedPost {
                id: post.id.clone(),
                label: verdict.label.value,
                raw: response.text,
            }),
            Err(_) => {
                // One retry at temperature 0, then the sidecar.
                let retried = gateway.complete(request).map_err(|source| DetectError::Backend {
                    id: post.id.clone(),
                    source,
                })?;
                match parse_verdict(&retried.text, &config.lexicon) {
                    Ok(verdict) => outcome.classified.push(ClassifiedPost {
                        id: post.id.clone(),
                        label: verdict.label.value,
                        raw: retried.text,
                    }),
                    Err(_) => outcome.failures.push(ClassificationFailure {
                        id: post.id.clone(),
                        raw: retried.text,
                    }),
                }
            }
        }
    }

    let (yes, no) = outcome.class_counts();
    log::info!(
        "classified {} posts: {yes} self-disclosure, {no} non-self-disclosure, {} failures",
        outcome.classified.len(),
        outcome.failures.len()
    );
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Stage artifacts
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LabelRecord<'a> {
    id: &'a str,
    label: &'a str,
    source: &'a str,
    raw: &'a str,
}

/// Write `labels.jsonl`: one `{"id","label","source":"model","raw"}` per line.
pub fn write_labels(outcome: &ClassificationOutcome, path: &Path) -> Result<(), DetectError> {
    let mut out = BufWriter::new(File::create(path)?);
    for c in &outcome.classified {
        let record = LabelRecord {
            id: &c.id,
            label: c.label.as_yes_no(),
            source: "model",
            raw: &c.raw,
        };
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Write `failures.jsonl`, the ambiguity sidecar.
pub fn write_failures(outcome: &ClassificationOutcome, path: &Path) -> Result<(), DetectError> {
    let mut out = BufWriter::new(File::create(path)?);
    for f in &outcome.failures {
        serde_json::to_writer(&mut out, f).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read `labels.jsonl` back into a prediction map (source = Model).
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, DisclosureLabel>, DetectError> {
    #[derive(Deserialize)]
    struct OwnedRecord {
        id: String,
        label: String,
    }
    let reader = BufReader::new(File::open(path)?);
    let mut labels = BTreeMap::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: OwnedRecord = serde_json::from_str(&line).map_err(std::io::Error::other)?;
        let value = DisclosureValue::from_yes_no(&record.label)
            .ok_or_else(|| std::io::Error::other(format!("bad label {:?}", record.label)))?;
        labels.insert(record.id, DisclosureLabel::model(value));
    }
    Ok(labels)
}

//! Stratified cross-validation of a detector backend, confusion-matrix
//! metrics with mean ± std aggregation, and the synthetic-corpus oracle
//! used by end-to-end tests.

mod synth;

pub use synth::{default_vocabularies, synth_corpus, SynthCorpus, SynthSpec};

use crate::corpus::{DisclosureValue, Post};
use crate::detect::{classify_corpus, DetectError, DetectorConfig};
use crate::gateway::Gateway;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("class {class:?} has {count} members, need at least {k}")]
    ClassTooSmall {
        class: &'static str,
        count: usize,
        k: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("fold {fold}: {source}")]
    FoldClassification {
        fold: usize,
        #[source]
        source: DetectError,
    },
    #[error("fold {fold}: no prediction for post {id}")]
    MissingPrediction { fold: usize, id: String },
    #[error("fold {fold}: classifier left {count} posts unresolved")]
    UnresolvedPosts { fold: usize, count: usize },
    #[error("post {0} has no label; cross-validation needs labeled posts")]
    UnlabeledPost(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Fold planning
// ---------------------------------------------------------------------------

/// Per-fold test-id lists. Folds partition the labeled ids; per-class
/// counts deviate from perfect stratification by at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

/// Deal each class round-robin into k folds after a seeded shuffle.
pub fn stratified_kfold(
    labels: &BTreeMap<String, DisclosureValue>,
    k: usize,
    seed: u64,
) -> Result<FoldPlan, EvaluateError> {
    if k < 2 {
        return Err(EvaluateError::InvalidParams(format!(
            "k must be at least 2 (no train split otherwise), got {k}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for (value, name) in [
        (DisclosureValue::SelfDisclosure, "self-disclosure"),
        (DisclosureValue::NonSelfDisclosure, "non-self-disclosure"),
    ] {
        let mut ids: Vec<&String> = labels
            .iter()
            .filter(|(_, v)| **v == value)
            .map(|(id, _)| id)
            .collect();
        if ids.len() < k {
            return Err(EvaluateError::ClassTooSmall {
                class: name,
                count: ids.len(),
                k,
            });
        }
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            folds[i % k].push(id.clone());
        }
    }

    Ok(FoldPlan { k, seed, folds })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Binary confusion counts; the positive class is self-disclosure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn record(&mut self, truth: DisclosureValue, predicted: DisclosureValue) {
        use DisclosureValue::*;
        match (truth, predicted) {
            (SelfDisclosure, SelfDisclosure) => self.true_pos += 1,
            (NonSelfDisclosure, SelfDisclosure) => self.false_pos += 1,
            (SelfDisclosure, NonSelfDisclosure) => self.false_neg += 1,
            (NonSelfDisclosure, NonSelfDisclosure) => self.true_neg += 1,
        }
    }
}

/// Which metric denominators were zero (the metric is reported as 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

/// Macro-averaged (both-classes) variants of the headline metrics. The
/// headline values treat self-disclosure as the positive class; these
/// average the per-class values and ride along in the extended report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_avg: MacroMetrics,
    pub undefined: UndefinedFlags,
}

fn ratio(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Standard binary metrics. Integer sums happen before any division;
/// zero-denominator metrics come back as 0 with the matching flag set.
pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let n = cm.total();
    let accuracy = if n == 0 {
        0.0
    } else {
        (cm.true_pos + cm.true_neg) as f64 / n as f64
    };

    let mut undefined = UndefinedFlags::default();
    undefined.precision = cm.true_pos + cm.false_pos == 0;
    undefined.recall = cm.true_pos + cm.false_neg == 0;
    let precision = ratio(cm.true_pos, cm.true_pos + cm.false_pos);
    let recall = ratio(cm.true_pos, cm.true_pos + cm.false_neg);
    let f1 = if precision + recall == 0.0 {
        undefined.f1 = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };

    // Negative-class counterparts feed the macro averages.
    let neg_precision = ratio(cm.true_neg, cm.true_neg + cm.false_neg);
    let neg_recall = ratio(cm.true_neg, cm.true_neg + cm.false_pos);
    let neg_f1 = if neg_precision + neg_recall == 0.0 {
        0.0
    } else {
        2.0 * neg_precision * neg_recall / (neg_precision + neg_recall)
    };

    Metrics {
        accuracy,
        precision,
        recall,
        f1,
        macro_avg: MacroMetrics {
            precision: (precision + neg_precision) / 2.0,
            recall: (recall + neg_recall) / 2.0,
            f1: (f1 + neg_f1) / 2.0,
        },
        undefined,
    }
}

/// One evaluated fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

/// Mean and sample standard deviation of one metric across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: f64,
    pub std: f64,
}

impl MetricAggregate {
    /// Render as "82.01% (±4.80%)".
    pub fn formatted(&self) -> String {
        format!("{:.2}% (\u{00b1}{:.2}%)", self.mean * 100.0, self.std * 100.0)
    }
}

/// Per-fold outcomes plus per-metric aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub folds: Vec<FoldOutcome>,
    pub accuracy: MetricAggregate,
    pub precision: MetricAggregate,
    pub recall: MetricAggregate,
    pub f1: MetricAggregate,
}

fn aggregate_one(values: &[f64]) -> MetricAggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // Sample standard deviation (Bessel's correction).
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    MetricAggregate {
        mean,
        std: variance.sqrt(),
    }
}

/// Aggregate at least two folds into mean ± sample std per metric.
pub fn aggregate(folds: Vec<FoldOutcome>) -> Result<MetricReport, EvaluateError> {
    if folds.len() < 2 {
        return Err(EvaluateError::InvalidParams(format!(
            "aggregation needs at least 2 folds, got {}",
            folds.len()
        )));
    }
    let pick = |f: fn(&Metrics) -> f64| -> Vec<f64> { folds.iter().map(|o| f(&o.metrics)).collect() };
    Ok(MetricReport {
        accuracy: aggregate_one(&pick(|m| m.accuracy)),
        precision: aggregate_one(&pick(|m| m.precision)),
        recall: aggregate_one(&pick(|m| m.recall)),
        f1: aggregate_one(&pick(|m| m.f1)),
        folds,
    })
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// A classifier evaluated by [`run_cv`]. The training folds are offered as
/// few-shot context capacity; inference-only detectors ignore them.
pub trait Detector {
    fn classify(
        &self,
        train: &[&Post],
        test: &[&Post],
    ) -> Result<BTreeMap<String, DisclosureValue>, EvaluateError>;
}

/// The pipeline's prompted classifier as a [`Detector`]. Inference-only:
/// training folds are ignored by design, the fold protocol and metrics are
/// unchanged.
pub struct PromptDetector<'a> {
    pub config: &'a DetectorConfig,
    pub gateway: &'a Gateway,
}

impl Detector for PromptDetector<'_> {
    fn classify(
        &self,
        _train: &[&Post],
        test: &[&Post],
    ) -> Result<BTreeMap<String, DisclosureValue>, EvaluateError> {
        let stripped: Vec<Post> = test
            .iter()
            .map(|p| {
                let mut q = (*p).clone();
                q.label = None;
                q
            })
            .collect();
        let outcome = classify_corpus(&stripped, self.config, self.gateway).map_err(|source| {
            EvaluateError::FoldClassification { fold: 0, source }
        })?;
        if !outcome.failures.is_empty() {
            return Err(EvaluateError::UnresolvedPosts {
                fold: 0,
                count: outcome.failures.len(),
            });
        }
        Ok(outcome
            .classified
            .into_iter()
            .map(|c| (c.id, c.label))
            .collect())
    }
}

/// Evaluate `detector` over every fold of `plan`: classify the fold's test
/// posts, tally the confusion matrix, and aggregate.
pub fn run_cv(
    posts: &[Post],
    plan: &FoldPlan,
    detector: &dyn Detector,
) -> Result<MetricReport, EvaluateError> {
    let by_id: BTreeMap<&str, &Post> = posts.iter().map(|p| (p.id.as_str(), p)).collect();
    for post in posts {
        if post.label.is_none() {
            return Err(EvaluateError::UnlabeledPost(post.id.clone()));
        }
    }

    let mut outcomes = Vec::with_capacity(plan.k);
    for (fold, test_ids) in plan.folds.iter().enumerate() {
        let test: Vec<&Post> = test_ids
            .iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| EvaluateError::MissingPrediction {
                    fold,
                    id: id.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        let in_test: std::collections::HashSet<&str> =
            test_ids.iter().map(String::as_str).collect();
        let train: Vec<&Post> = posts.iter().filter(|p| !in_test.contains(p.id.as_str())).collect();

        let predictions = detector.classify(&train, &test).map_err(|e| match e {
            EvaluateError::FoldClassification { source, .. } => {
                EvaluateError::FoldClassification { fold, source }
            }
            EvaluateError::UnresolvedPosts { count, .. } => {
                EvaluateError::UnresolvedPosts { fold, count }
            }
            other => other,
        })?;

        let mut confusion = ConfusionMatrix::default();
        for post in &test {
            let truth = post.label.expect("checked above").value;
            let predicted = predictions.get(&post.id).copied().ok_or_else(|| {
                EvaluateError::MissingPrediction {
                    fold,
                    id: post.id.clone(),
                }
            })?;
            confusion.record(truth, predicted);
        }
        outcomes.push(FoldOutcome {
            fold,
            metrics: metrics(&confusion),
            confusion,
        });
    }

    aggregate(outcomes)
}

// ---------------------------------------------------------------------------
// Clustering agreement
// ---------------------------------------------------------------------------

/// Adjusted Rand index between two labelings (noise label -1 counts as its
/// own class). 1.0 means identical partitions; 0 is chance agreement.
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must align");
    let n = a.len();
    if n == 0 {
        return 1.0;
    }

    let mut table: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut rows: BTreeMap<i64, u64> = BTreeMap::new();
    let mut cols: BTreeMap<i64, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((*x, *y)).or_default() += 1;
        *rows.entry(*x).or_default() += 1;
        *cols.entry(*y).or_default() += 1;
    }

    let choose2 = |m: u64| -> f64 { (m * m.saturating_sub(1)) as f64 / 2.0 };
    let index: f64 = table.values().map(|m| choose2(*m)).sum();
    let row_sum: f64 = rows.values().map(|m| choose2(*m)).sum();
    let col_sum: f64 = cols.values().map(|m| choose2(*m)).sum();
    let expected = row_sum * col_sum / choose2(n as u64);
    let max = (row_sum + col_sum) / 2.0;

    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

// ---------------------------------------------------------------------------
// Report artifacts
// ---------------------------------------------------------------------------

/// Write `report.json`: the full per-fold + aggregate structure.
pub fn write_report_json(report: &MetricReport, path: &Path) -> Result<(), EvaluateError> {
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), report).map_err(std::io::Error::other)?;
    Ok(())
}

/// Write `report.csv`: `fold,metric,value` rows for plotting per-fold
/// performance.
pub fn write_report_csv(report: &MetricReport, path: &Path) -> Result<(), EvaluateError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(b"fold,metric,value\n")?;
    for outcome in &report.folds {
        for (name, value) in [
            ("accuracy", outcome.metrics.accuracy),
            ("precision", outcome.metrics.precision),
            ("recall", outcome.metrics.recall),
            ("f1", outcome.metrics.f1),
            ("macro_precision", outcome.metrics.macro_avg.precision),
            ("macro_recall", outcome.metrics.macro_avg.recall),
            ("macro_f1", outcome.metrics.macro_avg.f1),
        ] {
            writeln!(out, "{},{name},{value}", outcome.fold)?;
        }
    }
    out.flush()?;
    Ok(())
}

//! Stage implementations and the manifest-driven runner.
//!
//! Each stage reads its upstream artifacts, writes its own atomically
//! (temp file + rename), and records a manifest last. Re-running a stage
//! whose inputs, parameters, and artifacts are unchanged is a no-op unless
//! forced.

use crate::config::{EmbedProviderKind, PipelineConfig};
use crate::manifest::{digest_bytes, digest_file, StageManifest};
use crate::mock::pipeline_mock;
use haven_core::cluster::{
    cluster, read_cluster_assignments, write_cluster_artifacts, ClusterParams,
};
use haven_core::corpus::{
    filter_engaged, load_posts, merge_annotations, partition, write_posts, CorpusPartition,
    DisclosureLabel, DisclosureValue, LabelTally, Post,
};
use haven_core::detect::{classify_corpus, write_failures, write_labels, DetectorConfig};
use haven_core::embed::{
    embed_corpus, read_embedding_artifact, write_embedding_artifact, EmbeddingProvider,
    HashingProvider, RemoteProvider,
};
use haven_core::evaluate::{
    run_cv, stratified_kfold, write_report_csv, write_report_json, PromptDetector,
};
use haven_core::gateway::{Gateway, GatewayError, RemoteBackend, RetryPolicy, TokenBudget};
use haven_core::reduce::{reduce_embeddings, Layout, LayoutParams};
use haven_core::summarize::{
    assemble_documents_from_labels, read_topics, summarize_topics, write_topics,
};
use haven_core::support::{
    extract_cluster_supports, extract_global_pool, map_supports, read_mapping, read_pool,
    top_comments, write_mapping, write_pool, ClusterSupports,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing upstream stage: {0}")]
    MissingUpstream(&'static str),
    #[error("backend: {0}")]
    Backend(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingUpstream(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Pipeline(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Pipeline(format!("io: {e}"))
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::BackendUnavailable(_) | GatewayError::BudgetExceeded { .. } => {
                CliError::Backend(e.to_string())
            }
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

macro_rules! pipeline_from {
    ($($ty:ty),+) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self { CliError::Pipeline(e.to_string()) }
        }
    )+};
}
pipeline_from!(
    haven_core::corpus::CorpusError,
    haven_core::embed::EmbedError,
    haven_core::reduce::ReduceError,
    haven_core::cluster::ClusterError,
    haven_core::evaluate::EvaluateError
);

impl From<haven_core::detect::DetectError> for CliError {
    fn from(e: haven_core::detect::DetectError) -> Self {
        match e {
            haven_core::detect::DetectError::Backend { .. } => CliError::Backend(e.to_string()),
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

impl From<haven_core::summarize::SummarizeError> for CliError {
    fn from(e: haven_core::summarize::SummarizeError) -> Self {
        match e {
            haven_core::summarize::SummarizeError::Gateway(g) => g.into(),
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

impl From<haven_core::support::SupportError> for CliError {
    fn from(e: haven_core::support::SupportError) -> Self {
        match e {
            haven_core::support::SupportError::Gateway(g) => g.into(),
            other => CliError::Pipeline(other.to_string()),
        }
    }
}

/// Everything a stage needs to run.
pub struct StageCtx<'a> {
    pub config: &'a PipelineConfig,
    pub out: &'a Path,
    pub force: bool,
    pub mock: bool,
}

impl StageCtx<'_> {
    fn gateway(&self) -> Result<Gateway, CliError> {
        let backend: Box<dyn haven_core::gateway::ChatBackend> = if self.mock {
            Box::new(pipeline_mock())
        } else {
            let endpoint = self.config.chat_endpoint.as_deref().ok_or_else(|| {
                CliError::Config("backend.chat.endpoint is required without --mock".into())
            })?;
            let api_key = self.api_key()?;
            Box::new(RemoteBackend::new(endpoint, api_key, RetryPolicy::default()))
        };
        Ok(Gateway::new(backend)
            .with_budget(TokenBudget::with_limit(self.config.budget_limit))
            .with_parallelism(self.config.parallelism))
    }

    fn api_key(&self) -> Result<Option<String>, CliError> {
        match &self.config.chat_api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                CliError::Config(format!("environment variable {var} (backend.chat.api_key_env) is not set"))
            }),
        }
    }

    fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>, CliError> {
        if self.mock || self.config.embed_provider == EmbedProviderKind::Hashing {
            return Ok(Box::new(HashingProvider));
        }
        let endpoint = self
            .config
            .embed_endpoint
            .as_deref()
            .or(self.config.chat_endpoint.as_deref())
            .ok_or_else(|| CliError::Config("backend.embed.endpoint is required for the remote provider".into()))?;
        Ok(Box::new(RemoteProvider::new(
            endpoint,
            &self.config.embed_model,
            self.api_key()?,
        )))
    }

    fn budget(&self) -> TokenBudget {
        TokenBudget::with_limit(self.config.budget_limit)
    }

    fn backend_tag(&self) -> String {
        if self.mock {
            "mock".to_string()
        } else {
            format!(
                "remote:{}:{}",
                self.config.chat_endpoint.as_deref().unwrap_or(""),
                self.config.chat_model
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Stage graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Detect,
    Embed,
    Reduce,
    Cluster,
    Summarize,
    Support,
    Evaluate,
}

pub const ALL_STAGES: [Stage; 8] = [
    Stage::Ingest,
    Stage::Detect,
    Stage::Embed,
    Stage::Reduce,
    Stage::Cluster,
    Stage::Summarize,
    Stage::Support,
    Stage::Evaluate,
];

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Detect => "detect",
            Stage::Embed => "embed",
            Stage::Reduce => "reduce",
            Stage::Cluster => "cluster",
            Stage::Summarize => "summarize",
            Stage::Support => "support",
            Stage::Evaluate => "evaluate",
        }
    }

    fn upstreams(&self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Detect => &[Stage::Ingest],
            Stage::Embed => &[Stage::Detect],
            Stage::Reduce => &[Stage::Embed],
            Stage::Cluster => &[Stage::Reduce],
            Stage::Summarize => &[Stage::Detect, Stage::Cluster],
            Stage::Support => &[Stage::Detect, Stage::Cluster, Stage::Summarize],
            Stage::Evaluate => &[Stage::Ingest],
        }
    }

    /// Files whose digests decide whether the stage is stale.
    fn input_files(&self, ctx: &StageCtx) -> Vec<PathBuf> {
        let out = ctx.out;
        match self {
            Stage::Ingest => {
                let mut files = vec![ctx.config.input_posts.clone()];
                if let Some(labels) = &ctx.config.input_labels {
                    files.push(labels.clone());
                }
                files
            }
            Stage::Detect => vec![out.join("corpus.jsonl")],
            Stage::Embed => vec![out.join("merged.jsonl")],
            Stage::Reduce => vec![out.join("embeddings.emb1"), out.join("embeddings.ids")],
            Stage::Cluster => vec![out.join("layout.emb1"), out.join("layout.ids")],
            Stage::Summarize => vec![out.join("merged.jsonl"), out.join("clusters.jsonl")],
            Stage::Support => vec![
                out.join("merged.jsonl"),
                out.join("clusters.jsonl"),
                out.join("topics.json"),
            ],
            Stage::Evaluate => vec![out.join("corpus.jsonl")],
        }
    }

    /// Stage-relevant parameters, digested into the manifest.
    fn params_string(&self, ctx: &StageCtx) -> String {
        let c = ctx.config;
        match self {
            Stage::Ingest => format!(
                "posts={};labels={:?}",
                c.input_posts.display(),
                c.input_labels.as_ref().map(|p| p.display().to_string())
            ),
            Stage::Detect => format!(
                "backend={};model={};budget={};parallelism={}",
                ctx.backend_tag(),
                c.chat_model,
                c.budget_limit,
                c.parallelism
            ),
            Stage::Embed => format!(
                "provider={:?};mock={};model={}",
                c.embed_provider, ctx.mock, c.embed_model
            ),
            Stage::Reduce => format!(
                "n_components={};n_neighbors={};min_dist={};spread={};epochs={};nsr={};seed={}",
                c.n_components, c.n_neighbors, c.min_dist, c.spread, c.epochs,
                c.negative_sample_rate, c.seed
            ),
            Stage::Cluster => format!(
                "min_cluster_size={};min_samples={}",
                c.min_cluster_size, c.min_samples
            ),
            Stage::Summarize => format!(
                "backend={};budget={}",
                ctx.backend_tag(),
                c.budget_limit
            ),
            Stage::Support => format!(
                "backend={};top_k={};threshold={};budget={};provider={:?}",
                ctx.backend_tag(),
                c.support_top_k,
                c.support_threshold,
                c.budget_limit,
                c.embed_provider
            ),
            Stage::Evaluate => format!(
                "backend={};folds={};seed={}",
                ctx.backend_tag(),
                c.folds,
                c.seed
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

fn now_utc() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Write one artifact through a temp path, then return (name, digest).
fn produce<F>(out: &Path, name: &str, writer: F) -> Result<(String, String), CliError>
where
    F: FnOnce(&Path) -> Result<(), CliError>,
{
    let tmp = out.join(format!("{name}.tmp"));
    writer(&tmp)?;
    let target = out.join(name);
    fs::rename(&tmp, &target)?;
    Ok((name.to_string(), digest_file(&target)?))
}

/// Run one stage end to end: upstream checks, staleness check, execution,
/// manifest.
pub fn run_stage(stage: Stage, ctx: &StageCtx) -> Result<StageManifest, CliError> {
    for upstream in stage.upstreams() {
        let manifest = StageManifest::load(ctx.out, upstream.name())?;
        match manifest {
            None => return Err(CliError::MissingUpstream(upstream.name())),
            Some(m) if !m.artifacts_intact(ctx.out) => {
                return Err(CliError::MissingUpstream(upstream.name()))
            }
            Some(_) => {}
        }
    }

    let mut inputs = BTreeMap::new();
    for file in stage.input_files(ctx) {
        if !file.exists() {
            return match stage {
                Stage::Ingest => Err(CliError::Config(format!(
                    "input file {} does not exist",
                    file.display()
                ))),
                _ => Err(CliError::MissingUpstream(stage.upstreams()[0].name())),
            };
        }
        let name = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| file.display().to_string());
        inputs.insert(name, digest_file(&file)?);
    }
    let params_digest = digest_bytes(stage.params_string(ctx).as_bytes());

    if !ctx.force {
        if let Some(existing) = StageManifest::load(ctx.out, stage.name())? {
            if existing.params_digest == params_digest
                && existing.inputs == inputs
                && existing.artifacts_intact(ctx.out)
            {
                log::info!("stage {} is up to date, skipping", stage.name());
                return Ok(existing);
            }
        }
    }

    log::info!("running stage {}", stage.name());
    let artifacts = match stage {
        Stage::Ingest => stage_ingest(ctx)?,
        Stage::Detect => stage_detect(ctx)?,
        Stage::Embed => stage_embed(ctx)?,
        Stage::Reduce => stage_reduce(ctx)?,
        Stage::Cluster => stage_cluster(ctx)?,
        Stage::Summarize => stage_summarize(ctx)?,
        Stage::Support => stage_support(ctx)?,
        Stage::Evaluate => stage_evaluate(ctx)?,
    };

    let manifest = StageManifest {
        stage: stage.name().to_string(),
        artifacts,
        inputs,
        params_digest,
        created_utc: now_utc(),
    };
    manifest.store(ctx.out)?;
    Ok(manifest)
}

/// Run every stage in dependency order, then render the report.
pub fn run_all(ctx: &StageCtx) -> Result<(), CliError> {
    for stage in ALL_STAGES {
        run_stage(stage, ctx)?;
    }
    render_report(ctx)
}

// ---------------------------------------------------------------------------
// Stage bodies
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct IngestSummary {
    loaded: usize,
    removed_unengaged: usize,
    kept: usize,
    labeled: usize,
    unlabeled: usize,
    human_yes: usize,
    human_no: usize,
}

fn read_human_labels(path: &Path) -> Result<BTreeMap<String, DisclosureLabel>, CliError> {
    #[derive(Deserialize)]
    struct Record {
        id: String,
        label: String,
    }
    let text = fs::read_to_string(path)?;
    let mut labels = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| {
            CliError::Pipeline(format!("{}:{}: {e}", path.display(), idx + 1))
        })?;
        let value = DisclosureValue::from_yes_no(&record.label).ok_or_else(|| {
            CliError::Pipeline(format!(
                "{}:{}: label must be \"yes\" or \"no\"",
                path.display(),
                idx + 1
            ))
        })?;
        labels.insert(record.id, DisclosureLabel::human(value));
    }
    Ok(labels)
}

fn stage_ingest(ctx: &StageCtx) -> Result<BTreeMap<String, String>, CliError> {
    let posts = load_posts(&ctx.config.input_posts)?;
    let loaded = posts.len();
    let (engaged, removed) = filter_engaged(posts);
    log::info!("engagement filter kept {} posts, removed {removed}", engaged.len());

    let human_labels = match &ctx.config.input_labels {
        Some(path) => read_human_labels(path)?,
        None => BTreeMap::new(),
    };
    let kept = engaged.len();
    let part = partition(engaged, &human_labels)?;
    let tally = LabelTally::count(&part.labeled);

    let summary = IngestSummary {
        loaded,
        removed_unengaged: removed,
        kept,
        labeled: part.labeled.len(),
        unlabeled: part.unlabeled.len(),
        human_yes: tally.self_disclosure,
        human_no: tally.non_self_disclosure,
    };

    // Labeled posts first, then the unlabeled remainder; detect rebuilds
    // the partition from the label field.
    let mut corpus = part.labeled;
    corpus.extend(part.unlabeled);

    let mut artifacts = BTreeMap::new();
    artifacts.extend([produce(ctx.out, "corpus.jsonl", |tmp| {
        Ok(write_posts(&corpus, tmp)?)
    })?]);
    artifacts.extend([produce(ctx.out, "ingest_summary.json", |tmp| {
        Ok(fs::write(tmp, serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?)?)
    })?]);
    Ok(artifacts)
}

#[derive(Serialize, Deserialize)]
struct DetectSummary {
    human_yes: usize,
    human_no: usize,
    model_yes: usize,
    model_no: usize,
    total_yes: usize,
    total_no: usize,
    failures: usize,
}

fn stage_detect(ctx: &StageCtx) -> Result<BTreeMap<String, String>, CliError> {
    let posts = load_posts(&ctx.out.join("corpus.jsonl"))?;
    let (labeled, unlabeled): (Vec<Post>, Vec<Post>) =
        posts.into_iter().partition(|p| p.label.is_some());
    let human_tally = LabelTally::count(&labeled);

    let gateway = ctx.gateway()?;
    let config = DetectorConfig::new(&ctx.config.chat_model);
    let outcome = classify_corpus(&unlabeled, &config, &gateway)?;
    let (model_yes, model_no) = outcome.class_counts();

    let mut artifacts = BTreeMap::new();
    artifacts.extend([produce(ctx.out, "labels.jsonl", |tmp| {
        Ok(write_labels(&outcome, tmp)?)
    })?]);
    artifacts.extend([produce(ctx.out, "failures.jsonl", |tmp| {
        Ok(write_failures(&outcome, tmp)?)
    })?]);

    if !outcome.failures.is_empty() {
        // Partial labelings would corrupt the downstream bookkeeping;
        // failures.jsonl holds the details for a retry.
        return Err(CliError::Backend(format!(
            "{} posts stayed ambiguous after retry; see failures.jsonl",
            outcome.failures.len()
        )));
    }

    let part = CorpusPartition { labeled, unlabeled };
    let predictions: std::collections::HashMap<String, DisclosureLabel> =
        outcome.labels().into_iter().collect();
    let merged = merge_annotations(part, &predictions)?;
    let total = LabelTally::count(&merged);

    let summary = DetectSummary {
        human_yes: human_tally.self_disclosure,
        human_no: human_tally.non_self_disclosure,
        model_yes,
        model_no,
        total_yes: total.self_disclosure,
        total_no: total.non_self_disclosure,
        failures: outcome.failures.len(),
    };
    log::info!(
        "detection totals: {} self-disclosure / {} non-self-disclosure",
        total.self_disclosure,
        total.non_self_disclosure
    );

    artifacts.extend([produce(ctx.out, "merged.jsonl", |tmp| {
        Ok(write_posts(&merged, tmp)?)
    })?]);
    artifacts.extend([produce(ctx.out, "detect_summary.json", |tmp| {
        Ok(fs::write(tmp, serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?)?)
    })?]);
    Ok(artifacts)
}

/// Self-disclosure posts from the merged corpus, in corpus order.
fn disclosure_posts(out: &Path) -> Result<Vec<Post>, CliError> {
    let merged = load_posts(&out.join("merged.jsonl"))?;
    Ok(merged
        .into_iter()
        .filter(|p| p.label.map(|l| l.value) == Some(DisclosureValue::SelfDisclosure))
        .collect())
}

fn stage_embed(ctx: &StageCtx) -> Result<BTreeMap<String, String>, CliError> {
    let posts = disclosure_posts(ctx.out)?;
    if posts.is_empty() {
        return Err(CliError::Pipeline(
            "no self-disclosure posts to embed; nothing to cluster".into(),
        ));
    }
    let provider = ctx.embedder()?;
    let matrix = embed_corpus(&posts, provider.as_ref())?;

    // The two files describe one artifact; write both to temps, then
    // rename together.
    let tmp_matrix = ctx.out.join("embeddings.emb1.tmp");
    let tmp_ids = ctx.out.join("embeddings.ids.tmp");
    write_embedding_artifact(&matrix, &tmp_matrix, &tmp_ids)?;
    fs::rename(&tmp_matrix, ctx.out.join("embeddings.emb1"))?;
    fs::rename(&tmp_ids, ctx.out.join("embeddings.ids"))?;

    let mut artifacts = BTreeMap::new();
    artifacts.insert("embeddings.emb1".to_string(), digest_file(&ctx.out.join("embeddings.emb1"))?);
    artifacts.insert("embeddings.ids".to_string(), digest_file(&ctx.out.join("embeddings.ids"))?);
    Ok(artifacts)
}

fn layout_params(ctx: &StageCtx, n_components: usize) -> Result<LayoutParams, CliError> {
    let c = ctx.config;
    Ok(
        LayoutParams::with_geometry(n_components, c.n_neighbors, c.min_dist, c.spread, c.seed)?
            .with_epochs(c.epochs)
            .with_negative_sample_rate(c.negative_sample_rate),
    )
}

fn stage_reduce(ctx: &StageCtx) -> Result<BTreeMap<String, String>, CliError> {
    let matrix = read_embedding_artifact(
        &ctx.out.join("embeddings.emb1"),
        &ctx.out.join("embeddings.ids"),
    )?;

    let layout = reduce_embeddings(&matrix, &layout_params(ctx, ctx.config.n_components)?)?;
    let tmp_matrix = ctx.out.join("layout.emb1.tmp");
    let tmp_ids = ctx.out.join("layout.ids.tmp");
    layout.write_artifact(&tmp_matrix, &tmp_ids)?;
    fs::rename(&tmp_matrix, ctx.out.join("layout.emb1"))?;
    fs::rename(&tmp_ids, ctx.out.join("layout.ids"))?;

    // A separate 2-d run feeds the scatter-plot export.
    let planar = reduce_embeddings(&matrix, &layout_params(ctx, 2)?)?;
    let (csv_name, csv_digest) = produce(ctx.out, "layout2d.csv", |tmp| {
        Ok(planar.write_csv_2d(tmp)?)
    })?;

    let mut artifacts = BTreeMap::new();
    artifacts.insert("layout.emb1".to_string(), digest_file(&ctx.out.join("layout.emb1"))?);
    artifacts.insert("layout.ids".to_string(), digest_file(&ctx.out.join("layout.ids"))?);
    artifacts.insert(csv_name, csv_digest);
    Ok(artifacts)
}

fn stage_cluster(ctx: &StageCtx) -> Result<BTreeMap<String, String>, CliError> {
    let layout = Layout::read_artifact(&ctx.out.join("layout.emb1"), &ctx.out.join("layout.ids"))?;
    let params = ClusterParams::new(ctx.config.min_cluster_size, ctx.config.min_samples)?;
    let model = cluster(&layout, &params)?;
    log::info!(
        "clustering found {} clusters, {} noise points",
        model.n_clusters(),
        model.noise_count()
    );

    let tmp_rows = ctx.out.join("clusters.jsonl.tmp");
    let tmp_meta = ctx.out.join("clusters_meta.json.tmp");
    write_cluster_artifacts(&model, &layout.row_ids, &tmp_rows, &tmp_meta)?;
    fs::rename(&tmp_rows, ctx.out.join("clusters.jsonl"))?;
    fs::rename(&tmp_meta, ctx.out.join("clusters_meta.json"))?;

    let mut artifacts = BTreeMap::new();
    artifacts.insert("clusters.jsonl".to_string(), digest_file(&ctx.out.join("clusters.jsonl"))?);
    artifacts.insert("clusters_meta.json".to_string(), digest_file(&ctx.out.join("clusters_meta.json"))?);
    Ok(artifacts)
}

/// Posts and aligned labels for the clustered (self-disclosure) subset.
fn clustered_posts(out: &Path) -> Result<(Vec<Post>, Vec<i32>, usize), CliError> {
    let posts = disclosure_posts(out)?;
    let assignments = read_cluster_assignments(&out.join("clusters.jsonl"))?;
    let by_id: BTreeMap<&str, i32> = assignments
        .iter()
        .map(|a| (a.id.as_str(), a.cluster))
        .collect();
    let labels: Vec<i32> = posts
        .iter()
        .map(|p| {
            by_id.get(p.id.as_str()).copied().ok_or_else(|| {
                CliError::Pipeline(format!("post {} has no cluster assignment", p.id))
            })
        })
        .collect::<Result<_, _>>()?;
    let k = assignments.iter().map(|a| a.cluster + 1).max().unwrap_or(0).max(0) as usize;
    Ok((posts, labels, k))
}

fn stage_summarize(ctx: &StageCtx) -> Result<BTreeMap<String, String>, CliError> {
    let (posts, labels, k) = clustered_posts(ctx.out)?;
    let gateway = ctx.gateway()?;
    let docs = assemble_documents_from_labels(&posts, &labels, k, &ctx.budget())?;
    let topics = summarize_topics(&docs, &gateway, &ctx.config.chat_model)?;

    let mut artifacts = BTreeMap::new();
    artifacts.extend([produce(ctx.out, "topics.json", |tmp| {
        Ok(write_topics(&topics, tmp)?)
    })?]);
    Ok(artifacts)
}

fn stage_support(ctx: &StageCtx) -> Result<BTreeMap<String, String>, CliError> {
    let (posts, labels, k) = clustered_posts(ctx.out)?;
    let topics = read_topics(&ctx.out.join("topics.json"))?;
    let gateway = ctx.gateway()?;
    let provider = ctx.embedder()?;

    let mut members: Vec<Vec<&Post>> = vec![Vec::new(); k];
    for (post, label) in posts.iter().zip(&labels) {
        if *label >= 0 {
            members[*label as usize].push(post);
        }
    }

    let mut per_cluster_comments = Vec::new();
    for (cluster, posts) in members.iter().enumerate() {
        let top = top_comments(posts, ctx.config.support_top_k);
        if top.is_empty() {
            log::warn!("cluster {cluster} has no comments; skipped");
            continue;
        }
        per_cluster_comments.push((cluster, top));
    }
    if per_cluster_comments.is_empty() {
        return Err(CliError::Pipeline("no cluster has comments to extract support from".into()));
    }

    let pool = extract_global_pool(&per_cluster_comments, &gateway, &ctx.config.chat_model)?;
    let mut per_cluster = Vec::new();
    for (cluster, comments) in &per_cluster_comments {
        let phrases = extract_cluster_supports(*cluster, comments, &gateway, &ctx.config.chat_model)?;
        per_cluster.push(ClusterSupports {
            cluster: *cluster,
            phrases,
        });
    }
    let mapping = map_supports(
        &pool,
        &topics,
        &per_cluster,
        provider.as_ref(),
        ctx.config.support_threshold,
    )?;

    let mut artifacts = BTreeMap::new();
    artifacts.extend([produce(ctx.out, "supports.json", |tmp| Ok(write_pool(&pool, tmp)?))?]);
    artifacts.extend([produce(ctx.out, "mapping.json", |tmp| {
        Ok(write_mapping(&mapping, tmp)?)
    })?]);
    Ok(artifacts)
}

fn stage_evaluate(ctx: &StageCtx) -> Result<BTreeMap<String, String>, CliError> {
    let posts = load_posts(&ctx.out.join("corpus.jsonl"))?;
    let labeled: Vec<Post> = posts.into_iter().filter(|p| p.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(CliError::Pipeline(
            "no human-labeled posts; provide input.labels to evaluate".into(),
        ));
    }
    let labels: BTreeMap<String, DisclosureValue> = labeled
        .iter()
        .map(|p| (p.id.clone(), p.label.unwrap().value))
        .collect();

    let plan = stratified_kfold(&labels, ctx.config.folds, ctx.config.seed)?;
    let gateway = ctx.gateway()?;
    let detector_config = DetectorConfig::new(&ctx.config.chat_model);
    let detector = PromptDetector {
        config: &detector_config,
        gateway: &gateway,
    };
    let report = run_cv(&labeled, &plan, &detector)?;
    log::info!(
        "cross-validation accuracy {} precision {} recall {} f1 {}",
        report.accuracy.formatted(),
        report.precision.formatted(),
        report.recall.formatted(),
        report.f1.formatted()
    );

    let mut artifacts = BTreeMap::new();
    artifacts.extend([produce(ctx.out, "report.json", |tmp| {
        Ok(write_report_json(&report, tmp)?)
    })?]);
    artifacts.extend([produce(ctx.out, "report.csv", |tmp| {
        Ok(write_report_csv(&report, tmp)?)
    })?]);
    Ok(artifacts)
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct ClusterMetaRow {
    cluster: usize,
    size: usize,
    stability: f64,
}

/// Render `report.md` from the summarize/support/cluster/detect artifacts.
/// Deterministic: no timestamps.
pub fn render_report(ctx: &StageCtx) -> Result<(), CliError> {
    for stage in [Stage::Detect, Stage::Cluster, Stage::Summarize, Stage::Support] {
        match StageManifest::load(ctx.out, stage.name())? {
            None => return Err(CliError::MissingUpstream(stage.name())),
            Some(m) if !m.artifacts_intact(ctx.out) => {
                return Err(CliError::MissingUpstream(stage.name()))
            }
            Some(_) => {}
        }
    }

    let detect: DetectSummary =
        serde_json::from_str(&fs::read_to_string(ctx.out.join("detect_summary.json"))?)
            .map_err(|e| CliError::Pipeline(format!("detect_summary.json: {e}")))?;
    let meta: Vec<ClusterMetaRow> =
        serde_json::from_str(&fs::read_to_string(ctx.out.join("clusters_meta.json"))?)
            .map_err(|e| CliError::Pipeline(format!("clusters_meta.json: {e}")))?;
    let topics = read_topics(&ctx.out.join("topics.json"))?;
    let pool = read_pool(&ctx.out.join("supports.json"))?;
    let mapping = read_mapping(&ctx.out.join("mapping.json"))?;

    let topic_of = |cluster: usize| -> &str {
        topics
            .iter()
            .find(|t| t.cluster == cluster)
            .map_or("(no topic)", |t| t.topic.as_str())
    };
    let support_name = |id: usize| -> &str {
        pool.iter().find(|s| s.id == id).map_or("(unknown)", |s| s.name.as_str())
    };

    let mut md = String::new();
    md.push_str("# Disclosure analysis report\n\n");

    md.push_str("## Detection counts\n\n");
    md.push_str(&format!(
        "- human labels: {} self-disclosure / {} non-self-disclosure\n",
        detect.human_yes, detect.human_no
    ));
    md.push_str(&format!(
        "- model labels: {} self-disclosure / {} non-self-disclosure\n",
        detect.model_yes, detect.model_no
    ));
    md.push_str(&format!(
        "- merged totals: {} self-disclosure / {} non-self-disclosure\n\n",
        detect.total_yes, detect.total_no
    ));

    md.push_str("## Clusters\n\n");
    md.push_str("| cluster | size | stability | topic |\n|---|---|---|---|\n");
    for row in &meta {
        md.push_str(&format!(
            "| {} | {} | {:.4} | {} |\n",
            row.cluster,
            row.size,
            row.stability,
            topic_of(row.cluster)
        ));
    }
    md.push('\n');

    md.push_str("## Topics and support provisions\n\n");
    md.push_str(&format!(
        "Support mapping threshold: cosine {} over the pool of {} supports.\n\n",
        mapping.threshold,
        pool.len()
    ));
    md.push_str("| cluster | topic | supports |\n|---|---|---|\n");
    for row in &mapping.rows {
        let supports = if row.supports.is_empty() {
            "(none)".to_string()
        } else {
            row.supports
                .iter()
                .map(|id| format!("Support {id} ({})", support_name(*id)))
                .collect::<Vec<_>>()
                .join(", ")
        };
        md.push_str(&format!("| {} | {} | {} |\n", row.cluster, row.topic, supports));
    }
    md.push('\n');

    let unmapped_total: usize = mapping.rows.iter().map(|r| r.unmapped.len()).sum();
    if unmapped_total > 0 {
        md.push_str("### Unmapped support phrases\n\n");
        for row in &mapping.rows {
            for phrase in &row.unmapped {
                md.push_str(&format!("- cluster {}: {phrase}\n", row.cluster));
            }
        }
        md.push('\n');
    }

    md.push_str("## Supports pool\n\n");
    for entry in &pool {
        if entry.description.is_empty() {
            md.push_str(&format!("- Support {}: {}\n", entry.id, entry.name));
        } else {
            md.push_str(&format!(
                "- Support {}: {} \u{2014} {}\n",
                entry.id, entry.name, entry.description
            ));
        }
    }
    md.push('\n');

    md.push_str("## Layout\n\n");
    md.push_str("2-d scatter data for plotting: `layout2d.csv` (columns id,x,y).\n");

    crate::manifest::atomic_write(&ctx.out.join("report.md"), md.as_bytes())?;
    log::info!("wrote {}", ctx.out.join("report.md").display());
    Ok(())
}

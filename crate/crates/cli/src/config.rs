//! Flat dotted-key config files: `key = value` lines, `#` comments, and
//! strict validation with defaults for everything but the input path.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

/// Which embedding provider the embed stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedProviderKind {
    Hashing,
    Remote,
}

/// The full pipeline configuration. Only `input.posts` is required; every
/// other key carries a default.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub input_posts: PathBuf,
    pub input_labels: Option<PathBuf>,

    pub chat_endpoint: Option<String>,
    pub chat_model: String,
    pub chat_api_key_env: Option<String>,
    pub embed_endpoint: Option<String>,
    pub embed_model: String,
    pub parallelism: usize,
    pub budget_limit: usize,

    pub embed_provider: EmbedProviderKind,
    pub n_components: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub epochs: usize,
    pub negative_sample_rate: usize,

    pub min_cluster_size: usize,
    pub min_samples: usize,

    pub support_top_k: usize,
    pub support_threshold: f64,

    pub folds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            output_dir: PathBuf::from("out"),
            input_posts: PathBuf::new(),
            input_labels: None,
            chat_endpoint: None,
            chat_model: "gpt-4o".to_string(),
            chat_api_key_env: None,
            embed_endpoint: None,
            embed_model: "sentence-embedder".to_string(),
            parallelism: 4,
            budget_limit: 128_000,
            embed_provider: EmbedProviderKind::Hashing,
            n_components: 5,
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            epochs: 200,
            negative_sample_rate: 5,
            min_cluster_size: 20,
            min_samples: 20,
            support_top_k: 10,
            support_threshold: 0.6,
            folds: 10,
        }
    }
}

fn parse_number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError(format!("key {key:?}: cannot parse {value:?}")))
}

impl PipelineConfig {
    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut pairs: BTreeMap<&str, &str> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value", idx + 1)))?;
            let key = key.trim();
            let value = value.trim();
            if pairs.insert(key, value).is_some() {
                return Err(ConfigError(format!("key {key:?} set twice")));
            }
        }

        let mut config = PipelineConfig::default();
        for (key, value) in pairs {
            match key {
                "seed" => config.seed = parse_number(key, value)?,
                "output.dir" => config.output_dir = PathBuf::from(value),
                "input.posts" => config.input_posts = PathBuf::from(value),
                "input.labels" => config.input_labels = Some(PathBuf::from(value)),
                "backend.chat.endpoint" => config.chat_endpoint = Some(value.to_string()),
                "backend.chat.model" => config.chat_model = value.to_string(),
                "backend.chat.api_key_env" => config.chat_api_key_env = Some(value.to_string()),
                "backend.embed.endpoint" => config.embed_endpoint = Some(value.to_string()),
                "backend.embed.model" => config.embed_model = value.to_string(),
                "backend.parallelism" => config.parallelism = parse_number(key, value)?,
                "budget.limit" => config.budget_limit = parse_number(key, value)?,
                "embed.provider" => {
                    config.embed_provider = match value {
                        "hashing" => EmbedProviderKind::Hashing,
                        "remote" => EmbedProviderKind::Remote,
                        other => {
                            return Err(ConfigError(format!(
                                "key {key:?}: expected \"hashing\" or \"remote\", got {other:?}"
                            )))
                        }
                    }
                }
                "reduce.n_components" => config.n_components = parse_number(key, value)?,
                "reduce.n_neighbors" => config.n_neighbors = parse_number(key, value)?,
                "reduce.min_dist" => config.min_dist = parse_number(key, value)?,
                "reduce.spread" => config.spread = parse_number(key, value)?,
                "reduce.epochs" => config.epochs = parse_number(key, value)?,
                "reduce.negative_sample_rate" => {
                    config.negative_sample_rate = parse_number(key, value)?
                }
                "cluster.min_cluster_size" => config.min_cluster_size = parse_number(key, value)?,
                "cluster.min_samples" => config.min_samples = parse_number(key, value)?,
                "support.top_k" => config.support_top_k = parse_number(key, value)?,
                "support.threshold" => config.support_threshold = parse_number(key, value)?,
                "evaluate.folds" => config.folds = parse_number(key, value)?,
                other => return Err(ConfigError(format!("unknown key {other:?}"))),
            }
        }

        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, detail: String| Err(ConfigError(format!("key {key:?}: {detail}")));
        if self.input_posts.as_os_str().is_empty() {
            return bad("input.posts", "required".into());
        }
        if self.parallelism == 0 {
            return bad("backend.parallelism", "must be at least 1".into());
        }
        if self.budget_limit == 0 {
            return bad("budget.limit", "must be positive".into());
        }
        if self.n_components == 0 {
            return bad("reduce.n_components", "must be at least 1".into());
        }
        if self.n_neighbors == 0 {
            return bad("reduce.n_neighbors", "must be at least 1".into());
        }
        if !(self.min_dist > 0.0) {
            return bad("reduce.min_dist", format!("must be positive, got {}", self.min_dist));
        }
        if !(self.spread > 0.0) {
            return bad("reduce.spread", format!("must be positive, got {}", self.spread));
        }
        if self.min_dist >= self.spread * 10.0 {
            return bad("reduce.min_dist", "must be below 10x the spread".into());
        }
        if self.epochs == 0 {
            return bad("reduce.epochs", "must be at least 1".into());
        }
        if self.min_cluster_size < 2 {
            return bad("cluster.min_cluster_size", "must be at least 2".into());
        }
        if self.min_samples < 2 {
            return bad("cluster.min_samples", "must be at least 2".into());
        }
        if self.support_top_k == 0 {
            return bad("support.top_k", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.support_threshold) {
            return bad(
                "support.threshold",
                format!("must be within [0, 1], got {}", self.support_threshold),
            );
        }
        if self.folds < 2 {
            return bad("evaluate.folds", "must be at least 2 (no train split otherwise)".into());
        }
        Ok(())
    }

    /// Inverse of [`PipelineConfig::parse_str`].
    pub fn serialize_dotted(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        put("seed", self.seed.to_string());
        put("output.dir", self.output_dir.display().to_string());
        put("input.posts", self.input_posts.display().to_string());
        if let Some(labels) = &self.input_labels {
            put("input.labels", labels.display().to_string());
        }
        if let Some(endpoint) = &self.chat_endpoint {
            put("backend.chat.endpoint", endpoint.clone());
        }
        put("backend.chat.model", self.chat_model.clone());
        if let Some(env) = &self.chat_api_key_env {
            put("backend.chat.api_key_env", env.clone());
        }
        if let Some(endpoint) = &self.embed_endpoint {
            put("backend.embed.endpoint", endpoint.clone());
        }
        put("backend.embed.model", self.embed_model.clone());
        put("backend.parallelism", self.parallelism.to_string());
        put("budget.limit", self.budget_limit.to_string());
        put(
            "embed.provider",
            match self.embed_provider {
                EmbedProviderKind::Hashing => "hashing".to_string(),
                EmbedProviderKind::Remote => "remote".to_string(),
            },
        );
        put("reduce.n_components", self.n_components.to_string());
        put("reduce.n_neighbors", self.n_neighbors.to_string());
        put("reduce.min_dist", self.min_dist.to_string());
        put("reduce.spread", self.spread.to_string());
        put("reduce.epochs", self.epochs.to_string());
        put("reduce.negative_sample_rate", self.negative_sample_rate.to_string());
        put("cluster.min_cluster_size", self.min_cluster_size.to_string());
        put("cluster.min_samples", self.min_samples.to_string());
        put("support.top_k", self.support_top_k.to_string());
        put("support.threshold", self.support_threshold.to_string());
        put("evaluate.folds", self.folds.to_string());
        out
    }
}

//! Post embeddings behind a pluggable provider.
//!
//! The remote provider speaks a one-shot embeddings HTTP endpoint; the
//! built-in feature-hashing provider is the deterministic offline stand-in.
//! The hashing vectors carry no semantics beyond token overlap, which is
//! exactly what the pipeline's correctness properties need: determinism,
//! fixed dimension, and unit norm.

use crate::corpus::Post;
use crate::hash::fnv1a64;
use serde::Deserialize;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Duration;
use thiserror::Error;

/// Embedding dimension used across the pipeline.
pub const EMBEDDING_DIM: usize = 384;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("provider error for post {id}: {detail}")]
    ProviderForPost { id: String, detail: String },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bad matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether a vector was normalized or is identically zero (no tokens).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormFlag {
    UnitNorm,
    Zero,
}

/// A 384-dimensional embedding. `UnitNorm` vectors have L2 norm within
/// 1e-6 of 1.0; `Zero` vectors are identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    norm_flag: NormFlag,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>, norm_flag: NormFlag) -> Result<Self, EmbedError> {
        if values.len() != EMBEDDING_DIM {
            return Err(EmbedError::DimensionMismatch {
                expected: EMBEDDING_DIM,
                got: values.len(),
            });
        }
        let norm: f64 = values
            .iter()
            .map(|v| f64::from(*v) * f64::from(*v))
            .sum::<f64>()
            .sqrt();
        let consistent = match norm_flag {
            NormFlag::UnitNorm => (norm - 1.0).abs() <= 1e-6,
            NormFlag::Zero => norm == 0.0,
        };
        if !consistent {
            return Err(EmbedError::Format(format!(
                "norm {norm} inconsistent with flag {norm_flag:?}"
            )));
        }
        Ok(EmbeddingVector { values, norm_flag })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm_flag(&self) -> NormFlag {
        self.norm_flag
    }
}

/// Cosine similarity, computed in f64. Zero vectors compare as 0.0;
/// identical non-zero vectors compare as exactly 1.0.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.values.iter().zip(&b.values) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Source of embedding vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

// ---------------------------------------------------------------------------
// Feature-hashing provider
// ---------------------------------------------------------------------------

/// Deterministic signed feature hashing: lowercase, split on
/// non-alphanumeric, FNV-1a 64 per token, signed accumulation at
/// `hash % 384`, then L2 normalization in f64.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashingProvider;

impl HashingProvider {
    pub fn embed_str(text: &str) -> EmbeddingVector {
        let mut acc = [0.0f64; EMBEDDING_DIM];
        let lowered = text.to_lowercase();
        for token in lowered.split(|c: char| !c.is_alphanumeric()) {
            if token.is_empty() {
                continue;
            }
            let hash = fnv1a64(token.as_bytes());
            let index = (hash % EMBEDDING_DIM as u64) as usize;
            let sign = if hash >> 63 == 1 { -1.0 } else { 1.0 };
            acc[index] += sign;
        }

        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return EmbeddingVector {
                values: vec![0.0; EMBEDDING_DIM],
                norm_flag: NormFlag::Zero,
            };
        }
        let values = acc.iter().map(|v| (v / norm) as f32).collect();
        EmbeddingVector {
            values,
            norm_flag: NormFlag::UnitNorm,
        }
    }
}

impl EmbeddingProvider for HashingProvider {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(Self::embed_str(text))
    }
}

// ---------------------------------------------------------------------------
// Remote provider
// ---------------------------------------------------------------------------

/// Client for an OpenAI-compatible `/embeddings` endpoint. Vectors are
/// re-normalized locally so the unit-norm invariant holds regardless of
/// provider behavior.
pub struct RemoteProvider {
    endpoint: String,
    model_id: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct WireEmbeddingResponse {
    data: Vec<WireEmbeddingRow>,
}

#[derive(Deserialize)]
struct WireEmbeddingRow {
    embedding: Vec<f64>,
}

impl RemoteProvider {
    pub fn new(endpoint: &str, model_id: &str, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        RemoteProvider {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model_id: model_id.to_string(),
            api_key,
            agent,
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let url = format!("{}/embeddings", self.endpoint);
        let body = serde_json::json!({ "model": self.model_id, "input": [text] });
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(&body)
            .map_err(|e| EmbedError::Provider(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(EmbedError::Provider(format!("status {status}")));
        }
        let parsed: WireEmbeddingResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Provider(format!("malformed response: {e}")))?;
        let row = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::Provider("response contained no embeddings".into()))?;
        if row.embedding.len() != EMBEDDING_DIM {
            return Err(EmbedError::DimensionMismatch {
                expected: EMBEDDING_DIM,
                got: row.embedding.len(),
            });
        }

        let norm = row.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(EmbeddingVector {
                values: vec![0.0; EMBEDDING_DIM],
                norm_flag: NormFlag::Zero,
            });
        }
        Ok(EmbeddingVector {
            values: row.embedding.iter().map(|v| (v / norm) as f32).collect(),
            norm_flag: NormFlag::UnitNorm,
        })
    }
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Row-per-post embedding matrix with a parallel id list.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: Vec<EmbeddingVector>,
    row_ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(rows: Vec<EmbeddingVector>, row_ids: Vec<String>) -> Result<Self, EmbedError> {
        if rows.len() != row_ids.len() {
            return Err(EmbedError::Format(format!(
                "{} rows but {} ids",
                rows.len(),
                row_ids.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &row_ids {
            if !seen.insert(id) {
                return Err(EmbedError::Format(format!("duplicate row id {id:?}")));
            }
        }
        Ok(EmbeddingMatrix { rows, row_ids })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[EmbeddingVector] {
        &self.rows
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }
}

/// Embed one post per row, in input order. Row i is the content of post i
/// (title, newline, body).
pub fn embed_corpus(
    posts: &[Post],
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingMatrix, EmbedError> {
    let mut rows = Vec::with_capacity(posts.len());
    let mut row_ids = Vec::with_capacity(posts.len());
    for post in posts {
        let vector = provider.embed(&post.content()).map_err(|e| match e {
            EmbedError::Provider(detail) => EmbedError::ProviderForPost {
                id: post.id.clone(),
                detail,
            },
            other => other,
        })?;
        rows.push(vector);
        row_ids.push(post.id.clone());
    }
    EmbeddingMatrix::new(rows, row_ids)
}

/// Embed a single text through the given provider.
pub fn embed_text(
    text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingVector, EmbedError> {
    provider.embed(text)
}

// ---------------------------------------------------------------------------
// Binary matrix artifact
// ---------------------------------------------------------------------------

const MATRIX_MAGIC: &[u8; 4] = b"EMB1";

/// Write a dense row-major f32 matrix: magic "EMB1", u32 row count,
/// u32 dimension, then little-endian 32-bit floats.
pub fn write_matrix_file<'a, I>(path: &Path, dimension: usize, rows: I) -> Result<(), EmbedError>
where
    I: ExactSizeIterator<Item = &'a [f32]>,
{
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&u32::try_from(rows.len()).expect("row count fits u32").to_le_bytes())?;
    out.write_all(&u32::try_from(dimension).expect("dimension fits u32").to_le_bytes())?;
    for row in rows {
        debug_assert_eq!(row.len(), dimension);
        for value in row {
            out.write_all(&value.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a matrix written by [`write_matrix_file`]. Returns (dimension, rows).
pub fn read_matrix_file(path: &Path) -> Result<(usize, Vec<Vec<f32>>), EmbedError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(EmbedError::Format(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word)?;
    let n_rows = u32::from_le_bytes(word) as usize;
    reader.read_exact(&mut word)?;
    let dimension = u32::from_le_bytes(word) as usize;

    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut row = Vec::with_capacity(dimension);
        for _ in 0..dimension {
            reader.read_exact(&mut word)?;
            row.push(f32::from_le_bytes(word));
        }
        rows.push(row);
    }
    // Trailing bytes mean a writer/reader mismatch.
    if reader.read(&mut word)? != 0 {
        return Err(EmbedError::Format("trailing bytes after matrix body".into()));
    }
    Ok((dimension, rows))
}

/// Sidecar id list: one id per line, parallel to the matrix rows.
pub fn write_ids_file(path: &Path, ids: &[String]) -> Result<(), EmbedError> {
    let mut out = BufWriter::new(File::create(path)?);
    for id in ids {
        out.write_all(id.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ids_file(path: &Path) -> Result<Vec<String>, EmbedError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Write an [`EmbeddingMatrix`] with its id sidecar next to it.
pub fn write_embedding_artifact(
    matrix: &EmbeddingMatrix,
    matrix_path: &Path,
    ids_path: &Path,
) -> Result<(), EmbedError> {
    write_matrix_file(
        matrix_path,
        EMBEDDING_DIM,
        matrix.rows().iter().map(|r| r.values()),
    )?;
    write_ids_file(ids_path, matrix.row_ids())
}

/// Read an embedding artifact back; vectors are flagged by recomputing
/// the norm.
pub fn read_embedding_artifact(
    matrix_path: &Path,
    ids_path: &Path,
) -> Result<EmbeddingMatrix, EmbedError> {
    let (dimension, raw_rows) = read_matrix_file(matrix_path)?;
    if dimension != EMBEDDING_DIM {
        return Err(EmbedError::DimensionMismatch {
            expected: EMBEDDING_DIM,
            got: dimension,
        });
    }
    let ids = read_ids_file(ids_path)?;
    let rows = raw_rows
        .into_iter()
        .map(|values| {
            let norm: f64 = values.iter().map(|v| f64::from(*v) * f64::from(*v)).sum();
            let flag = if norm == 0.0 { NormFlag::Zero } else { NormFlag::UnitNorm };
            EmbeddingVector {
                values,
                norm_flag: flag,
            }
        })
        .collect();
    EmbeddingMatrix::new(rows, ids)
}

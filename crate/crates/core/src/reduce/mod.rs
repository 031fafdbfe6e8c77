//! Native manifold reduction: exact kNN graph, fuzzy neighborhood
//! construction, and stochastic layout optimization projecting the 384-d
//! embeddings into a low-dimensional space for density clustering.

mod fuzzy;
mod knn;
mod layout;

pub use fuzzy::{fit_ab, fuzzy_union, smooth_knn};
pub use knn::{knn, knn_rows};
pub use layout::optimize_layout;

use crate::embed::{EmbedError, EmbeddingMatrix};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("need more points: n = {n} with k = {k}")]
    TooFewPoints { n: usize, k: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("curve fit did not converge within {0} iterations")]
    NonConvergence(usize),
    #[error(transparent)]
    Artifact(#[from] EmbedError),
}

/// Exact k-nearest-neighbor graph. Row i lists the k closest other points,
/// distances ascending, ties broken by smaller index, never including i
/// itself.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub neighbors: Vec<Vec<u32>>,
    pub distances: Vec<Vec<f64>>,
}

/// Per-point local geometry: `rho` is the distance to the nearest distinct
/// neighbor, `sigma` the bandwidth calibrated against log2(k).
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedKnn {
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// One undirected fuzzy edge, canonical orientation `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyEdge {
    pub i: u32,
    pub j: u32,
    pub weight: f64,
}

/// Symmetric weighted neighborhood graph with weights in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub n_points: usize,
    pub edges: Vec<FuzzyEdge>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Layout optimization parameters. `a`/`b` shape the low-dimensional
/// attraction curve and come from [`fit_ab`] over (`min_dist`, `spread`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutParams {
    pub n_components: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub a: f64,
    pub b: f64,
    pub epochs: usize,
    pub negative_sample_rate: usize,
    pub seed: u64,
}

impl LayoutParams {
    /// Reference defaults: 5 output components, 15 neighbors, min_dist 0.1,
    /// spread 1.0, 200 epochs, 5 negative samples per attraction.
    pub fn new(seed: u64) -> Result<Self, ReduceError> {
        Self::with_geometry(5, 15, 0.1, 1.0, seed)
    }

    pub fn with_geometry(
        n_components: usize,
        n_neighbors: usize,
        min_dist: f64,
        spread: f64,
        seed: u64,
    ) -> Result<Self, ReduceError> {
        if n_components == 0 {
            return Err(ReduceError::InvalidParams("n_components must be positive".into()));
        }
        if n_neighbors == 0 {
            return Err(ReduceError::InvalidParams("n_neighbors must be positive".into()));
        }
        let (a, b) = fit_ab(min_dist, spread)?;
        Ok(LayoutParams {
            n_components,
            n_neighbors,
            min_dist,
            spread,
            a,
            b,
            epochs: 200,
            negative_sample_rate: 5,
            seed,
        })
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_negative_sample_rate(mut self, rate: usize) -> Self {
        self.negative_sample_rate = rate;
        self
    }
}

/// Low-dimensional coordinates, rows parallel to the source matrix ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub coords: Vec<Vec<f64>>,
    pub row_ids: Vec<String>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.coords.first().map_or(0, Vec::len)
    }

    /// Persist in the same binary format as embeddings, f32 rounded.
    pub fn write_artifact(&self, matrix_path: &Path, ids_path: &Path) -> Result<(), ReduceError> {
        let rows: Vec<Vec<f32>> = self
            .coords
            .iter()
            .map(|row| row.iter().map(|v| *v as f32).collect())
            .collect();
        crate::embed::write_matrix_file(
            matrix_path,
            self.dimension(),
            rows.iter().map(|r| r.as_slice()),
        )?;
        crate::embed::write_ids_file(ids_path, &self.row_ids)?;
        Ok(())
    }

    pub fn read_artifact(matrix_path: &Path, ids_path: &Path) -> Result<Layout, ReduceError> {
        let (_, raw_rows) = crate::embed::read_matrix_file(matrix_path)?;
        let ids = crate::embed::read_ids_file(ids_path)?;
        if raw_rows.len() != ids.len() {
            return Err(ReduceError::Artifact(EmbedError::Format(format!(
                "{} rows but {} ids",
                raw_rows.len(),
                ids.len()
            ))));
        }
        Ok(Layout {
            coords: raw_rows
                .into_iter()
                .map(|row| row.into_iter().map(f64::from).collect())
                .collect(),
            row_ids: ids,
        })
    }

    /// `id,x,y` rows for a 2-d layout, header included. Ids containing
    /// commas or quotes are quoted per CSV convention.
    pub fn write_csv_2d(&self, path: &Path) -> Result<(), ReduceError> {
        if self.dimension() != 2 && !self.is_empty() {
            return Err(ReduceError::InvalidParams(format!(
                "csv export needs a 2-d layout, got {}-d",
                self.dimension()
            )));
        }
        let file = File::create(path).map_err(EmbedError::Io)?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>, s: &str| -> std::io::Result<()> {
            out.write_all(s.as_bytes())
        };
        write(&mut out, "id,x,y\n").map_err(EmbedError::Io)?;
        for (id, row) in self.row_ids.iter().zip(&self.coords) {
            let quoted = if id.contains(',') || id.contains('"') || id.contains('\n') {
                format!("\"{}\"", id.replace('"', "\"\""))
            } else {
                id.clone()
            };
            write(&mut out, &format!("{quoted},{},{}\n", row[0], row[1])).map_err(EmbedError::Io)?;
        }
        out.flush().map_err(EmbedError::Io)?;
        Ok(())
    }
}

/// Full reduction: kNN graph, smoothing, fuzzy union, layout optimization.
pub fn reduce_embeddings(
    matrix: &EmbeddingMatrix,
    params: &LayoutParams,
) -> Result<Layout, ReduceError> {
    let graph = knn(matrix, params.n_neighbors)?;
    let smoothed = smooth_knn(&graph);
    let fgraph = fuzzy_union(&graph, &smoothed);
    optimize_layout(&fgraph, params, matrix.row_ids().to_vec())
}

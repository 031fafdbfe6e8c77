//! Native density clustering: core distances, mutual reachability, an
//! O(n²) Prim spanning tree, condensed-tree construction under
//! `min_cluster_size`, and excess-of-mass cluster extraction with noise
//! labeling.

mod mst;
mod tree;

pub use mst::mst;
pub use tree::{condense, extract, Extraction};

use crate::reduce::Layout;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need more points: n = {n} with min_samples = {min_samples}")]
    TooFewPoints { n: usize, min_samples: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Density parameters. Both must be at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            min_cluster_size: 20,
            min_samples: 20,
        }
    }
}

impl ClusterParams {
    pub fn new(min_cluster_size: usize, min_samples: usize) -> Result<Self, ClusterError> {
        let params = ClusterParams {
            min_cluster_size,
            min_samples,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.min_cluster_size < 2 || self.min_samples < 2 {
            return Err(ClusterError::InvalidParams(format!(
                "min_cluster_size {} and min_samples {} must both be >= 2",
                self.min_cluster_size, self.min_samples
            )));
        }
        Ok(())
    }
}

/// One mutual-reachability spanning-tree edge, canonical `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

/// A condensed-tree cluster node. Node 0 is the root, born at lambda 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedNode {
    pub parent: Option<usize>,
    pub lambda_birth: f64,
    pub lambda_death: f64,
    /// Points inside the node at birth.
    pub size: usize,
}

/// The moment a point falls out of the hierarchy: which node it left and
/// at what density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointExit {
    pub point: usize,
    pub node: usize,
    pub lambda: f64,
}

/// Cluster hierarchy pruned by `min_cluster_size`. Every input point exits
/// exactly once; child birth densities never precede the parent's.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedTree {
    pub nodes: Vec<CondensedNode>,
    pub exits: Vec<PointExit>,
    pub n_points: usize,
}

/// Final clustering: labels (-1 = noise, clusters 0..K-1 by decreasing
/// size), per-cluster stability, and the intermediate structures.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub labels: Vec<i32>,
    pub stabilities: Vec<f64>,
    pub mst: Vec<MstEdge>,
    pub tree: CondensedTree,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.stabilities.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_clusters()];
        for label in &self.labels {
            if *label >= 0 {
                sizes[*label as usize] += 1;
            }
        }
        sizes
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| **l < 0).count()
    }

    /// Per-point exit density, aligned with `labels`.
    pub fn exit_lambdas(&self) -> Vec<f64> {
        let mut lambdas = vec![0.0f64; self.tree.n_points];
        for exit in &self.tree.exits {
            lambdas[exit.point] = exit.lambda;
        }
        lambdas
    }
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Core distance of each point: its (min_samples - 1)-th smallest distance
/// to another point, the point itself counting as its own 0th neighbor.
pub fn core_distances(layout: &Layout, min_samples: usize) -> Result<Vec<f64>, ClusterError> {
    let n = layout.len();
    if min_samples < 2 {
        return Err(ClusterError::InvalidParams(
            "min_samples must be >= 2".into(),
        ));
    }
    if n <= min_samples {
        return Err(ClusterError::TooFewPoints { n, min_samples });
    }

    let rank = min_samples - 2; // index into sorted other-distances
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<f64> = (0..n)
                .filter(|j| *j != i)
                .map(|j| euclidean(&layout.coords[i], &layout.coords[j]))
                .collect();
            let (_, kth, _) = dists.select_nth_unstable_by(rank, f64::total_cmp);
            *kth
        })
        .collect())
}

/// `max(core_a, core_b, d_ab)`: the metric the spanning tree is built on.
pub fn mutual_reachability(d_ab: f64, core_a: f64, core_b: f64) -> f64 {
    d_ab.max(core_a).max(core_b)
}

/// Run the full clustering stack over a layout.
pub fn cluster(layout: &Layout, params: &ClusterParams) -> Result<ClusterModel, ClusterError> {
    params.validate()?;
    let cores = core_distances(layout, params.min_samples)?;
    let edges = mst(&layout.coords, &cores);
    let tree = condense(&edges, layout.len(), params.min_cluster_size);
    let Extraction { labels, stabilities } = extract(&tree);
    Ok(ClusterModel {
        labels,
        stabilities,
        mst: edges,
        tree,
    })
}

// ---------------------------------------------------------------------------
// Stage artifacts
// ---------------------------------------------------------------------------

/// One `clusters.jsonl` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub id: String,
    pub cluster: i32,
    pub lambda_exit: f64,
}

/// Write `clusters.jsonl` (`{"id","cluster","lambda_exit"}` per point) and
/// `clusters_meta.json` (per-cluster size and stability).
pub fn write_cluster_artifacts(
    model: &ClusterModel,
    row_ids: &[String],
    assignments_path: &Path,
    meta_path: &Path,
) -> Result<(), ClusterError> {
    #[derive(Serialize)]
    struct Meta {
        cluster: usize,
        size: usize,
        stability: f64,
    }

    let lambdas = model.exit_lambdas();
    let mut out = BufWriter::new(File::create(assignments_path)?);
    for (i, id) in row_ids.iter().enumerate() {
        let row = ClusterAssignment {
            id: id.clone(),
            cluster: model.labels[i],
            lambda_exit: lambdas[i],
        };
        serde_json::to_writer(&mut out, &row).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let sizes = model.cluster_sizes();
    let meta: Vec<Meta> = model
        .stabilities
        .iter()
        .enumerate()
        .map(|(cluster, stability)| Meta {
            cluster,
            size: sizes[cluster],
            stability: *stability,
        })
        .collect();
    let file = File::create(meta_path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), &meta).map_err(std::io::Error::other)?;
    Ok(())
}

/// Read `clusters.jsonl` back, preserving row order.
pub fn read_cluster_assignments(path: &Path) -> Result<Vec<ClusterAssignment>, ClusterError> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(rows)
}

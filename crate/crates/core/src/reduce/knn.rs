//! Exact brute-force k-nearest-neighbor search.
//!
//! Quadratic but deterministic: at corpus scale (n in the low tens of
//! thousands) this is tractable and removes the nondeterminism an
//! approximate index would introduce.

use super::{KnnGraph, ReduceError};
use crate::embed::EmbeddingMatrix;
use rayon::prelude::*;

/// Exact Euclidean kNN over raw rows. Ties break toward the smaller index;
/// a point is never its own neighbor.
pub fn knn_rows(rows: &[&[f32]], k: usize) -> Result<KnnGraph, ReduceError> {
    let n = rows.len();
    if k < 1 || n <= k {
        return Err(ReduceError::TooFewPoints { n, k });
    }

    let per_point: Vec<(Vec<u32>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut candidates: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut d2 = 0.0f64;
                for (x, y) in rows[i].iter().zip(rows[j]) {
                    let diff = f64::from(*x) - f64::from(*y);
                    d2 += diff * diff;
                }
                candidates.push((d2, j as u32));
            }
            // Total order: squared distance, then index.
            candidates.select_nth_unstable_by(k - 1, |a, b| {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
            });
            candidates.truncate(k);
            candidates.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            let neighbors = candidates.iter().map(|(_, j)| *j).collect();
            let distances = candidates.iter().map(|(d2, _)| d2.sqrt()).collect();
            (neighbors, distances)
        })
        .collect();

    let mut neighbors = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for (nbrs, dists) in per_point {
        neighbors.push(nbrs);
        distances.push(dists);
    }
    Ok(KnnGraph {
        k,
        neighbors,
        distances,
    })
}

/// Exact kNN over an embedding matrix.
pub fn knn(matrix: &EmbeddingMatrix, k: usize) -> Result<KnnGraph, ReduceError> {
    let rows: Vec<&[f32]> = matrix.rows().iter().map(|r| r.values()).collect();
    knn_rows(&rows, k)
}

//! Stochastic layout optimization over the fuzzy graph.
//!
//! Single-threaded and seeded: two runs with the same graph and seed are
//! bitwise identical, which the pipeline's determinism guarantees depend
//! on. Edges fire on an epochs-per-sample schedule proportional to their
//! weight; each attraction is paired with uniform negative samples from
//! both endpoints.

use super::{FuzzyGraph, Layout, LayoutParams, ReduceError};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Per-coordinate gradient clip bound.
const GRAD_CLIP: f64 = 4.0;
/// Repulsion denominator offset keeping gradients finite at zero distance.
const REPULSION_EPS: f64 = 0.001;

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

/// Optimize a seeded random layout of `fgraph` into
/// `params.n_components` dimensions.
pub fn optimize_layout(
    fgraph: &FuzzyGraph,
    params: &LayoutParams,
    row_ids: Vec<String>,
) -> Result<Layout, ReduceError> {
    let n = fgraph.n_points;
    let dim = params.n_components;
    if n < dim {
        return Err(ReduceError::TooFewPoints { n, k: dim });
    }
    if row_ids.len() != n {
        return Err(ReduceError::InvalidParams(format!(
            "{} row ids for {n} points",
            row_ids.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut coords = vec![0.0f64; n * dim];
    for value in coords.iter_mut() {
        *value = rng.gen_range(-10.0..10.0);
    }

    let (a, b) = (params.a, params.b);
    let max_weight = fgraph.edges.iter().map(|e| e.weight).fold(0.0f64, f64::max);
    if max_weight > 0.0 && params.epochs > 0 {
        // Weight-proportional schedule: an edge with weight w fires every
        // max_w / w epochs, the heaviest edge every epoch.
        let epochs_per_sample: Vec<f64> =
            fgraph.edges.iter().map(|e| max_weight / e.weight).collect();
        let mut next_due: Vec<f64> = epochs_per_sample.clone();

        for epoch in 1..=params.epochs {
            let alpha = 1.0 - (epoch - 1) as f64 / params.epochs as f64;
            let now = epoch as f64;
            for (e, edge) in fgraph.edges.iter().enumerate() {
                if next_due[e] > now {
                    continue;
                }
                next_due[e] += epochs_per_sample[e];

                let (pi, pj) = (edge.i as usize, edge.j as usize);
                attract(&mut coords, dim, pi, pj, a, b, alpha);
                for _ in 0..params.negative_sample_rate {
                    let target = rng.gen_range(0..n);
                    repulse(&mut coords, dim, pi, target, a, b, alpha);
                    let target = rng.gen_range(0..n);
                    repulse(&mut coords, dim, pj, target, a, b, alpha);
                }
            }
        }
    }

    debug_assert!(coords.iter().all(|v| v.is_finite()));
    let rows = coords.chunks_exact(dim).map(<[f64]>::to_vec).collect();
    Ok(Layout {
        coords: rows,
        row_ids,
    })
}

fn squared_distance(coords: &[f64], dim: usize, p: usize, q: usize) -> f64 {
    let (p, q) = (p * dim, q * dim);
    let mut d2 = 0.0;
    for d in 0..dim {
        let diff = coords[p + d] - coords[q + d];
        d2 += diff * diff;
    }
    d2
}

/// Pull both endpoints together along the gradient of
/// `1 / (1 + a * d^(2b))`.
fn attract(coords: &mut [f64], dim: usize, p: usize, q: usize, a: f64, b: f64, alpha: f64) {
    let d2 = squared_distance(coords, dim, p, q);
    let coeff = if d2 > 0.0 {
        (-2.0 * a * b * d2.powf(b - 1.0)) / (1.0 + a * d2.powf(b))
    } else {
        0.0
    };
    let (po, qo) = (p * dim, q * dim);
    for d in 0..dim {
        let grad = clip(coeff * (coords[po + d] - coords[qo + d]));
        coords[po + d] += alpha * grad;
        coords[qo + d] -= alpha * grad;
    }
}

/// Push `p` away from a uniformly sampled point.
fn repulse(coords: &mut [f64], dim: usize, p: usize, target: usize, a: f64, b: f64, alpha: f64) {
    if p == target {
        return;
    }
    let d2 = squared_distance(coords, dim, p, target);
    let (po, to) = (p * dim, target * dim);
    if d2 > 0.0 {
        let coeff = (2.0 * b) / ((REPULSION_EPS + d2) * (1.0 + a * d2.powf(b)));
        for d in 0..dim {
            let grad = clip(coeff * (coords[po + d] - coords[to + d]));
            coords[po + d] += alpha * grad;
        }
    } else {
        // Coincident points: full-strength shove apart.
        for d in 0..dim {
            coords[po + d] += alpha * GRAD_CLIP;
        }
    }
}

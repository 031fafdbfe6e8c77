//! Local bandwidth calibration, fuzzy graph construction, and the
//! low-dimensional attraction-curve fit.

use super::{FuzzyEdge, FuzzyGraph, KnnGraph, ReduceError, SmoothedKnn};
use std::collections::BTreeMap;

/// Bisection iteration cap for the per-point bandwidth solve.
const SIGMA_MAX_ITER: usize = 64;
/// Early-exit residual for the bandwidth solve.
const SIGMA_TOLERANCE: f64 = 1e-5;
/// Bandwidth floor factor applied to the mean row distance.
const SIGMA_FLOOR_FACTOR: f64 = 1e-3;

/// Calibrate per-point (rho, sigma).
///
/// `rho` is the smallest strictly positive neighbor distance (0 when the
/// whole row is duplicates). `sigma` solves
/// `sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)` by bisection, then is
/// floored at 1e-3 of the mean row distance. Rows where the equation has
/// no root (all distances equal to rho) drive the search toward zero and
/// land on the floor.
pub fn smooth_knn(graph: &KnnGraph) -> SmoothedKnn {
    let k = graph.k;
    let target = (k as f64).log2();
    let n = graph.distances.len();
    let mut rho = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);

    for dists in &graph.distances {
        let point_rho = dists.iter().copied().find(|d| *d > 0.0).unwrap_or(0.0);

        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        let mut mid = 1.0f64;
        for _ in 0..SIGMA_MAX_ITER {
            let sum: f64 = dists
                .iter()
                .map(|d| (-((d - point_rho).max(0.0)) / mid).exp())
                .sum();
            if (sum - target).abs() <= SIGMA_TOLERANCE {
                break;
            }
            if sum > target {
                hi = mid;
                mid = (lo + hi) / 2.0;
            } else {
                lo = mid;
                mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
            }
        }

        let mean = dists.iter().sum::<f64>() / k as f64;
        // The absolute floor keeps the division defined for all-duplicate
        // rows, where the mean itself is zero.
        let point_sigma = mid.max(SIGMA_FLOOR_FACTOR * mean).max(1e-12);
        rho.push(point_rho);
        sigma.push(point_sigma);
    }

    SmoothedKnn { rho, sigma }
}

/// Directed membership weights combined by probabilistic union:
/// `w = w_ij + w_ji - w_ij * w_ji`. Zero-weight pairs are dropped and
/// results clamped into (0, 1].
pub fn fuzzy_union(graph: &KnnGraph, smoothed: &SmoothedKnn) -> FuzzyGraph {
    let mut directed: BTreeMap<(u32, u32), [f64; 2]> = BTreeMap::new();
    for (i, (nbrs, dists)) in graph.neighbors.iter().zip(&graph.distances).enumerate() {
        let i = i as u32;
        for (j, d) in nbrs.iter().zip(dists) {
            let w = (-((d - smoothed.rho[i as usize]).max(0.0)) / smoothed.sigma[i as usize]).exp();
            let (key, slot) = if i < *j { ((i, *j), 0) } else { ((*j, i), 1) };
            directed.entry(key).or_insert([0.0, 0.0])[slot] = w;
        }
    }

    let edges: Vec<FuzzyEdge> = directed
        .into_iter()
        .filter_map(|((i, j), [wij, wji])| {
            let weight = (wij + wji - wij * wji).min(1.0);
            (weight > 0.0).then_some(FuzzyEdge { i, j, weight })
        })
        .collect();

    FuzzyGraph {
        n_points: graph.neighbors.len(),
        edges,
        rho: smoothed.rho.clone(),
        sigma: smoothed.sigma.clone(),
    }
}

/// Least-squares fit of `f(d) = 1 / (1 + a * d^(2b))` to the piecewise
/// target (1 up to `min_dist`, exponential decay with scale `spread`
/// beyond) over 300 grid points on (0, 3 * spread].
///
/// Solved by Levenberg-Marquardt with analytic Jacobian from (1, 1).
pub fn fit_ab(min_dist: f64, spread: f64) -> Result<(f64, f64), ReduceError> {
    if !(min_dist > 0.0 && min_dist < spread * 10.0) {
        return Err(ReduceError::InvalidParams(format!(
            "need 0 < min_dist < spread * 10, got min_dist {min_dist}, spread {spread}"
        )));
    }

    const GRID: usize = 300;
    const MAX_ITER: usize = 200;
    let d: Vec<f64> = (0..GRID).map(|i| 3.0 * spread * (i + 1) as f64 / GRID as f64).collect();
    let y: Vec<f64> = d
        .iter()
        .map(|x| if *x <= min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();

    let ssr = |a: f64, b: f64| -> f64 {
        d.iter()
            .zip(&y)
            .map(|(x, t)| {
                let f = 1.0 / (1.0 + a * x.powf(2.0 * b));
                (t - f) * (t - f)
            })
            .sum()
    };

    let mut a = 1.0f64;
    let mut b = 1.0f64;
    let mut lambda = 1e-3f64;
    let mut current = ssr(a, b);

    for _ in 0..MAX_ITER {
        // Accumulate J^T J and J^T r with J the model gradient.
        let (mut jaa, mut jab, mut jbb) = (0.0f64, 0.0f64, 0.0f64);
        let (mut ga, mut gb) = (0.0f64, 0.0f64);
        for (x, t) in d.iter().zip(&y) {
            let pow = x.powf(2.0 * b);
            let denom = 1.0 + a * pow;
            let f = 1.0 / denom;
            let residual = t - f;
            let ja = -pow / (denom * denom);
            let jb = -2.0 * a * pow * x.ln() / (denom * denom);
            jaa += ja * ja;
            jab += ja * jb;
            jbb += jb * jb;
            ga += ja * residual;
            gb += jb * residual;
        }

        let m00 = jaa * (1.0 + lambda);
        let m11 = jbb * (1.0 + lambda);
        let det = m00 * m11 - jab * jab;
        if det.abs() < 1e-30 {
            lambda *= 10.0;
            continue;
        }
        let da = (ga * m11 - gb * jab) / det;
        let db = (gb * m00 - ga * jab) / det;

        let (na, nb) = (a + da, b + db);
        if na <= 0.0 || nb <= 0.0 {
            lambda *= 3.0;
            continue;
        }
        let next = ssr(na, nb);
        if next < current {
            let improvement = current - next;
            a = na;
            b = nb;
            current = next;
            lambda = (lambda / 3.0).max(1e-12);
            if improvement < 1e-14 || (da * da + db * db).sqrt() < 1e-12 {
                log::debug!("fit_ab({min_dist}, {spread}) -> a {a:.6} b {b:.6} ssr {current:.3e}");
                return Ok((a, b));
            }
        } else {
            lambda *= 3.0;
            if lambda > 1e12 {
                // Stalled: the current point is the minimum to working precision.
                log::debug!("fit_ab({min_dist}, {spread}) -> a {a:.6} b {b:.6} ssr {current:.3e}");
                return Ok((a, b));
            }
        }
    }

    Err(ReduceError::NonConvergence(MAX_ITER))
}

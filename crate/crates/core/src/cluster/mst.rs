//! Prim's algorithm over the implicit complete mutual-reachability graph:
//! O(n²) time, O(n) memory, no materialized distance matrix.

use super::{mutual_reachability, MstEdge};

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Minimum spanning tree of the mutual-reachability graph. Returns n - 1
/// edges in canonical `a < b` form; ties pick the smaller candidate
/// vertex.
pub fn mst(coords: &[Vec<f64>], cores: &[f64]) -> Vec<MstEdge> {
    let n = coords.len();
    if n < 2 {
        return Vec::new();
    }

    let mut in_tree = vec![false; n];
    let mut best_dist = vec![f64::INFINITY; n];
    let mut best_src = vec![0u32; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0usize;
    in_tree[0] = true;

    for _ in 1..n {
        // Relax keys against the vertex just added. Strict improvement
        // keeps the earliest source on ties.
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let d = euclidean(&coords[current], &coords[v]);
            let mrd = mutual_reachability(d, cores[current], cores[v]);
            if mrd < best_dist[v] {
                best_dist[v] = mrd;
                best_src[v] = current as u32;
            }
        }

        let mut pick = usize::MAX;
        let mut pick_dist = f64::INFINITY;
        for v in 0..n {
            if !in_tree[v] && best_dist[v] < pick_dist {
                pick = v;
                pick_dist = best_dist[v];
            }
        }

        let src = best_src[pick];
        let (a, b) = if src < pick as u32 { (src, pick as u32) } else { (pick as u32, src) };
        edges.push(MstEdge {
            a,
            b,
            weight: pick_dist,
        });
        in_tree[pick] = true;
        current = pick;
    }

    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent Kruskal oracle over the same mutual-reachability graph.
    pub(crate) fn kruskal_total_weight(coords: &[Vec<f64>], cores: &[f64]) -> f64 {
        let n = coords.len();
        let mut edges = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclidean(&coords[i], &coords[j]);
                edges.push((mutual_reachability(d, cores[i], cores[j]), i, j));
            }
        }
        edges.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }

        let mut picked = Vec::with_capacity(n - 1);
        for (w, i, j) in edges {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri] = rj;
                picked.push(w);
                if picked.len() == n - 1 {
                    break;
                }
            }
        }
        // Canonical summation order so equality with Prim is exact.
        picked.sort_by(f64::total_cmp);
        picked.iter().sum()
    }

    pub(crate) fn sorted_total_weight(edges: &[MstEdge]) -> f64 {
        let mut weights: Vec<f64> = edges.iter().map(|e| e.weight).collect();
        weights.sort_by(f64::total_cmp);
        weights.iter().sum()
    }

    #[test]
    fn three_point_hand_case() {
        // Pairwise mutual-reachability distances {01: 1, 12: 2, 02: 3};
        // enumeration of the three spanning trees gives {01, 12}, weight 3.
        let coords = vec![vec![0.0], vec![1.0], vec![3.0]];
        let cores = vec![0.0; 3];
        let edges = mst(&coords, &cores);
        assert_eq!(edges.len(), 2);
        assert_eq!((edges[0].a, edges[0].b, edges[0].weight), (0, 1, 1.0));
        assert_eq!((edges[1].a, edges[1].b, edges[1].weight), (1, 2, 2.0));
        assert_eq!(sorted_total_weight(&edges), 3.0);
    }

    #[test]
    fn two_points_single_edge() {
        let coords = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        let edges = mst(&coords, &[0.0, 0.0]);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].weight, 5.0);
    }

    #[test]
    fn core_distances_dominate_short_edges() {
        // Large cores inflate every pairwise distance to the core value.
        let coords = vec![vec![0.0], vec![0.1], vec![0.2]];
        let cores = vec![5.0, 5.0, 5.0];
        let edges = mst(&coords, &cores);
        assert!(edges.iter().all(|e| e.weight == 5.0));
    }

    proptest! {
        // Total weight matches the Kruskal oracle exactly: same arithmetic,
        // canonical summation order on both sides.
        #[test]
        fn matches_kruskal_oracle(
            points in proptest::collection::vec(proptest::collection::vec(-100i32..100, 5), 2..60),
            core_seed in any::<u32>(),
        ) {
            let coords: Vec<Vec<f64>> = points.iter()
                .map(|p| p.iter().map(|v| f64::from(*v) / 7.0).collect())
                .collect();
            let cores: Vec<f64> = (0..coords.len())
                .map(|i| f64::from(core_seed.wrapping_add((i as u32).wrapping_mul(2654435761)) % 50) / 10.0)
                .collect();
            let edges = mst(&coords, &cores);
            prop_assert_eq!(edges.len(), coords.len() - 1);
            let prim_total = sorted_total_weight(&edges);
            let kruskal_total = kruskal_total_weight(&coords, &cores);
            prop_assert_eq!(prim_total, kruskal_total);
        }
    }
}

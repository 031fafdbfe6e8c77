//! Single-linkage hierarchy, condensed-tree construction, and
//! excess-of-mass cluster extraction.

use super::{CondensedNode, CondensedTree, MstEdge, PointExit};

/// Zero-distance merges cap lambda at 1 / this epsilon, keeping duplicate
/// points finite and deterministic.
const ZERO_DISTANCE_EPS: f64 = 1e-12;

/// Single-linkage dendrogram in array form. Internal node `s` (entry id
/// `n + s`) merges two earlier components at `dist[s]`.
struct SingleLinkage {
    left: Vec<usize>,
    right: Vec<usize>,
    dist: Vec<f64>,
    size: Vec<usize>,
    n_points: usize,
}

impl SingleLinkage {
    fn entry_size(&self, entry: usize) -> usize {
        if entry < self.n_points {
            1
        } else {
            self.size[entry - self.n_points]
        }
    }

    /// Leaf points under an entry.
    fn collect_points(&self, entry: usize, out: &mut Vec<usize>) {
        let mut stack = vec![entry];
        while let Some(e) = stack.pop() {
            if e < self.n_points {
                out.push(e);
            } else {
                let s = e - self.n_points;
                stack.push(self.left[s]);
                stack.push(self.right[s]);
            }
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(entries: usize) -> Self {
        UnionFind {
            parent: (0..entries).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

fn single_linkage(edges: &[MstEdge], n: usize) -> SingleLinkage {
    let mut sorted: Vec<&MstEdge> = edges.iter().collect();
    sorted.sort_by(|x, y| x.weight.total_cmp(&y.weight).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));

    let mut sl = SingleLinkage {
        left: Vec::with_capacity(n - 1),
        right: Vec::with_capacity(n - 1),
        dist: Vec::with_capacity(n - 1),
        size: Vec::with_capacity(n - 1),
        n_points: n,
    };
    let mut uf = UnionFind::new(2 * n - 1);

    for (step, edge) in sorted.iter().enumerate() {
        let ra = uf.find(edge.a as usize);
        let rb = uf.find(edge.b as usize);
        debug_assert_ne!(ra, rb, "mst edges never form a cycle");
        let node = n + step;
        sl.left.push(ra);
        sl.right.push(rb);
        sl.dist.push(edge.weight);
        sl.size.push(sl.entry_size(ra) + sl.entry_size(rb));
        uf.parent[ra] = node;
        uf.parent[rb] = node;
    }
    sl
}

/// Condense the single-linkage hierarchy under `min_cluster_size`.
///
/// Walking top-down, a merge is a true split only when both sides hold at
/// least `min_cluster_size` points; otherwise the smaller side's points
/// exit the current node at that merge's lambda (1 / distance). Node 0 is
/// the root, born at lambda 0.
pub fn condense(edges: &[MstEdge], n_points: usize, min_cluster_size: usize) -> CondensedTree {
    if n_points == 0 {
        return CondensedTree {
            nodes: vec![CondensedNode {
                parent: None,
                lambda_birth: 0.0,
                lambda_death: 0.0,
                size: 0,
            }],
            exits: Vec::new(),
            n_points: 0,
        };
    }
    if n_points == 1 {
        return CondensedTree {
            nodes: vec![CondensedNode {
                parent: None,
                lambda_birth: 0.0,
                lambda_death: 0.0,
                size: 1,
            }],
            exits: vec![PointExit {
                point: 0,
                node: 0,
                lambda: 0.0,
            }],
            n_points: 1,
        };
    }

    debug_assert_eq!(edges.len(), n_points - 1, "spanning tree edge count");
    let sl = single_linkage(edges, n_points);

    let mut nodes = vec![CondensedNode {
        parent: None,
        lambda_birth: 0.0,
        lambda_death: f64::INFINITY,
        size: n_points,
    }];
    let mut exits: Vec<PointExit> = Vec::with_capacity(n_points);
    let mut scratch = Vec::new();

    let root_entry = 2 * n_points - 2;
    let mut stack = vec![(root_entry, 0usize)];
    while let Some((entry, cnode)) = stack.pop() {
        let s = entry - n_points;
        let lambda = 1.0 / sl.dist[s].max(ZERO_DISTANCE_EPS);
        let (left, right) = (sl.left[s], sl.right[s]);
        let left_big = sl.entry_size(left) >= min_cluster_size;
        let right_big = sl.entry_size(right) >= min_cluster_size;

        let exit_side = |side: usize, exits: &mut Vec<PointExit>, scratch: &mut Vec<usize>| {
            scratch.clear();
            sl.collect_points(side, scratch);
            for point in scratch.iter() {
                exits.push(PointExit {
                    point: *point,
                    node: cnode,
                    lambda,
                });
            }
        };

        match (left_big, right_big) {
            (true, true) => {
                nodes[cnode].lambda_death = lambda;
                for side in [left, right] {
                    let id = nodes.len();
                    nodes.push(CondensedNode {
                        parent: Some(cnode),
                        lambda_birth: lambda,
                        lambda_death: f64::INFINITY,
                        size: sl.entry_size(side),
                    });
                    stack.push((side, id));
                }
            }
            (true, false) => {
                exit_side(right, &mut exits, &mut scratch);
                stack.push((left, cnode));
            }
            (false, true) => {
                exit_side(left, &mut exits, &mut scratch);
                stack.push((right, cnode));
            }
            (false, false) => {
                // The node depletes here: everything on both sides exits.
                nodes[cnode].lambda_death = lambda;
                exit_side(left, &mut exits, &mut scratch);
                exit_side(right, &mut exits, &mut scratch);
            }
        }
    }

    debug_assert_eq!(exits.len(), n_points, "every point exits exactly once");
    CondensedTree {
        nodes,
        exits,
        n_points,
    }
}

/// Labels and per-cluster stabilities extracted from a condensed tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub labels: Vec<i32>,
    pub stabilities: Vec<f64>,
}

/// Excess-of-mass selection.
///
/// `stability(C)` sums `lambda_exit - lambda_birth(C)` over the points
/// that exit C directly. Bottom-up, a node is kept only when its own
/// stability strictly exceeds the summed stability of its selected
/// descendants, which it then replaces. The root is never a candidate.
/// Points exiting inside a selected subtree take that cluster's label;
/// everything else is noise. Final labels are renumbered by decreasing
/// member count, ties by earlier birth lambda.
pub fn extract(tree: &CondensedTree) -> Extraction {
    let m = tree.nodes.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (id, node) in tree.nodes.iter().enumerate().skip(1) {
        children[node.parent.expect("non-root has a parent")].push(id);
    }

    let mut stability = vec![0.0f64; m];
    for exit in &tree.exits {
        stability[exit.node] += exit.lambda - tree.nodes[exit.node].lambda_birth;
    }

    let mut selected = vec![false; m];
    let mut subtree_stability = vec![0.0f64; m];
    for id in (1..m).rev() {
        let child_sum: f64 = children[id].iter().map(|c| subtree_stability[*c]).sum();
        if stability[id] > child_sum {
            selected[id] = true;
            subtree_stability[id] = stability[id];
            let mut queue: Vec<usize> = children[id].clone();
            while let Some(c) = queue.pop() {
                selected[c] = false;
                queue.extend(children[c].iter().copied());
            }
        } else {
            subtree_stability[id] = child_sum;
        }
    }

    let mut chosen: Vec<usize> = (1..m).filter(|id| selected[*id]).collect();
    chosen.sort_by(|x, y| {
        tree.nodes[*y]
            .size
            .cmp(&tree.nodes[*x].size)
            .then(tree.nodes[*x].lambda_birth.total_cmp(&tree.nodes[*y].lambda_birth))
            .then(x.cmp(y))
    });

    // Map every node to the selected cluster owning its subtree, if any.
    let mut owner: Vec<Option<usize>> = vec![None; m];
    for (rank, id) in chosen.iter().enumerate() {
        let mut queue = vec![*id];
        while let Some(v) = queue.pop() {
            owner[v] = Some(rank);
            queue.extend(children[v].iter().copied());
        }
    }

    let mut labels = vec![-1i32; tree.n_points];
    for exit in &tree.exits {
        if let Some(rank) = owner[exit.node] {
            labels[exit.point] = rank as i32;
        }
    }
    let stabilities = chosen.iter().map(|id| stability[*id]).collect();
    Extraction { labels, stabilities }
}

//! Spanning trees judged as universal Steiner trees: the subtree a terminal
//! set induces, optimal and 2-approximate Steiner weights, and a sampled scan
//! for the worst ratio between the two.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, VertexSet, WeightedGraph};
use crate::rng::{derive_seed, rng};

/// Largest terminal set `exact_steiner` accepts.
pub const EXACT_TERMINALS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanningTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    /// Weight of the edge to the parent; zero at the root.
    pub up_weight: Vec<f64>,
}

impl SpanningTree {
    /// Checks that `parent` describes a spanning tree of `g` rooted at `root`
    /// and picks up the edge weights from `g`.
    pub fn from_parents(g: &WeightedGraph, root: usize, parent: Vec<Option<usize>>) -> Result<Self> {
        let n = g.n();
        if parent.len() != n || root >= n || parent[root].is_some() {
            return Err(Error::InvalidGraph("parent array must cover the graph with a parentless root".into()));
        }
        let mut up_weight = vec![0.0; n];
        for v in 0..n {
            if v == root {
                continue;
            }
            let p = parent[v].ok_or_else(|| Error::InvalidGraph(format!("vertex {v} has no parent")))?;
            up_weight[v] =
                g.weight(v, p).ok_or_else(|| Error::InvalidGraph(format!("tree edge ({v}, {p}) not in graph")))?;
        }
        // every vertex must reach the root without revisiting
        let mut state = vec![0u8; n];
        state[root] = 2;
        for v in 0..n {
            let mut trail = Vec::new();
            let mut x = v;
            while state[x] == 0 {
                state[x] = 1;
                trail.push(x);
                x = parent[x].expect("checked");
            }
            if state[x] == 1 {
                return Err(Error::InvalidGraph(format!("parent array has a cycle through {x}")));
            }
            for y in trail {
                state[y] = 2;
            }
        }
        Ok(SpanningTree { root, parent, up_weight })
    }

    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.up_weight.iter().sum()
    }

    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n()).filter_map(|v| self.parent[v].map(|p| (v, p, self.up_weight[v]))).collect()
    }

    pub fn as_graph(&self) -> WeightedGraph {
        WeightedGraph::new(self.n(), self.edges()).expect("tree edges")
    }
}

/// Shortest-path tree from `root` with the deterministic tie-breaking of
/// the graph searches.
pub fn shortest_path_tree(g: &WeightedGraph, root: usize) -> Result<SpanningTree> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let res = graph::dijkstra(g, root);
    SpanningTree::from_parents(g, root, res.parent)
}

/// Weight of the smallest subtree of `t` connecting `s`. The root must be a
/// terminal.
pub fn induced_subtree_weight(t: &SpanningTree, s: &VertexSet) -> Result<f64> {
    if !s.contains(t.root) {
        return Err(Error::Precondition(format!("terminal set must contain the root {}", t.root)));
    }
    let mut used = vec![false; t.n()];
    used[t.root] = true;
    let mut total = 0.0;
    for &v in s.iter() {
        let mut x = v;
        while !used[x] {
            used[x] = true;
            total += t.up_weight[x];
            x = t.parent[x].expect("non-root has a parent");
        }
    }
    Ok(total)
}

/// Optimal Steiner tree weight by dynamic programming over terminal subsets.
pub fn exact_steiner(g: &WeightedGraph, s: &VertexSet) -> Result<f64> {
    let k = s.len();
    if k > EXACT_TERMINALS {
        return Err(Error::SearchBudget(format!(
            "{k} terminals exceed the exact limit of {EXACT_TERMINALS}; use approx_steiner"
        )));
    }
    if k <= 1 {
        return Ok(0.0);
    }
    let n = g.n();
    // terminal 0 is the root of the DP; masks range over the other k-1
    let rest = &s[1..];
    let full = (1usize << rest.len()) - 1;
    let mut dp = vec![Vec::new(); full + 1];
    for (i, &t) in rest.iter().enumerate() {
        dp[1 << i] = graph::distances(g, t);
    }
    for mask in 1..=full {
        if mask.count_ones() < 2 {
            continue;
        }
        let mut best = vec![f64::INFINITY; n];
        let low = mask & mask.wrapping_neg();
        // submasks containing the lowest bit, so each split is seen once
        let mut sub = (mask - 1) & mask;
        while sub > 0 {
            if sub & low != 0 {
                let (a, b) = (&dp[sub], &dp[mask ^ sub]);
                for v in 0..n {
                    let c = a[v] + b[v];
                    if c < best[v] {
                        best[v] = c;
                    }
                }
            }
            sub = (sub - 1) & mask;
        }
        let sources: Vec<(usize, f64, usize)> =
            (0..n).filter(|&v| best[v].is_finite()).map(|v| (v, best[v], 0)).collect();
        dp[mask] = graph::search(g, &sources, None, f64::INFINITY).dist;
    }
    Ok(dp[full][s[0]])
}

/// Minimum spanning tree of the metric closure on `s`; at most twice the
/// optimum.
pub fn approx_steiner(g: &WeightedGraph, s: &VertexSet) -> f64 {
    let k = s.len();
    if k <= 1 {
        return 0.0;
    }
    let d: Vec<Vec<f64>> = s.iter().map(|&t| graph::distances(g, t)).collect();
    let mut in_tree = vec![false; k];
    let mut key = vec![f64::INFINITY; k];
    key[0] = 0.0;
    let mut total = 0.0;
    for _ in 0..k {
        let i = (0..k).filter(|&i| !in_tree[i]).min_by(|&a, &b| key[a].total_cmp(&key[b])).expect("vertex left");
        in_tree[i] = true;
        total += key[i];
        for j in 0..k {
            if !in_tree[j] {
                key[j] = key[j].min(d[i][s[j]]);
            }
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UstScan {
    pub worst_ratio: f64,
    pub witness: Vec<usize>,
    /// True when every sampled optimum was computed exactly.
    pub exact_used: bool,
    pub trials: usize,
}

/// Samples `trials` terminal sets made of `root` plus between 1 and
/// `max_terminals - 1` other vertices and reports the largest
/// `w(T{S}) / OPT_S`.
pub fn ust_ratio_scan(
    g: &WeightedGraph,
    t: &SpanningTree,
    trials: usize,
    max_terminals: usize,
    seed: u64,
) -> Result<UstScan> {
    let n = g.n();
    if t.n() != n {
        return Err(Error::InvalidGraph("tree and graph sizes differ".into()));
    }
    let r = t.root;
    let results: Vec<(f64, Vec<usize>, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rr = rng(derive_seed(seed, i as u64));
            let extra = if n > 1 { rr.gen_range(1..=max_terminals.max(2).min(n) - 1) } else { 0 };
            let picks = index::sample(&mut rr, n.saturating_sub(1).max(1), extra.min(n.saturating_sub(1)));
            let mut set: Vec<usize> = picks.iter().map(|x| if x >= r { x + 1 } else { x }).collect();
            set.push(r);
            let s = VertexSet::new(set);
            let tree_w = induced_subtree_weight(t, &s)?;
            let (opt, exact) =
                if s.len() <= EXACT_TERMINALS { (exact_steiner(g, &s)?, true) } else { (approx_steiner(g, &s), false) };
            let ratio = if opt > 0.0 { tree_w / opt } else { 1.0 };
            Ok((ratio, s.into_vec(), exact))
        })
        .collect::<Result<_>>()?;
    let mut worst = UstScan { worst_ratio: 1.0, witness: vec![r], exact_used: true, trials };
    for (ratio, set, exact) in results {
        worst.exact_used &= exact;
        if ratio > worst.worst_ratio {
            worst.worst_ratio = ratio;
            worst.witness = set;
        }
    }
    Ok(worst)
}

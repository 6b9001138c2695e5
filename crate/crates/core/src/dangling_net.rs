//! Dangling nets sampled with truncated exponential shifts.
//!
//! Every chosen center `v` gets a fresh leaf `t` attached by one edge of
//! weight `reach - δ_v`. Covering holds by construction; additive sparsity is
//! checked after sampling and the shifts are redrawn on failure.

use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, WeightedGraph};
use crate::instances::{greedy_net, within};
use crate::rng::{derive_seed, rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DanglingNet {
    pub base_n: usize,
    /// Covering radius Δ.
    pub delta: f64,
    pub alpha: f64,
    pub tau_target: usize,
    /// Shift of each matching edge, in matching order.
    pub shifts: Vec<f64>,
    /// `(t, v, w)`: net vertex `t = base_n + j` hangs off base vertex `v`.
    pub matching: Vec<(usize, usize, f64)>,
}

impl DanglingNet {
    /// Net with one leaf per center, edge weight `reach - shift`.
    pub fn from_shifts(base_n: usize, delta: f64, reach: f64, centers: &[usize], shifts: &[f64]) -> Result<Self> {
        if centers.len() != shifts.len() {
            return Err(Error::InvalidInstance("one shift per center required".into()));
        }
        let mut matching = Vec::with_capacity(centers.len());
        for (j, (&v, &s)) in centers.iter().zip(shifts).enumerate() {
            if v >= base_n {
                return Err(Error::InvalidInstance(format!("center {v} outside graph")));
            }
            if !(0.0..=reach).contains(&s) {
                return Err(Error::InvalidInstance(format!("shift {s} outside [0, {reach}]")));
            }
            matching.push((base_n + j, v, reach - s));
        }
        Ok(DanglingNet { base_n, delta, alpha: 1.0, tau_target: usize::MAX, shifts: shifts.to_vec(), matching })
    }

    pub fn len(&self) -> usize {
        self.matching.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matching.is_empty()
    }

    pub fn net_vertices(&self) -> Vec<usize> {
        self.matching.iter().map(|m| m.0).collect()
    }

    /// Base vertex each net vertex hangs off, in net order.
    pub fn anchors(&self) -> Vec<usize> {
        self.matching.iter().map(|m| m.1).collect()
    }

    /// `G + N`.
    pub fn augment(&self, g: &WeightedGraph) -> Result<WeightedGraph> {
        let edges: Vec<(usize, usize, f64)> = self.matching.iter().map(|&(t, v, w)| (v, t, w)).collect();
        g.extended(self.len(), &edges)
    }

    /// Largest distance from a base vertex to the net, in `G + N`.
    pub fn covering_radius(&self, gn: &WeightedGraph) -> f64 {
        let d = graph::SourceForest::new(gn, &self.net_vertices()).search.dist;
        d[..self.base_n].iter().copied().fold(0.0, f64::max)
    }
}

/// Exact additive sparsity: the largest number of net vertices within
/// `d(v, N) + Δ/α` of a base vertex `v`, and a vertex attaining it.
pub fn check_sparsity(gn: &WeightedGraph, net: &DanglingNet) -> (usize, usize) {
    let dn = graph::SourceForest::new(gn, &net.net_vertices()).search.dist;
    let slack = net.delta / net.alpha;
    let is_net = |u: usize| u >= net.base_n && u < net.base_n + net.len();
    (0..net.base_n)
        .into_par_iter()
        .map(|v| {
            let r = dn[v] + slack;
            let res = graph::search(gn, &[(v, 0.0, v)], None, r + 1e-9 * r.max(1.0));
            let count = (0..gn.n()).filter(|&u| is_net(u) && within(res.dist[u], r)).count();
            (count, v)
        })
        .reduce(|| (0, 0), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
}

/// Shift `min(Exp(1) * scale, cap)`.
fn draw_shifts(k: usize, scale: f64, cap: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..k)
        .map(|_| {
            ({
                let e: f64 = Exp1.sample(&mut r);
                e * scale
            })
            .min(cap)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NetSample {
    pub net: DanglingNet,
    #[serde(skip)]
    pub graph: WeightedGraph,
    pub retries: usize,
    pub max_count: usize,
    pub argmax: usize,
}

#[allow(clippy::too_many_arguments)]
fn sample_with(
    g: &WeightedGraph,
    centers: &[usize],
    delta: f64,
    reach: f64,
    mean: f64,
    cap: f64,
    alpha: f64,
    tau_target: usize,
    seed: u64,
    max_retries: usize,
) -> Result<NetSample> {
    if !(delta > 0.0) {
        return Err(Error::Precondition(format!("delta must be positive, got {delta}")));
    }
    if !(alpha >= 1.0) {
        return Err(Error::Precondition(format!("alpha must be at least 1, got {alpha}")));
    }
    let mut worst: Option<(usize, usize)> = None;
    for attempt in 0..=max_retries {
        let shifts = draw_shifts(centers.len(), mean, cap, derive_seed(seed, attempt as u64));
        let mut net = DanglingNet::from_shifts(g.n(), delta, reach, centers, &shifts)?;
        net.alpha = alpha;
        net.tau_target = tau_target;
        let gn = net.augment(g)?;
        let (max_count, argmax) = check_sparsity(&gn, &net);
        if max_count <= tau_target {
            return Ok(NetSample { net, graph: gn, retries: attempt, max_count, argmax });
        }
        if worst.map_or(true, |w| max_count > w.0) {
            worst = Some((max_count, argmax));
        }
    }
    let (count, v) = worst.expect("at least one attempt");
    Err(Error::RetriesExhausted {
        attempts: max_retries + 1,
        detail: format!("worst sparsity {count} at vertex {v} exceeds tau {tau_target}"),
    })
}

/// General-graph net: every vertex is a center, shifts have mean
/// `Δ / (4 ln n)` truncated at `Δ / 2`.
pub fn sample_net(
    g: &WeightedGraph,
    delta: f64,
    alpha: f64,
    tau_target: usize,
    seed: u64,
    max_retries: usize,
) -> Result<NetSample> {
    let n = g.n();
    let mean = delta / (4.0 * (n.max(2) as f64).ln());
    let centers: Vec<usize> = (0..n).collect();
    sample_with(g, &centers, delta, delta, mean, delta / 2.0, alpha, tau_target, seed, max_retries)
}

/// Net for the doubling pipeline. Centers are a greedy `Λ/2`-net taken in id
/// order, so they are pairwise more than `Λ/2` apart; leaves hang at
/// `Λ/2 - δ` with `δ ≤ Λ/4`, which keeps every vertex within `Λ` of the net.
pub fn sample_doubling_net(
    g: &WeightedGraph,
    lambda: f64,
    alpha: f64,
    tau_target: usize,
    seed: u64,
    max_retries: usize,
) -> Result<NetSample> {
    let order: Vec<usize> = (0..g.n()).collect();
    let centers = greedy_net(g, lambda / 2.0, &order);
    let reach = lambda / 2.0;
    let mean = reach / (4.0 * (g.n().max(2) as f64).ln());
    sample_with(g, &centers, lambda, reach, mean, reach / 2.0, alpha, tau_target, seed, max_retries)
}

/// `4 ⌈log2 n⌉`, at least 1.
pub fn default_tau(n: usize) -> usize {
    (4 * (n.max(2) as f64).log2().ceil() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::gen_grid;

    fn brute_count(gn: &WeightedGraph, net: &DanglingNet, v: usize) -> usize {
        let d = graph::distances(gn, v);
        let dn = net.net_vertices().iter().map(|&t| d[t]).fold(f64::INFINITY, f64::min);
        net.net_vertices().iter().filter(|&&t| d[t] <= dn + net.delta / net.alpha + 1e-9).count()
    }

    #[test]
    fn single_vertex() {
        let g = WeightedGraph::new(1, vec![]).unwrap();
        let s = sample_net(&g, 2.0, 1.0, 1, 3, 0).unwrap();
        assert_eq!(s.net.len(), 1);
        assert!(s.net.covering_radius(&s.graph) <= 2.0);
        assert_eq!(s.max_count, 1);
    }

    #[test]
    fn zero_shifts_match_brute_force() {
        let g = gen_grid(4, 4);
        let centers: Vec<usize> = (0..16).collect();
        let mut net = DanglingNet::from_shifts(16, 3.0, 3.0, &centers, &[0.0; 16]).unwrap();
        net.alpha = 2.0;
        let gn = net.augment(&g).unwrap();
        assert!(net.matching.iter().all(|m| m.2 == 3.0));
        let (max, arg) = check_sparsity(&gn, &net);
        let brute: Vec<usize> = (0..16).map(|v| brute_count(&gn, &net, v)).collect();
        assert_eq!(max, *brute.iter().max().unwrap());
        assert_eq!(brute[arg], max);
    }

    #[test]
    fn two_leaves_on_one_vertex() {
        let g = crate::instances::gen_path(3);
        let net = DanglingNet::from_shifts(3, 1.0, 1.0, &[1, 1], &[0.2, 0.2]).unwrap();
        let gn = net.augment(&g).unwrap();
        let (max, _) = check_sparsity(&gn, &net);
        assert_eq!(max, 2);
        assert_eq!(brute_count(&gn, &net, 1), 2);
    }

    #[test]
    fn covering_and_leaves() {
        let g = gen_grid(6, 6);
        let s = sample_net(&g, 4.0, 5.0, 40, 11, 3).unwrap();
        assert!(s.net.covering_radius(&s.graph) <= 4.0 + 1e-9);
        for t in s.net.net_vertices() {
            assert_eq!(s.graph.degree(t), 1);
        }
        for (&sh, m) in s.net.shifts.iter().zip(&s.net.matching) {
            assert!((0.0..=2.0).contains(&sh));
            assert!((m.2 - (4.0 - sh)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_calibration() {
        let g = gen_grid(8, 8);
        let alpha = 64f64.log2();
        let tau = default_tau(64);
        let ok = (0..100).filter(|&seed| sample_net(&g, 4.0, alpha, tau, seed, 5).is_ok()).count();
        assert!(ok >= 95, "{ok}");
    }

    #[test]
    fn larger_alpha_never_raises_count() {
        let g = gen_grid(5, 5);
        let s = sample_net(&g, 3.0, 1.0, usize::MAX, 4, 0).unwrap();
        let mut net = s.net.clone();
        let (a, _) = check_sparsity(&s.graph, &net);
        net.alpha = 2.0;
        let (b, _) = check_sparsity(&s.graph, &net);
        assert!(b <= a);
    }

    #[test]
    fn exhaustion_reports_worst() {
        let g = gen_grid(5, 5);
        match sample_net(&g, 3.0, 1.0, 0, 1, 2) {
            Err(Error::RetriesExhausted { attempts, detail }) => {
                assert_eq!(attempts, 3);
                assert!(detail.contains("worst sparsity"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn doubling_net_spacing() {
        let (g, _) = crate::instances::gen_geometric(120, 1, 10.0, 5).unwrap();
        let s = sample_doubling_net(&g, 30.0, 2.0, usize::MAX, 2, 0).unwrap();
        assert!(s.net.covering_radius(&s.graph) <= 30.0 + 1e-9);
        assert!(graph::min_source_separation(&g, &s.net.anchors()) > 15.0);
    }
}

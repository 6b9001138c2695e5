//! Checkers and brute-force oracles. Nothing here calls into the solvers, so
//! the checks stay independent of the code they certify.

use rayon::prelude::*;
use serde::Serialize;

use crate::dangling_net::{self, DanglingNet};
use crate::error::{Error, Result};
use crate::graph::{self, SourceForest, VertexSet, WeightedGraph};
use crate::hierarchy::{Hierarchy, EXHAUSTIVE_LIMIT};
use crate::instances::{shuffled_vertices, within, Assignment, ClusterAggInstance, Partition};

/// Outcome of [`check_assignment`].
#[derive(Clone, Debug, Serialize)]
pub struct AssignmentReport {
    pub valid: bool,
    pub violations: Vec<String>,
    pub connectivity_ok: bool,
    /// Whether every portal's own cluster is mapped to it. Not required for
    /// validity; recorded because some solvers do not guarantee it.
    pub portals_self_assigned: bool,
    /// Largest detour against the instance's portal set.
    pub max_detour: f64,
    /// Largest detour when dropped duplicate portals also count as portals.
    pub max_detour_raw: f64,
    /// `max_detour / delta`, or `None` when delta is zero.
    pub realized_beta: Option<f64>,
    pub argmax_vertex: Option<usize>,
    #[serde(skip)]
    pub vertex_detour: Vec<f64>,
    #[serde(skip)]
    pub cluster_max_detour: Vec<f64>,
}

impl AssignmentReport {
    /// Largest detour over the given clusters.
    pub fn max_over(&self, clusters: impl IntoIterator<Item = usize>) -> f64 {
        clusters.into_iter().map(|c| self.cluster_max_detour[c]).fold(0.0, f64::max)
    }
}

/// `d_G(v, P)` for every vertex.
pub fn portal_distances(g: &WeightedGraph, portals: &[usize]) -> Vec<f64> {
    SourceForest::new(g, portals).search.dist
}

/// Induced distance from each vertex to its assigned portal inside the
/// portal's pre-image. Infinite when the portal is missing from the
/// pre-image or unreachable inside it.
pub fn preimage_distances(g: &WeightedGraph, part: &Partition, portal_of_cluster: &[usize]) -> Vec<f64> {
    let asg = Assignment::new(portal_of_cluster.to_vec());
    let mut out = vec![f64::INFINITY; g.n()];
    for (p, set) in asg.preimages(part) {
        if !set.contains(p) {
            continue;
        }
        let mask = set.mask(g.n());
        let d = graph::induced_distances(g, &mask, p);
        for &v in set.iter() {
            out[v] = d[v];
        }
    }
    out
}

/// Detour of vertex `v`: induced distance to its portal inside the pre-image
/// minus its distance to the nearest portal.
pub fn detour(inst: &ClusterAggInstance, asg: &Assignment, v: usize) -> f64 {
    let d = preimage_distances(&inst.graph, &inst.partition, &asg.portal_of_cluster);
    d[v] - portal_distances(&inst.graph, &inst.portals)[v]
}

/// Validates `asg` and measures detours. The instance is normalized first, so
/// detours are taken against one portal per cluster; `max_detour_raw` also
/// counts the dropped duplicates.
pub fn check_assignment(inst: &ClusterAggInstance, asg: &Assignment) -> AssignmentReport {
    let inst = &inst.normalized();
    let g = &inst.graph;
    let part = &inst.partition;
    let mut violations = Vec::new();
    let k = part.len();
    if asg.portal_of_cluster.len() != k {
        violations.push(format!("assignment covers {} clusters, partition has {k}", asg.portal_of_cluster.len()));
        return AssignmentReport {
            valid: false,
            violations,
            connectivity_ok: false,
            portals_self_assigned: false,
            max_detour: f64::INFINITY,
            max_detour_raw: f64::INFINITY,
            realized_beta: None,
            argmax_vertex: None,
            vertex_detour: vec![f64::INFINITY; g.n()],
            cluster_max_detour: vec![f64::INFINITY; k],
        };
    }
    for (i, &p) in asg.portal_of_cluster.iter().enumerate() {
        if !inst.portals.contains(p) {
            violations.push(format!("cluster {i} mapped to non-portal {p}"));
        }
    }
    let mut connectivity_ok = true;
    for (p, set) in asg.preimages(part) {
        if !set.contains(p) {
            violations.push(format!("pre-image of portal {p} does not contain it"));
            connectivity_ok = false;
        } else if !graph::is_connected_subset(g, &set) {
            violations.push(format!("pre-image of portal {p} is disconnected"));
            connectivity_ok = false;
        }
    }
    let portals_self_assigned = inst.portals.iter().all(|&p| asg.portal_of_cluster[part.cluster_of(p)] == p);

    let pre = preimage_distances(g, part, &asg.portal_of_cluster);
    let dp = portal_distances(g, &inst.portals);
    let mut all: Vec<usize> = inst.portals.to_vec();
    all.extend(inst.dropped_portals.iter().copied());
    let dp_raw = portal_distances(g, &all);

    let vertex_detour: Vec<f64> = (0..g.n()).map(|v| pre[v] - dp[v]).collect();
    let mut max_detour = 0.0f64;
    let mut max_detour_raw = 0.0f64;
    let mut argmax = None;
    let mut cluster_max_detour = vec![0.0f64; k];
    for v in 0..g.n() {
        let d = vertex_detour[v];
        if argmax.is_none() || d > max_detour {
            max_detour = d;
            argmax = Some(v);
        }
        max_detour_raw = max_detour_raw.max(pre[v] - dp_raw[v]);
        let c = part.cluster_of(v);
        cluster_max_detour[c] = cluster_max_detour[c].max(d);
    }
    let delta = inst.delta();
    AssignmentReport {
        valid: violations.is_empty(),
        violations,
        connectivity_ok,
        portals_self_assigned,
        max_detour,
        max_detour_raw,
        realized_beta: if delta > 0.0 { Some(max_detour / delta) } else { None },
        argmax_vertex: argmax,
        vertex_detour,
        cluster_max_detour,
    }
}

/// Optimum of an exhaustive search over assignments.
#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub optimum: f64,
    pub assignment: Assignment,
    pub explored: u64,
    pub feasible: u64,
}

pub const ORACLE_BUDGET: u64 = 1_000_000;

/// Minimum over all assignments with connected pre-images containing their
/// portal of the maximum detour. Enumerates `|P|^|C|` maps in lexicographic
/// order; the first optimum found is returned.
pub fn oracle_min_distortion(inst: &ClusterAggInstance) -> Result<OracleResult> {
    let inst = &inst.normalized();
    let g = &inst.graph;
    let part = &inst.partition;
    let portals: Vec<usize> = inst.portals.to_vec();
    if portals.is_empty() {
        return Err(Error::NoPortals);
    }
    let k = part.len();
    let total = (portals.len() as u64).checked_pow(k as u32).filter(|&t| t <= ORACLE_BUDGET);
    let Some(total) = total else {
        return Err(Error::SearchBudget(format!(
            "{} portals and {k} clusters exceed {ORACLE_BUDGET} assignments",
            portals.len()
        )));
    };
    let dp = portal_distances(g, &portals);
    let mut digits = vec![0usize; k];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut feasible = 0u64;
    for _ in 0..total {
        let map: Vec<usize> = digits.iter().map(|&d| portals[d]).collect();
        if let Some(score) = max_detour_if_feasible(g, part, &map, &dp) {
            feasible += 1;
            if best.as_ref().map_or(true, |(b, _)| score < *b) {
                best = Some((score, map));
            }
        }
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < portals.len() {
                break;
            }
            *d = 0;
        }
    }
    let (optimum, map) = best.ok_or_else(|| Error::Internal("no feasible assignment".into()))?;
    Ok(OracleResult { optimum, assignment: Assignment::new(map), explored: total, feasible })
}

fn max_detour_if_feasible(g: &WeightedGraph, part: &Partition, map: &[usize], dp: &[f64]) -> Option<f64> {
    let pre = preimage_distances(g, part, map);
    let mut worst = 0.0f64;
    for v in 0..g.n() {
        if pre[v].is_infinite() {
            return None;
        }
        worst = worst.max(pre[v] - dp[v]);
    }
    Some(worst)
}

/// Weight of the smallest edge subset of the tree `t` connecting `terminals`,
/// by repeatedly pruning non-terminal leaves.
pub fn pruned_subtree_weight(t: &WeightedGraph, terminals: &VertexSet) -> f64 {
    let n = t.n();
    let mut alive = vec![true; n];
    let mut deg: Vec<usize> = (0..n).map(|v| t.degree(v)).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&v| deg[v] <= 1 && !terminals.contains(v)).collect();
    while let Some(v) = stack.pop() {
        if !alive[v] {
            continue;
        }
        alive[v] = false;
        for &(u, _) in t.neighbors(v) {
            if alive[u] {
                deg[u] -= 1;
                if deg[u] <= 1 && !terminals.contains(u) {
                    stack.push(u);
                }
            }
        }
    }
    t.edges().iter().filter(|&&(u, v, _)| alive[u] && alive[v]).map(|e| e.2).sum()
}

/// Minimum weight of an edge subset connecting `terminals`, by enumerating
/// all `2^m` subsets. Only for very small graphs.
pub fn brute_force_steiner_edges(g: &WeightedGraph, terminals: &VertexSet) -> Result<f64> {
    let m = g.m();
    if m > 24 {
        return Err(Error::SearchBudget(format!("{m} edges is too many to enumerate")));
    }
    if terminals.len() <= 1 {
        return Ok(0.0);
    }
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << m) {
        let mut w = 0.0;
        let mut uf: Vec<usize> = (0..g.n()).collect();
        fn find(uf: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while uf[r] != r {
                r = uf[r];
            }
            let mut c = x;
            while uf[c] != r {
                let nx = uf[c];
                uf[c] = r;
                c = nx;
            }
            r
        }
        for (i, &(u, v, wt)) in g.edges().iter().enumerate() {
            if mask >> i & 1 == 1 {
                w += wt;
                let (a, b) = (find(&mut uf, u), find(&mut uf, v));
                uf[a] = b;
            }
        }
        if w >= best {
            continue;
        }
        let root = find(&mut uf, terminals[0]);
        if terminals.iter().all(|&t| find(&mut uf, t) == root) {
            best = w;
        }
    }
    Ok(best)
}

/// Steiner optimum as the minimum over vertex sets `U ⊇ S` of the minimum
/// spanning tree of `G[U]`. Exponential in `n`.
pub fn brute_force_steiner_vertices(g: &WeightedGraph, terminals: &VertexSet) -> Result<f64> {
    let n = g.n();
    if n > 16 {
        return Err(Error::SearchBudget(format!("{n} vertices is too many to enumerate")));
    }
    if terminals.len() <= 1 {
        return Ok(0.0);
    }
    let tmask: u32 = terminals.iter().fold(0, |m, &t| m | 1 << t);
    let mut best = f64::INFINITY;
    for u in 0u32..(1u32 << n) {
        if u & tmask != tmask {
            continue;
        }
        if let Some(w) = induced_mst(g, u) {
            best = best.min(w);
        }
    }
    Ok(best)
}

// Kruskal on the subgraph induced by the bitmask; None if disconnected.
fn induced_mst(g: &WeightedGraph, set: u32) -> Option<f64> {
    let mut edges: Vec<&(usize, usize, f64)> =
        g.edges().iter().filter(|e| set >> e.0 & 1 == 1 && set >> e.1 & 1 == 1).collect();
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut uf: Vec<usize> = (0..g.n()).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut w = 0.0;
    let mut joined = 0;
    for &&(a, b, wt) in &edges {
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra != rb {
            uf[ra] = rb;
            w += wt;
            joined += 1;
        }
    }
    (joined + 1 == set.count_ones() as usize).then_some(w)
}

/// Outcome of [`check_net`].
#[derive(Clone, Debug, Serialize)]
pub struct NetReport {
    pub ok: bool,
    pub issues: Vec<String>,
    pub covering_radius: f64,
    pub max_count: usize,
    pub argmax: usize,
}

/// Replays the dangling-net invariants on `G + N`: every net vertex is a leaf
/// hanging off its anchor with the recorded weight, every base vertex is
/// within Δ of the net, and additive sparsity stays within the target.
pub fn check_net(gn: &WeightedGraph, net: &DanglingNet) -> NetReport {
    let mut issues = Vec::new();
    if gn.n() != net.base_n + net.len() {
        issues.push(format!("graph has {} vertices, expected {}", gn.n(), net.base_n + net.len()));
        return NetReport { ok: false, issues, covering_radius: f64::INFINITY, max_count: 0, argmax: 0 };
    }
    for (j, &(t, v, w)) in net.matching.iter().enumerate() {
        if t != net.base_n + j {
            issues.push(format!("net vertex {t} out of order at position {j}"));
        }
        if gn.degree(t) != 1 || gn.weight(t, v) != Some(w) {
            issues.push(format!("net vertex {t} is not a leaf on {v} with weight {w}"));
        }
        if !(w >= 0.0) {
            issues.push(format!("net edge {t} has negative weight {w}"));
        }
    }
    let d = portal_distances(gn, &net.net_vertices());
    let (covering_radius, far) =
        d[..net.base_n].iter().copied().enumerate().fold((0.0, 0), |a, (v, x)| if x > a.0 { (x, v) } else { a });
    if !within(covering_radius, net.delta) {
        issues.push(format!("vertex {far} is {covering_radius} from the net, above {}", net.delta));
    }
    let (max_count, argmax) = dangling_net::check_sparsity(gn, net);
    if max_count > net.tau_target {
        issues.push(format!("vertex {argmax} sees {max_count} net vertices, above {}", net.tau_target));
    }
    NetReport { ok: issues.is_empty(), issues, covering_radius, max_count, argmax }
}

/// Per-level numbers measured by [`check_hierarchy`].
#[derive(Clone, Debug, Serialize)]
pub struct LevelCheck {
    pub clusters: usize,
    pub max_diameter: f64,
    pub diameter_bound: f64,
    pub ball_radius: f64,
    pub max_ball_clusters: usize,
    /// Sparsity the level's net was certified with, when recorded.
    pub net_count: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HierarchyReport {
    pub ok: bool,
    pub issues: Vec<String>,
    pub levels: Vec<LevelCheck>,
}

/// Replays the hierarchy invariants from scratch: partitions of `V`,
/// singleton bottom, single-cluster top, coarsening between neighbours,
/// strong diameter of level `i` at most `γ^i`, and for general-style runs
/// ball sparsity at radius `γ^i / divisor` no larger than the net's
/// certified count. Balls are taken around every vertex up to 2000
/// vertices, otherwise around a fixed sample.
pub fn check_hierarchy(g: &WeightedGraph, h: &Hierarchy) -> HierarchyReport {
    let n = g.n();
    let mut issues = Vec::new();
    let mut levels = Vec::new();
    let gamma = h.params.gamma;
    let mut prev_owner: Option<Vec<usize>> = None;
    if h.levels.is_empty() {
        issues.push("no levels".into());
    }
    let centers: Vec<usize> = if n <= EXHAUSTIVE_LIMIT {
        (0..n).collect()
    } else {
        let mut v = shuffled_vertices(n, 0);
        v.truncate(EXHAUSTIVE_LIMIT);
        v
    };
    for (i, level) in h.levels.iter().enumerate() {
        let mut owner = vec![usize::MAX; n];
        let mut bad = false;
        for (c, set) in level.clusters.iter().enumerate() {
            if set.is_empty() {
                issues.push(format!("level {i}: cluster {c} is empty"));
            }
            for &v in set.iter() {
                if v >= n {
                    issues.push(format!("level {i}: cluster {c} holds vertex {v} outside the graph"));
                    bad = true;
                } else if owner[v] != usize::MAX {
                    issues.push(format!("level {i}: vertex {v} lies in clusters {} and {c}", owner[v]));
                    bad = true;
                } else {
                    owner[v] = c;
                }
            }
        }
        if let Some(v) = owner.iter().position(|&o| o == usize::MAX) {
            issues.push(format!("level {i}: vertex {v} is in no cluster"));
            bad = true;
        }
        if i == 0 && level.clusters.iter().any(|c| c.len() != 1) {
            issues.push("level 0 is not all singletons".into());
        }
        if bad {
            prev_owner = None;
            continue;
        }
        if let Some(prev) = &prev_owner {
            // every lower cluster must land inside a single upper cluster
            let mut image = vec![usize::MAX; n];
            for v in 0..n {
                let c = prev[v];
                if image[c] == usize::MAX {
                    image[c] = owner[v];
                } else if image[c] != owner[v] {
                    issues.push(format!(
                        "level {i}: vertex {v} leaves its level-{} cluster {c} (cluster {} instead of {})",
                        i - 1,
                        owner[v],
                        image[c]
                    ));
                }
            }
        }
        let bound = gamma.powi(i as i32);
        let max_diameter = level.clusters.par_iter().map(|c| graph::strong_diameter(g, c)).reduce(|| 0.0, f64::max);
        if !within(max_diameter, bound) {
            issues.push(format!("level {i}: strong diameter {max_diameter} above {bound}"));
        }
        let ball_radius = bound / h.params.sparsity_divisor;
        let max_ball_clusters = centers
            .par_iter()
            .map(|&v| {
                let mut hit: Vec<usize> = graph::ball(g, v, ball_radius).into_iter().map(|(u, _)| owner[u]).collect();
                hit.sort_unstable();
                hit.dedup();
                hit.len()
            })
            .max()
            .unwrap_or(0);
        let net_count = level.net.as_ref().map(|s| s.max_count);
        if let (Some(c), None) = (net_count, &h.params.doubling) {
            if max_ball_clusters > c {
                issues.push(format!("level {i}: a ball meets {max_ball_clusters} clusters, net certified {c}"));
            }
        }
        levels.push(LevelCheck {
            clusters: level.clusters.len(),
            max_diameter,
            diameter_bound: bound,
            ball_radius,
            max_ball_clusters,
            net_count,
        });
        prev_owner = Some(owner);
    }
    if let Some(top) = h.levels.last() {
        if top.clusters.len() != 1 {
            issues.push(format!("top level has {} clusters", top.clusters.len()));
        }
    }
    HierarchyReport { ok: issues.is_empty(), issues, levels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::gen_path;

    fn singleton_path_instance() -> ClusterAggInstance {
        let g = gen_path(4);
        ClusterAggInstance::new(g, Partition::singletons(4), VertexSet::new([0, 3])).unwrap()
    }

    #[test]
    fn oracle_on_singleton_path_is_zero() {
        let inst = singleton_path_instance();
        let r = oracle_min_distortion(&inst).unwrap();
        assert_eq!(r.optimum, 0.0);
        assert_eq!(r.explored, 16);
        assert_eq!(r.assignment.portal_of_cluster, vec![0, 0, 3, 3]);
    }

    #[test]
    fn identity_assignment_has_zero_detour() {
        let inst = singleton_path_instance();
        let g = gen_path(4);
        let inst2 = ClusterAggInstance::new(g, Partition::singletons(4), VertexSet::new([0, 1, 2, 3])).unwrap();
        let rep = check_assignment(&inst2, &Assignment::new(vec![0, 1, 2, 3]));
        assert!(rep.valid);
        assert_eq!(rep.max_detour, 0.0);
        let rep = check_assignment(&inst, &Assignment::new(vec![0, 3, 0, 3]));
        assert!(!rep.valid);
        assert!(!rep.connectivity_ok);
    }

    #[test]
    fn wrong_length_is_invalid() {
        let inst = singleton_path_instance();
        assert!(!check_assignment(&inst, &Assignment::new(vec![0])).valid);
    }

    #[test]
    fn pruning_matches_enumeration_on_a_small_tree() {
        let t = WeightedGraph::new(6, [(0, 1, 2.0), (1, 2, 1.0), (1, 3, 4.0), (3, 4, 1.0), (3, 5, 3.0)]).unwrap();
        let s = VertexSet::new([2, 4]);
        assert_eq!(pruned_subtree_weight(&t, &s), 6.0);
        assert_eq!(brute_force_steiner_edges(&t, &s).unwrap(), 6.0);
        assert_eq!(brute_force_steiner_vertices(&t, &s).unwrap(), 6.0);
    }

    #[test]
    fn one_vertex_hierarchy_checks() {
        let h = crate::hierarchy::trivial(&crate::hierarchy::HierarchyParams::general(1));
        let g = WeightedGraph::new(1, vec![]).unwrap();
        let rep = check_hierarchy(&g, &h);
        assert!(rep.ok, "{:?}", rep.issues);
    }

    #[test]
    fn moved_vertex_is_named() {
        use crate::hierarchy::*;
        let g = gen_path(8);
        let level = |cs: &[&[usize]]| Level {
            clusters: cs.iter().map(|c| VertexSet::new(c.iter().copied())).collect(),
            audit: LevelAudit {
                scale: 0.0,
                max_diameter: 0.0,
                diameter_witness: None,
                ball_radius: 0.0,
                max_ball_clusters: 0,
                ball_witness: None,
                exhaustive: true,
            },
            net: None,
            realized_beta: None,
            attempts: 0,
            centers: None,
        };
        let mut h = Hierarchy {
            params: HierarchyParams::new(1.0, 1.0, usize::MAX, SolverKind::General),
            levels: vec![
                level(&[&[0], &[1], &[2], &[3], &[4], &[5], &[6], &[7]]),
                level(&[&[0, 1], &[2, 3], &[4, 5], &[6, 7]]),
                level(&[&[0, 1, 2, 3], &[4, 5, 6, 7]]),
                level(&[&[0, 1, 2, 3, 4, 5, 6, 7]]),
            ],
        };
        let rep = check_hierarchy(&g, &h);
        assert!(rep.ok, "{:?}", rep.issues);
        h.levels[2] = level(&[&[0, 1, 2], &[3, 4, 5, 6, 7]]);
        let rep = check_hierarchy(&g, &h);
        assert!(!rep.ok);
        assert!(rep.issues.iter().any(|s| s.contains("vertex 3 leaves")), "{:?}", rep.issues);
    }

    #[test]
    fn net_checks() {
        let g = crate::instances::gen_grid(4, 4);
        let s = dangling_net::sample_net(&g, 3.0, 2.0, usize::MAX, 7, 0).unwrap();
        assert!(check_net(&s.graph, &s.net).ok);
        let mut bad = s.net.clone();
        bad.delta = 0.5;
        let rep = check_net(&s.graph, &bad);
        assert!(!rep.ok);
        assert!(rep.issues[0].contains("from the net"));
    }
}

//! Bottom-up hierarchies of strong sparse partitions.
//!
//! Level `i + 1` is built from level `i` by hanging a dangling net off the
//! graph, aggregating the level-`i` clusters onto the net vertices, and
//! stripping the net vertices again.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ca_doubling::{self, DoublingParams};
use crate::ca_general::{self, DEFAULT_ROUNDS_FACTOR};
use crate::ca_pathwidth;
use crate::ca_tree;
use crate::dangling_net::{self, NetSample};
use crate::error::{Error, Result};
use crate::graph::{self, VertexSet, WeightedGraph};
use crate::instances::{within, Assignment, ClusterAggInstance, Partition, PathDecomposition};
use crate::rng::derive_seed;
use crate::verify;

pub const MAX_LEVELS: usize = 64;
pub const LEVEL_ATTEMPTS: usize = 5;
pub const NET_RETRIES: usize = 5;
/// Above this many vertices ball sparsity is measured on a sample.
pub const EXHAUSTIVE_LIMIT: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    General,
    Tree,
    Pathwidth,
    Doubling,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(SolverKind::General),
            "tree" => Ok(SolverKind::Tree),
            "pathwidth" => Ok(SolverKind::Pathwidth),
            "doubling" => Ok(SolverKind::Doubling),
            _ => Err(Error::Parse(format!("unknown solver {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingSettings {
    pub ddim: f64,
    /// Dimension bound used for the graph with the net attached.
    pub ddim_net: f64,
    /// Level-0 solver parameters; later levels scale Δ and Λ by γ.
    pub base: DoublingParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyParams {
    pub alpha: f64,
    pub beta: f64,
    pub tau_target: usize,
    pub gamma: f64,
    pub solver: SolverKind,
    /// Balls of radius `γ^i / sparsity_divisor` are audited at level `i`.
    pub sparsity_divisor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doubling: Option<DoublingSettings>,
}

impl HierarchyParams {
    /// γ = 2β(2α + 1) and the audit divisor 8α + 4.
    pub fn new(alpha: f64, beta: f64, tau_target: usize, solver: SolverKind) -> Self {
        HierarchyParams {
            alpha,
            beta,
            tau_target,
            gamma: 2.0 * beta * (2.0 * alpha + 1.0),
            solver,
            sparsity_divisor: 8.0 * alpha + 4.0,
            doubling: None,
        }
    }

    /// Defaults for the general solver on `n` vertices: α = log₂ n,
    /// τ = 4⌈log₂ n⌉, β = 80 log₂(2n) (the net adds up to `n` clusters).
    pub fn general(n: usize) -> Self {
        let log = (n.max(2) as f64).log2();
        HierarchyParams::new(
            log,
            80.0 * (2.0 * n.max(1) as f64).log2(),
            dangling_net::default_tau(n),
            SolverKind::General,
        )
    }

    pub fn tree(n: usize) -> Self {
        HierarchyParams::new((n.max(2) as f64).log2(), 4.0, dangling_net::default_tau(n), SolverKind::Tree)
    }

    /// `pw` is the width of the decomposition of the base graph; the net
    /// raises it by one.
    pub fn pathwidth(n: usize, pw: usize) -> Self {
        HierarchyParams::new(
            (n.max(2) as f64).log2(),
            8.0 * (pw + 2) as f64,
            dangling_net::default_tau(n),
            SolverKind::Pathwidth,
        )
    }

    /// Doubling mode: the net's dimension bound is `d (1 + log₂(8 / c_Λ))`,
    /// level `i` uses net scale `γ^(i+1) / 3` and
    /// `γ = max(3 λ d'³ log₂ d', 6 s (c_top d' + 2))` so that the cluster
    /// diameters close up at `γ^(i+1)`.
    pub fn doubling(n: usize, ddim: f64) -> Self {
        let probe = DoublingParams::new(ddim, 1.0);
        let dn = ddim * (1.0 + (8.0 / probe.c_lambda).log2());
        let base = DoublingParams::new(dn, 1.0);
        let gamma = (3.0 * base.lambda_const * dn.powi(3) * dn.max(2.0).log2())
            .max(6.0 * base.s as f64 * (base.c_top * dn + 2.0));
        let base = base.with_lambda(gamma / 3.0);
        let alpha = (n.max(2) as f64).log2();
        HierarchyParams {
            alpha,
            beta: base.s as f64 * (base.c_top * dn + 2.0),
            tau_target: dangling_net::default_tau(n),
            gamma,
            solver: SolverKind::Doubling,
            sparsity_divisor: 12.0 * alpha,
            doubling: Some(DoublingSettings { ddim, ddim_net: dn, base }),
        }
    }

    /// Covering radius of the level-`i` net.
    pub fn net_scale(&self, i: usize) -> f64 {
        match &self.doubling {
            Some(_) => self.gamma.powi(i as i32 + 1) / 3.0,
            None => 2.0 * self.alpha * self.beta * self.gamma.powi(i as i32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelAudit {
    pub scale: f64,
    pub max_diameter: f64,
    pub diameter_witness: Option<usize>,
    pub ball_radius: f64,
    pub max_ball_clusters: usize,
    pub ball_witness: Option<usize>,
    pub exhaustive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSummary {
    pub size: usize,
    pub scale: f64,
    pub retries: usize,
    pub max_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub clusters: Vec<VertexSet>,
    pub audit: LevelAudit,
    /// The net this level was aggregated onto; absent for level 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<NetSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_beta: Option<f64>,
    #[serde(default)]
    pub attempts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub params: HierarchyParams,
    pub levels: Vec<Level>,
}

impl Hierarchy {
    pub fn partition(&self, i: usize, n: usize) -> Result<Partition> {
        let scale = self.params.gamma.powi(i as i32);
        Partition::new(n, self.levels[i].clusters.clone(), if i == 0 { 0.0 } else { scale })
    }
}

/// Exact strong diameters and ball sparsity at radius `scale / divisor`.
/// Balls are taken around every vertex up to [`EXHAUSTIVE_LIMIT`] vertices,
/// otherwise around a seeded sample of that many.
pub fn audit_level(g: &WeightedGraph, part: &Partition, scale: f64, divisor: f64, seed: u64) -> LevelAudit {
    let diams: Vec<f64> = part.clusters().par_iter().map(|c| graph::strong_diameter(g, c)).collect();
    let (diameter_witness, max_diameter) =
        diams.iter().copied().enumerate().fold((None, 0.0), |acc, (i, d)| if d > acc.1 { (Some(i), d) } else { acc });
    let n = g.n();
    let exhaustive = n <= EXHAUSTIVE_LIMIT;
    let centers: Vec<usize> = if exhaustive {
        (0..n).collect()
    } else {
        let mut v = crate::instances::shuffled_vertices(n, seed);
        v.truncate(EXHAUSTIVE_LIMIT);
        v.sort_unstable();
        v
    };
    let radius = scale / divisor;
    let (max_ball_clusters, ball_witness) = centers
        .par_iter()
        .map(|&v| {
            let hit: BTreeSet<usize> = graph::ball(g, v, radius).into_iter().map(|(u, _)| part.cluster_of(u)).collect();
            (hit.len(), Some(v))
        })
        .reduce(|| (0, None), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    LevelAudit {
        scale,
        max_diameter,
        diameter_witness,
        ball_radius: radius,
        max_ball_clusters,
        ball_witness,
        exhaustive,
    }
}

/// Path decomposition of `G + N`: each net vertex gets a copy of the first
/// bag holding its anchor, placed right after that bag.
pub fn augment_decomposition(pd: &PathDecomposition, base_n: usize, anchors: &[usize]) -> PathDecomposition {
    let spans = pd.spans(base_n);
    let mut after: Vec<Vec<usize>> = vec![Vec::new(); pd.bags.len()];
    for (j, &v) in anchors.iter().enumerate() {
        if let Some((first, _)) = spans[v] {
            after[first].push(base_n + j);
        }
    }
    let mut bags = Vec::with_capacity(pd.bags.len() + anchors.len());
    for (k, bag) in pd.bags.iter().enumerate() {
        bags.push(bag.clone());
        for &t in &after[k] {
            bags.push(VertexSet::new(bag.iter().copied().chain([t])));
        }
    }
    PathDecomposition::new(bags)
}

struct Attempt {
    clusters: Vec<VertexSet>,
    centers: Option<Vec<usize>>,
    net: NetSummary,
    realized_beta: f64,
}

fn aggregate(
    g: &WeightedGraph,
    prev: &Partition,
    prev_centers: Option<&[usize]>,
    params: &HierarchyParams,
    pd: Option<&PathDecomposition>,
    level: usize,
    seed: u64,
) -> Result<Attempt> {
    let n = g.n();
    let scale = params.gamma.powi(level as i32);
    let net_scale = params.net_scale(level);
    let sample: NetSample = match &params.doubling {
        Some(_) => dangling_net::sample_doubling_net(
            g,
            net_scale,
            params.alpha,
            params.tau_target,
            derive_seed(seed, 0),
            NET_RETRIES,
        )?,
        None => {
            dangling_net::sample_net(g, net_scale, params.alpha, params.tau_target, derive_seed(seed, 0), NET_RETRIES)?
        }
    };
    let net = &sample.net;
    let gn = &sample.graph;
    let mut clusters: Vec<VertexSet> = prev.clusters().to_vec();
    clusters.extend(net.net_vertices().into_iter().map(VertexSet::singleton));
    let mut part = Partition::new(gn.n(), clusters, scale)?;
    if let Some(cs) = prev_centers {
        let mut all = cs.to_vec();
        all.extend(net.net_vertices());
        part = part.with_centers(all)?;
    }
    let portals = VertexSet::new(net.net_vertices());
    let inst = ClusterAggInstance::new(gn.clone(), part, portals)?;
    let asg: Assignment = match params.solver {
        SolverKind::General => ca_general::solve_general(&inst, derive_seed(seed, 1), DEFAULT_ROUNDS_FACTOR)?.0,
        SolverKind::Tree => ca_tree::solve_tree(&inst)?.assignment,
        SolverKind::Pathwidth => {
            let pd = pd.ok_or_else(|| Error::Precondition("pathwidth solver needs a path decomposition".into()))?;
            let aug = augment_decomposition(pd, n, &net.anchors());
            ca_pathwidth::solve_pathwidth(&inst, &aug)?.0
        }
        SolverKind::Doubling => {
            let base = &params.doubling.as_ref().expect("doubling settings").base;
            let dp = DoublingParams { delta: scale, ..base.clone() }.with_lambda(net_scale);
            ca_doubling::solve_doubling(&inst, &dp, derive_seed(seed, 1))?.assignment
        }
    };
    let rep = verify::check_assignment(&inst, &asg);
    if !rep.valid {
        return Err(Error::Internal(format!("level {level}: invalid assignment {:?}", rep.violations)));
    }
    let realized_beta = rep.max_detour / scale;
    if !within(rep.max_detour, params.beta * scale) {
        return Err(Error::RetriesExhausted {
            attempts: 1,
            detail: format!("level {level}: detour {} above beta * scale {}", rep.max_detour, params.beta * scale),
        });
    }

    // strip the net; each portal's pre-image becomes a cluster
    let mut out = Vec::new();
    for (t, set) in asg.preimages(&inst.partition) {
        let base: Vec<usize> = set.iter().copied().filter(|&v| v < n).collect();
        if base.is_empty() {
            continue;
        }
        let anchor = net.matching[t - n].1;
        let center = if base.contains(&anchor) {
            anchor
        } else {
            // the base vertex of the cluster nearest to its portal
            let d = graph::distances(gn, t);
            *base.iter().min_by(|a, b| d[**a].total_cmp(&d[**b]).then(a.cmp(b))).expect("nonempty")
        };
        out.push((VertexSet::new(base), center));
    }
    out.sort_by(|a, b| a.0[0].cmp(&b.0[0]));
    let (clusters, centers): (Vec<VertexSet>, Vec<usize>) = out.into_iter().unzip();
    Ok(Attempt {
        clusters,
        centers: params.doubling.as_ref().map(|_| centers),
        net: NetSummary { size: net.len(), scale: net_scale, retries: sample.retries, max_count: sample.max_count },
        realized_beta,
    })
}

/// Builds levels until a single cluster remains.
pub fn build_hierarchy(
    g: &WeightedGraph,
    params: &HierarchyParams,
    pd: Option<&PathDecomposition>,
    seed: u64,
) -> Result<Hierarchy> {
    let n = g.n();
    if n == 0 {
        return Err(Error::InvalidGraph("empty graph".into()));
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    if let Some(w) = g.min_weight() {
        if w < 1.0 {
            return Err(Error::Precondition(format!("edge weights must be at least 1, found {w}")));
        }
    }
    if !(params.gamma > 1.0) || !(params.beta >= 1.0) {
        return Err(Error::Precondition(format!(
            "need gamma > 1 and beta >= 1, got {} and {}",
            params.gamma, params.beta
        )));
    }
    if params.solver == SolverKind::Tree && !g.is_tree() {
        return Err(Error::NotATree);
    }
    if params.solver == SolverKind::Doubling && params.doubling.is_none() {
        return Err(Error::Precondition("doubling solver needs doubling parameters".into()));
    }
    if let Some(pd) = pd {
        pd.validate(g)?;
    }
    let mut part = Partition::singletons(n);
    let mut centers: Option<Vec<usize>> = params.doubling.as_ref().map(|_| (0..n).collect());
    let mut levels = vec![Level {
        clusters: part.clusters().to_vec(),
        audit: audit_level(g, &part, 1.0, params.sparsity_divisor, derive_seed(seed, 0)),
        net: None,
        realized_beta: None,
        attempts: 0,
        centers: centers.clone(),
    }];
    let mut i = 0;
    while part.len() > 1 {
        if levels.len() >= MAX_LEVELS {
            return Err(Error::Internal(format!("no single cluster after {MAX_LEVELS} levels")));
        }
        let mut last_err = None;
        let mut built = None;
        for attempt in 0..LEVEL_ATTEMPTS {
            let s = derive_seed(derive_seed(seed, 1 + i as u64), attempt as u64);
            match aggregate(g, &part, centers.as_deref(), params, pd, i, s) {
                Ok(a) => {
                    built = Some((a, attempt + 1));
                    break;
                }
                Err(e @ (Error::RetriesExhausted { .. } | Error::ResampleBudget { .. })) => last_err = Some(e),
                Err(e) => return Err(annotate(e, i + 1)),
            }
        }
        let Some((a, attempts)) = built else {
            return Err(annotate(last_err.expect("attempted"), i + 1));
        };
        let scale = params.gamma.powi(i as i32 + 1);
        let next = Partition::new(n, a.clusters, scale)?;
        let audit = audit_level(g, &next, scale, params.sparsity_divisor, derive_seed(seed, 2 + i as u64));
        if !within(audit.max_diameter, scale) {
            let c = audit.diameter_witness.expect("witness");
            return Err(Error::Internal(format!(
                "level {}: cluster {c} {:?} has strong diameter {} above {scale}",
                i + 1,
                next.cluster(c).as_slice(),
                audit.max_diameter
            )));
        }
        centers = a.centers;
        levels.push(Level {
            clusters: next.clusters().to_vec(),
            audit,
            net: Some(a.net),
            realized_beta: Some(a.realized_beta),
            attempts,
            centers: centers.clone(),
        });
        part = next;
        i += 1;
    }
    let diam = graph::diameter(g);
    let cap = level_cap(diam, params.gamma);
    if levels.len() > cap {
        return Err(Error::Internal(format!("{} levels exceed the cap {cap} for diameter {diam}", levels.len())));
    }
    Ok(Hierarchy { params: params.clone(), levels })
}

/// `⌈log_γ diam⌉ + 2`, with diameters below 1 counted as 1.
pub fn level_cap(diam: f64, gamma: f64) -> usize {
    let d = diam.max(1.0);
    (d.ln() / gamma.ln()).ceil().max(0.0) as usize + 2
}

fn annotate(e: Error, level: usize) -> Error {
    match e {
        Error::RetriesExhausted { attempts, detail } => {
            Error::RetriesExhausted { attempts, detail: format!("level {level}: {detail}") }
        }
        Error::Internal(s) => Error::Internal(format!("level {level}: {s}")),
        other => other,
    }
}

/// The hierarchy of a single vertex: one singleton level.
pub fn trivial(params: &HierarchyParams) -> Hierarchy {
    let part = Partition::singletons(1);
    let g = WeightedGraph::new(1, vec![]).expect("single vertex");
    Hierarchy {
        params: params.clone(),
        levels: vec![Level {
            clusters: part.clusters().to_vec(),
            audit: audit_level(&g, &part, 1.0, params.sparsity_divisor, 0),
            net: None,
            realized_beta: None,
            attempts: 0,
            centers: None,
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_grid, gen_path, gen_pathwidth, gen_random_tree};

    #[test]
    fn parameter_identity() {
        let p = HierarchyParams::new(2.0, 3.0, 10, SolverKind::General);
        assert_eq!(p.gamma, 30.0);
        assert_eq!(p.sparsity_divisor, 20.0);
        assert_eq!(p.net_scale(1), 2.0 * 2.0 * 3.0 * 30.0);
    }

    #[test]
    fn single_vertex() {
        let g = WeightedGraph::new(1, vec![]).unwrap();
        let h = build_hierarchy(&g, &HierarchyParams::general(1), None, 0).unwrap();
        assert_eq!(h.levels.len(), 1);
        assert_eq!(h, trivial(&HierarchyParams::general(1)));
    }

    #[test]
    fn unit_path() {
        let g = gen_path(8);
        let params = HierarchyParams::new(1.0, 1.0, usize::MAX, SolverKind::General);
        assert_eq!(params.gamma, 6.0);
        let params = HierarchyParams { solver: SolverKind::Tree, ..params };
        let h = build_hierarchy(&g, &params, None, 5).unwrap();
        let rep = verify::check_hierarchy(&g, &h);
        assert!(rep.ok, "{:?}", rep.issues);
        for (i, l) in h.levels.iter().enumerate() {
            assert!(l.audit.max_diameter <= params.gamma.powi(i as i32));
        }
    }

    #[test]
    fn long_path_has_middle_levels() {
        let g = gen_path(300);
        let params = HierarchyParams::tree(300);
        let h = build_hierarchy(&g, &params, None, 8).unwrap();
        assert!(h.levels.len() >= 3, "{}", h.levels.len());
        let rep = verify::check_hierarchy(&g, &h);
        assert!(rep.ok, "{:?}", rep.issues);
    }

    #[test]
    fn grid_general() {
        let g = gen_grid(8, 8);
        let params = HierarchyParams::general(64);
        let h = build_hierarchy(&g, &params, None, 1).unwrap();
        let rep = verify::check_hierarchy(&g, &h);
        assert!(rep.ok, "{:?}", rep.issues);
        assert_eq!(h.levels.last().unwrap().clusters.len(), 1);
    }

    #[test]
    fn tree_and_pathwidth_solvers() {
        let g = gen_random_tree(40, 3);
        let h = build_hierarchy(&g, &HierarchyParams::tree(40), None, 2).unwrap();
        assert!(verify::check_hierarchy(&g, &h).ok);
        let (g, pd) = gen_pathwidth(2, 40, 4);
        let h = build_hierarchy(&g, &HierarchyParams::pathwidth(40, 2), Some(&pd), 2).unwrap();
        assert!(verify::check_hierarchy(&g, &h).ok);
    }

    #[test]
    fn doubling_mode_on_grid() {
        let g = gen_grid(10, 10);
        let params = HierarchyParams::doubling(100, 2.0);
        let h = build_hierarchy(&g, &params, None, 3).unwrap();
        let rep = verify::check_hierarchy(&g, &h);
        assert!(rep.ok, "{:?}", rep.issues);
    }

    #[test]
    fn augmented_decomposition_is_valid() {
        let (g, pd) = gen_pathwidth(2, 20, 9);
        let s = dangling_net::sample_net(&g, 4.0, 2.0, usize::MAX, 1, 0).unwrap();
        let aug = augment_decomposition(&pd, g.n(), &s.net.anchors());
        aug.validate(&s.graph).unwrap();
        assert!(aug.width() <= pd.width() + 1);
    }

    #[test]
    fn level_cap_values() {
        assert_eq!(level_cap(1.0, 6.0), 2);
        assert_eq!(level_cap(7.0, 6.0), 4);
        assert_eq!(level_cap(36.0, 6.0), 4);
    }

    #[test]
    #[ignore]
    fn profile() {
        for side in [8, 16, 32] {
            let g = gen_grid(side, side);
            let t = std::time::Instant::now();
            let params = HierarchyParams::general(side * side);
            let h = build_hierarchy(&g, &params, None, 1).unwrap();
            let sizes: Vec<usize> = h.levels.iter().map(|l| l.clusters.len()).collect();
            println!("general {side}: gamma {:.0} levels {sizes:?} {:?}", params.gamma, t.elapsed());
            let t = std::time::Instant::now();
            let params = HierarchyParams::doubling(side * side, 2.0);
            let h = build_hierarchy(&g, &params, None, 1).unwrap();
            let sizes: Vec<usize> = h.levels.iter().map(|l| l.clusters.len()).collect();
            println!("doubling {side}: gamma {:.0} levels {sizes:?} {:?}", params.gamma, t.elapsed());
        }
    }
}

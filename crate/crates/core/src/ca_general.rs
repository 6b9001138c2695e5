//! Cluster aggregation on arbitrary graphs by round-robin geometric growth.
//!
//! Each cluster follows the shortest path from its smallest vertex to the
//! nearest portal. The part of that path before the first assigned vertex is
//! its MID prefix. In every round each portal, in id order, draws
//! `g ~ Geom(1/2)` and performs `g` expansions; an expansion takes the
//! unassigned clusters whose prefix ends in the portal's region and assigns
//! every cluster those prefixes touch.

use std::collections::BTreeSet;

use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::SourceForest;
use crate::instances::{Assignment, ClusterAggInstance};
use crate::rng::{rng, Rng};
use crate::verify;

pub const DEFAULT_ROUNDS_FACTOR: usize = 10;

#[derive(Clone, Debug, Serialize)]
pub struct PortalDraws {
    pub portal: usize,
    pub total: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GeneralStats {
    pub rounds_scheduled: usize,
    pub rounds_used: usize,
    /// More rounds than scheduled were needed to assign everything.
    pub overrun: bool,
    pub expansions: u64,
    pub draws: Vec<PortalDraws>,
    pub max_detour: f64,
}

impl GeneralStats {
    pub fn draws_of(&self, portal: usize) -> u64 {
        self.draws.iter().find(|d| d.portal == portal).map_or(0, |d| d.total)
    }
}

/// `Geom(1/2)` on `{1, 2, ...}` with `P(g = k) = 2^-k`.
fn geometric(r: &mut Rng) -> u64 {
    let mut g = 1;
    while r.gen_bool(0.5) {
        g += 1;
    }
    g
}

pub fn scheduled_rounds(clusters: usize, rounds_factor: usize) -> usize {
    let log = (clusters.max(1) as f64).log2().ceil() as usize;
    (rounds_factor * log).max(1)
}

struct State<'a> {
    inst: &'a ClusterAggInstance,
    assigned: Vec<Option<usize>>,
    paths: Vec<Vec<usize>>,
    // first index on paths[i] that lies in an assigned cluster
    end: Vec<usize>,
    // (cluster, position) for every occurrence of a vertex on some path
    occ: Vec<Vec<(usize, usize)>>,
    bucket: Vec<BTreeSet<usize>>,
    in_bucket: Vec<Option<usize>>,
    mark: Vec<bool>,
    remaining: usize,
}

impl<'a> State<'a> {
    fn new(inst: &'a ClusterAggInstance, forest: &SourceForest) -> Self {
        let part = &inst.partition;
        let n = inst.graph.n();
        let k = part.len();
        let mut assigned = vec![None; k];
        for &p in inst.portals.iter() {
            assigned[part.cluster_of(p)] = Some(p);
        }
        let paths: Vec<Vec<usize>> = (0..k).map(|i| forest.path(part.cluster(i)[0])).collect();
        let mut occ = vec![Vec::new(); n];
        for (i, path) in paths.iter().enumerate() {
            if assigned[i].is_none() {
                for (pos, &x) in path.iter().enumerate() {
                    occ[x].push((i, pos));
                }
            }
        }
        let mut s = State {
            inst,
            remaining: assigned.iter().filter(|a| a.is_none()).count(),
            assigned,
            end: vec![0; k],
            paths,
            occ,
            bucket: vec![BTreeSet::new(); n],
            in_bucket: vec![None; k],
            mark: vec![false; k],
        };
        for i in 0..k {
            if s.assigned[i].is_none() {
                let pos = s.paths[i]
                    .iter()
                    .position(|&x| s.assigned[part.cluster_of(x)].is_some())
                    .expect("path ends at a portal");
                s.end[i] = pos;
                let p = s.assigned[part.cluster_of(s.paths[i][pos])].unwrap();
                s.bucket[p].insert(i);
                s.in_bucket[i] = Some(p);
            }
        }
        s
    }

    fn expand(&mut self, p: usize) {
        let part = &self.inst.partition;
        let u1 = std::mem::take(&mut self.bucket[p]);
        if u1.is_empty() {
            return;
        }
        let mut u2 = Vec::new();
        for &i in &u1 {
            self.in_bucket[i] = None;
            for &x in &self.paths[i][..self.end[i]] {
                let c = part.cluster_of(x);
                if self.assigned[c].is_none() && !self.mark[c] {
                    self.mark[c] = true;
                    u2.push(c);
                }
            }
        }
        for &c in &u2 {
            self.mark[c] = false;
            self.assigned[c] = Some(p);
            if let Some(b) = self.in_bucket[c].take() {
                self.bucket[b].remove(&c);
            }
        }
        self.remaining -= u2.len();
        for &c in &u2 {
            for &x in part.cluster(c).iter() {
                for &(i, pos) in &self.occ[x] {
                    if self.assigned[i].is_none() && pos < self.end[i] {
                        self.end[i] = pos;
                        if let Some(b) = self.in_bucket[i] {
                            if b != p {
                                self.bucket[b].remove(&i);
                            }
                        }
                        self.bucket[p].insert(i);
                        self.in_bucket[i] = Some(p);
                    }
                }
            }
        }
    }
}

/// Runs the round-robin expansion. The instance is normalized first; cluster
/// indices are unchanged by normalization.
pub fn solve_general(inst: &ClusterAggInstance, seed: u64, rounds_factor: usize) -> Result<(Assignment, GeneralStats)> {
    let inst = inst.normalized();
    if inst.portals.is_empty() {
        return Err(Error::NoPortals);
    }
    if !inst.graph.is_connected() {
        return Err(Error::Disconnected);
    }
    let forest = SourceForest::new(&inst.graph, &inst.portals);
    let mut st = State::new(&inst, &forest);
    let scheduled = scheduled_rounds(inst.partition.len(), rounds_factor);
    let mut r = rng(seed);
    let mut draws: Vec<PortalDraws> = inst.portals.iter().map(|&p| PortalDraws { portal: p, total: 0 }).collect();
    let mut expansions = 0u64;
    let mut round = 0;
    let hard_cap = 100 * scheduled + 1000;
    loop {
        round += 1;
        for (idx, &p) in inst.portals.iter().enumerate() {
            let g = geometric(&mut r);
            draws[idx].total += g;
            for _ in 0..g {
                st.expand(p);
                expansions += 1;
            }
        }
        if st.remaining == 0 {
            break;
        }
        if round >= hard_cap {
            return Err(Error::Internal(format!("{} clusters unassigned after {round} rounds", st.remaining)));
        }
    }
    let asg = Assignment::new(st.assigned.into_iter().map(|a| a.expect("all assigned")).collect());
    let report = verify::check_assignment(&inst, &asg);
    let stats = GeneralStats {
        rounds_scheduled: scheduled,
        rounds_used: round,
        overrun: round > scheduled,
        expansions,
        draws,
        max_detour: report.max_detour,
    };
    Ok((asg, stats))
}

/// Largest per-vertex slack against the draw ledger `2 * (sum of draws of
/// the vertex's portal) * delta`. Non-positive means the ledger holds.
pub fn ledger_excess(inst: &ClusterAggInstance, asg: &Assignment, stats: &GeneralStats) -> f64 {
    let inst = inst.normalized();
    let rep = verify::check_assignment(&inst, asg);
    let part = &inst.partition;
    let delta = inst.delta();
    (0..inst.graph.n())
        .map(|v| {
            let p = asg.portal_of_cluster[part.cluster_of(v)];
            rep.vertex_detour[v] - 2.0 * stats.draws_of(p) as f64 * delta
        })
        .fold(f64::NEG_INFINITY, f64::max)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{VertexSet, WeightedGraph};
    use crate::instances::{gen_grid, gen_partition, gen_path, random_portals, Partition};

    #[test]
    fn single_portal_single_cluster_is_identity() {
        let g = gen_path(3);
        let part = Partition::new(3, vec![VertexSet::new([0, 1, 2])], 2.0).unwrap();
        let inst = ClusterAggInstance::new(g, part, VertexSet::new([1])).unwrap();
        let (asg, stats) = solve_general(&inst, 1, DEFAULT_ROUNDS_FACTOR).unwrap();
        assert_eq!(asg.portal_of_cluster, vec![1]);
        assert_eq!(stats.max_detour, 0.0);
    }

    #[test]
    fn singleton_path_goes_to_nearer_portal() {
        let inst = ClusterAggInstance::new(gen_path(4), Partition::singletons(4), VertexSet::new([0, 3])).unwrap();
        for seed in 0..10 {
            let (asg, stats) = solve_general(&inst, seed, DEFAULT_ROUNDS_FACTOR).unwrap();
            assert_eq!(asg.portal_of_cluster, vec![0, 0, 3, 3]);
            assert_eq!(stats.max_detour, 0.0);
            assert_eq!(stats.rounds_used, 1);
        }
    }

    #[test]
    fn no_portals_is_an_error() {
        let inst = ClusterAggInstance::new(gen_path(2), Partition::singletons(2), VertexSet::default()).unwrap();
        assert!(matches!(solve_general(&inst, 0, 10), Err(Error::NoPortals)));
    }

    #[test]
    fn disconnected_is_an_error() {
        let g = WeightedGraph::new(3, [(0, 1, 1.0)]).unwrap();
        let inst = ClusterAggInstance::new(g, Partition::singletons(3), VertexSet::new([0])).unwrap();
        assert!(matches!(solve_general(&inst, 0, 10), Err(Error::Disconnected)));
    }

    // Two rails of 10 cells joined by rungs; every rung pair is a cluster.
    fn ladder() -> ClusterAggInstance {
        let len = 10;
        let mut edges = Vec::new();
        for i in 0..len {
            edges.push((i, len + i, 1.0));
            if i + 1 < len {
                edges.push((i, i + 1, 1.0));
                edges.push((len + i, len + i + 1, 1.0));
            }
        }
        let g = WeightedGraph::new(2 * len, edges).unwrap();
        let clusters = (0..len).map(|i| VertexSet::new([i, len + i])).collect();
        let part = Partition::new(2 * len, clusters, 1.0).unwrap();
        ClusterAggInstance::new(g, part, VertexSet::new([0, 14, 9])).unwrap()
    }

    #[test]
    fn ladder_within_bound() {
        let inst = ladder();
        for seed in 0..50 {
            let (asg, stats) = solve_general(&inst, seed, DEFAULT_ROUNDS_FACTOR).unwrap();
            let rep = verify::check_assignment(&inst, &asg);
            assert!(rep.valid, "{:?}", rep.violations);
            assert!(rep.max_detour <= 80.0 * 10f64.log2() * inst.delta());
            assert!(ledger_excess(&inst, &asg, &stats) <= 1e-9);
        }
    }

    #[test]
    fn matches_full_recomputation() {
        for seed in 0..40 {
            let g = gen_grid(7, 7);
            let part = gen_partition(&g, 2.0, seed);
            let portals = random_portals(49, 1 + (seed as usize % 5), seed + 100);
            let inst = ClusterAggInstance::new(g, part, portals).unwrap();
            let (asg, _) = solve_general(&inst, seed, 3).unwrap();
            assert_eq!(asg.portal_of_cluster, reference::solve(&inst, seed, 3), "seed {seed}");
        }
    }
}

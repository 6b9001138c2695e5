//! Deterministic cluster aggregation for graphs with a path decomposition.
//!
//! The solver runs in at most `pw + 1` phases. A phase looks only at the
//! unassigned part of every bag (its partial bag), gives each unassigned
//! vertex a preferred portal, cuts the sequence of partial bags into groups
//! sharing a preferred portal, and then assigns along each cluster's path to
//! that portal: odd groups first, even groups second. Every nonempty partial
//! bag loses at least one vertex per phase, so bags of size `pw + 1` empty out
//! in time.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::SourceForest;
use crate::instances::{within, Assignment, ClusterAggInstance, Partition, PathDecomposition};
use crate::verify;

/// Consecutive partial bags sharing a preferred portal, and the unassigned
/// clusters meeting them that prefer it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Group {
    pub portal: usize,
    /// Indices into the phase's list of partial bags.
    pub bags: Range<usize>,
    pub clusters: Vec<usize>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PhaseAudit {
    pub phase: usize,
    pub partial_bags: usize,
    pub groups: Vec<Group>,
    /// Clusters that qualified for more than one group.
    pub group_overlaps: usize,
    /// Clusters touched by the paths of two groups at least two apart.
    pub path_conflicts: usize,
    /// Even-group path vertices assigned in the first subphase to a portal
    /// other than a neighbouring group's.
    pub left_right_violations: usize,
    /// Path vertices already assigned to a portal other than the one the
    /// current step assigns towards.
    pub assignment_conflicts: usize,
    pub clusters_assigned: usize,
    pub max_detour: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PathwidthAudit {
    pub width: usize,
    pub phases: Vec<PhaseAudit>,
    pub max_detour: f64,
    pub bound: f64,
}

impl PathwidthAudit {
    /// True when every structural check held and all detour bounds were met.
    pub fn clean(&self) -> bool {
        within(self.max_detour, self.bound)
            && self.phases.iter().all(|p| {
                p.group_overlaps == 0
                    && p.path_conflicts == 0
                    && p.left_right_violations == 0
                    && p.assignment_conflicts == 0
                    && within(p.max_detour, p.bound)
            })
    }
}

/// Greedy left-to-right grouping of partial bags. `pref[v]` is the preferred
/// portal of each unassigned vertex. A cluster that qualifies for several
/// groups stays in the first one; the second return value counts such
/// clusters.
pub fn build_groups(partial: &[Vec<usize>], pref: &[usize], part: &Partition) -> (Vec<Group>, usize) {
    let mut cluster_prefs: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for bag in partial {
        for &v in bag {
            let c = part.cluster_of(v);
            if cluster_prefs.contains_key(&c) {
                continue;
            }
            let prefs = part.cluster(c).iter().map(|&u| pref[u]).collect();
            cluster_prefs.insert(c, prefs);
        }
    }
    let bag_clusters: Vec<BTreeSet<usize>> =
        partial.iter().map(|bag| bag.iter().map(|&v| part.cluster_of(v)).collect()).collect();
    let bag_prefs: Vec<BTreeSet<usize>> =
        bag_clusters.iter().map(|cs| cs.iter().flat_map(|c| cluster_prefs[c].iter().copied()).collect()).collect();

    let mut groups = Vec::new();
    let mut taken = BTreeSet::new();
    let mut overlaps = 0;
    let mut i = 0;
    while i < partial.len() {
        let mut best = (0, usize::MAX);
        for &p in &bag_prefs[i] {
            let len = bag_prefs[i..].iter().take_while(|s| s.contains(&p)).count();
            if len > best.0 {
                best = (len, p);
            }
        }
        let (len, portal) = best;
        let mut clusters = BTreeSet::new();
        for cs in &bag_clusters[i..i + len] {
            for &c in cs {
                if cluster_prefs[&c].contains(&portal) {
                    clusters.insert(c);
                }
            }
        }
        let mut kept = Vec::new();
        for c in clusters {
            if taken.insert(c) {
                kept.push(c);
            } else {
                overlaps += 1;
            }
        }
        groups.push(Group { portal, bags: i..i + len, clusters: kept });
        i += len;
    }
    (groups, overlaps)
}

struct Solver<'a> {
    inst: &'a ClusterAggInstance,
    forest: SourceForest,
    assigned: Vec<Option<usize>>,
}

impl Solver<'_> {
    fn portal_of(&self, v: usize) -> Option<usize> {
        self.assigned[self.inst.partition.cluster_of(v)]
    }

    /// Portal of the first assigned vertex on the forest path from each
    /// unassigned vertex, or the path's own portal.
    fn preferred(&self) -> Vec<usize> {
        let n = self.inst.graph.n();
        let mut pref = vec![usize::MAX; n];
        for &v in &self.forest.search.order {
            pref[v] = match self.forest.parent(v) {
                None => v,
                Some(u) => self.portal_of(u).unwrap_or(pref[u]),
            };
        }
        pref
    }

    /// Prefix of the forest path from `v` that stops before the first
    /// assigned vertex.
    fn open_path(&self, v: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = Some(v);
        while let Some(x) = cur {
            if self.portal_of(x).is_some() {
                break;
            }
            out.push(x);
            cur = self.forest.parent(x);
        }
        out
    }

    /// Assigns every unassigned cluster met by `path` to `portal`. Returns
    /// how many path vertices were already assigned elsewhere.
    fn assign_all(&mut self, path: &[usize], portal: usize) -> usize {
        let mut conflicts = 0;
        for &x in path {
            let c = self.inst.partition.cluster_of(x);
            match self.assigned[c] {
                None => self.assigned[c] = Some(portal),
                Some(q) if q != portal => conflicts += 1,
                Some(_) => {}
            }
        }
        conflicts
    }

    /// Walks `path` from its far end back to its start. Unassigned clusters
    /// take the portal of the nearest assigned vertex after them on the path,
    /// `target` if there is none.
    fn assign_backward(&mut self, path: &[usize], mut target: usize) {
        for &x in path.iter().rev() {
            let c = self.inst.partition.cluster_of(x);
            match self.assigned[c] {
                Some(q) => target = q,
                None => self.assigned[c] = Some(target),
            }
        }
    }

    /// Largest detour over assigned vertices, measured inside the current
    /// partial pre-images.
    fn partial_detour(&self) -> f64 {
        let map: Vec<usize> = self.assigned.iter().map(|a| a.unwrap_or(usize::MAX)).collect();
        let pre = verify::preimage_distances(&self.inst.graph, &self.inst.partition, &map);
        (0..self.inst.graph.n())
            .filter(|&v| self.portal_of(v).is_some())
            .map(|v| pre[v] - self.forest.dist(v))
            .fold(0.0, f64::max)
    }

    fn phase(&mut self, phi: usize, pd: &PathDecomposition) -> Result<Option<PhaseAudit>> {
        let part = &self.inst.partition;
        let partial: Vec<Vec<usize>> = pd
            .bags
            .iter()
            .map(|b| b.iter().copied().filter(|&v| self.portal_of(v).is_none()).collect::<Vec<_>>())
            .filter(|b| !b.is_empty())
            .collect();
        if partial.is_empty() {
            return Ok(None);
        }
        let pref = self.preferred();
        let (groups, group_overlaps) = build_groups(&partial, &pref, part);
        let before = self.assigned.iter().filter(|a| a.is_some()).count();

        // pi_C for every group cluster, fixed at the start of the phase
        let paths: Vec<Vec<(usize, Vec<usize>)>> = groups
            .iter()
            .map(|g| {
                g.clusters
                    .iter()
                    .map(|&c| {
                        let v = part.cluster(c).iter().copied().find(|&u| pref[u] == g.portal).expect("group portal");
                        (c, self.open_path(v))
                    })
                    .collect()
            })
            .collect();

        let touched: Vec<BTreeSet<usize>> = paths
            .iter()
            .map(|ps| ps.iter().flat_map(|(_, p)| p.iter().map(|&x| part.cluster_of(x))).collect())
            .collect();
        let mut path_conflicts = 0;
        for i in 0..groups.len() {
            for j in i + 2..groups.len() {
                path_conflicts += touched[i].intersection(&touched[j]).count();
            }
        }

        let mut assignment_conflicts = 0;
        for i in (0..groups.len()).step_by(2) {
            for (_, path) in &paths[i] {
                assignment_conflicts += self.assign_all(path, groups[i].portal);
            }
        }

        let mut left_right_violations = 0;
        for i in (1..groups.len()).step_by(2) {
            let left = groups[i - 1].portal;
            let right = groups.get(i + 1).map(|g| g.portal);
            for (_, path) in &paths[i] {
                for &x in path {
                    if let Some(q) = self.portal_of(x) {
                        if q != left && Some(q) != right {
                            left_right_violations += 1;
                        }
                    }
                }
            }
        }

        for i in (1..groups.len()).step_by(2) {
            let portal = groups[i].portal;
            let left = groups[i - 1].portal;
            // (cluster, prefix before x_C, f(x_C)) split by which side x_C went to
            let mut free = Vec::new();
            let mut to_left = Vec::new();
            let mut to_right = Vec::new();
            for (c, path) in &paths[i] {
                match path.iter().position(|&x| self.portal_of(x).is_some()) {
                    None => free.push(path.clone()),
                    Some(k) => {
                        let q = self.portal_of(path[k]).expect("assigned");
                        let entry = (*c, path[..k].to_vec(), q);
                        if q == left || groups.get(i + 1).map(|g| g.portal) != Some(q) {
                            to_left.push(entry);
                        } else {
                            to_right.push(entry);
                        }
                    }
                }
            }
            for path in &free {
                assignment_conflicts += self.assign_all(path, portal);
            }
            let bags = groups[i].bags.clone();
            let meets = |c: usize, b: usize| partial[b].iter().any(|&v| part.cluster_of(v) == c);
            // rightmost list bag met by a left-side cluster, then the leftmost
            // list bag met by a right-side cluster
            if let Some(b) = bags.clone().rev().find(|&b| to_left.iter().any(|e| meets(e.0, b))) {
                let e = to_left.iter().find(|e| meets(e.0, b)).expect("met");
                self.assign_backward(&e.1, e.2);
            }
            if let Some(b) = bags.clone().find(|&b| to_right.iter().any(|e| meets(e.0, b))) {
                let e = to_right.iter().find(|e| meets(e.0, b)).expect("met");
                self.assign_backward(&e.1, e.2);
            }
        }

        for (gi, g) in groups.iter().enumerate() {
            for b in g.bags.clone() {
                if partial[b].iter().all(|&v| self.portal_of(v).is_none()) {
                    return Err(Error::Internal(format!(
                        "phase {phi}: partial bag {b} {:?} of group {gi} (portal {}, bags {:?}) lost no vertex; groups {:?}",
                        partial[b], g.portal, g.bags, groups
                    )));
                }
            }
        }

        let after = self.assigned.iter().filter(|a| a.is_some()).count();
        Ok(Some(PhaseAudit {
            phase: phi,
            partial_bags: partial.len(),
            groups,
            group_overlaps,
            path_conflicts,
            left_right_violations,
            assignment_conflicts,
            clusters_assigned: after - before,
            max_detour: self.partial_detour(),
            bound: 8.0 * phi as f64 * self.inst.delta(),
        }))
    }
}

/// Runs the phased solver. The decomposition is validated against the
/// graph; the instance is normalized first.
pub fn solve_pathwidth(inst: &ClusterAggInstance, pd: &PathDecomposition) -> Result<(Assignment, PathwidthAudit)> {
    let inst = inst.normalized();
    if inst.portals.is_empty() {
        return Err(Error::NoPortals);
    }
    if !inst.graph.is_connected() {
        return Err(Error::Disconnected);
    }
    pd.validate(&inst.graph)?;
    let width = pd.width();
    let mut solver = Solver {
        inst: &inst,
        forest: SourceForest::new(&inst.graph, &inst.portals),
        assigned: vec![None; inst.partition.len()],
    };
    let mut phases = Vec::new();
    for phi in 1..=width + 1 {
        match solver.phase(phi, pd)? {
            Some(a) => phases.push(a),
            None => break,
        }
    }
    if let Some(c) = solver.assigned.iter().position(|a| a.is_none()) {
        return Err(Error::Internal(format!("cluster {c} unassigned after {} phases", width + 1)));
    }
    let asg = Assignment::new(solver.assigned.into_iter().map(|a| a.expect("assigned")).collect());
    let report = verify::check_assignment(&inst, &asg);
    let audit =
        PathwidthAudit { width, phases, max_detour: report.max_detour, bound: 8.0 * (width + 1) as f64 * inst.delta() };
    Ok((asg, audit))
}


#[cfg(test)]
mod sweep {
    use super::*;
    use crate::instances::{gen_partition, gen_pathwidth, random_portals};

    #[test]
    fn audits_stay_clean() {
        for pw in 1..=3 {
            for seed in 0..60u64 {
                let (g, pd) = gen_pathwidth(pw, 40, seed);
                let part = gen_partition(&g, 3.0, seed ^ 7);
                let portals = random_portals(g.n(), 4, seed ^ 9);
                let inst = ClusterAggInstance::new(g, part, portals).unwrap();
                let (asg, audit) = solve_pathwidth(&inst, &pd).unwrap();
                let rep = verify::check_assignment(&inst, &asg);
                assert!(rep.valid, "pw {pw} seed {seed}: {:?}", rep.violations);
                assert!(audit.clean(), "pw {pw} seed {seed}: {audit:?}");
                assert!(audit.phases.len() <= pw + 1);
            }
        }
    }
}

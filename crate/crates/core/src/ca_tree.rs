//! Deterministic cluster aggregation on trees with detour at most 4Δ.
//!
//! After every portal has been made a leaf in its own cluster, each cluster
//! is classified by the path from its topmost vertex to its nearest portal:
//! monotone when the portal lies below, bitone otherwise. Monotone clusters
//! take their own portal, bitone clusters that contain another bitone
//! cluster's apex take that cluster's portal, and the rest follow whichever
//! cluster contains their apex.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{SourceForest, VertexSet, WeightedGraph};
use crate::instances::{Assignment, ClusterAggInstance, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    Portal,
    Monotone,
    ReflectiveBitone,
    Bitone,
}

#[derive(Clone, Debug, Serialize)]
pub struct TreeClassification {
    pub root: usize,
    /// Vertex of each cluster closest to the root.
    pub cluster_root: Vec<usize>,
    /// Nearest portal of each cluster root.
    pub nearest_portal: Vec<usize>,
    pub kind: Vec<ClusterKind>,
    /// Apex of the root-to-portal path for bitone clusters.
    pub apex: Vec<Option<usize>>,
    /// Parent of each cluster root, `None` for the tree root.
    pub root_parent: Vec<Option<usize>>,
    pub root_depth: Vec<usize>,
}

impl TreeClassification {
    pub fn clusters_of(&self, kind: ClusterKind) -> Vec<usize> {
        (0..self.kind.len()).filter(|&i| self.kind[i] == kind).collect()
    }
}

/// Instance whose portals are leaves in singleton clusters, and the way back.
#[derive(Clone, Debug)]
pub struct Leafified {
    pub instance: ClusterAggInstance,
    /// Original portal of every portal of the transformed instance.
    pub back: Vec<(usize, usize)>,
    pub original_clusters: usize,
}

impl Leafified {
    pub fn original_portal(&self, p: usize) -> usize {
        self.back.iter().find(|&&(q, _)| q == p).map_or(p, |&(_, o)| o)
    }

    /// Maps an assignment of the transformed instance back to the original.
    pub fn map_back(&self, asg: &Assignment) -> Assignment {
        Assignment::new(
            asg.portal_of_cluster[..self.original_clusters].iter().map(|&p| self.original_portal(p)).collect(),
        )
    }
}

/// Hangs a new leaf `p'` below every portal `p` that is not already a leaf in
/// a singleton cluster, with a weight-0 edge, and makes `{p'}` a new cluster.
pub fn leafify_portals(inst: &ClusterAggInstance) -> Result<Leafified> {
    let inst = inst.normalized();
    let g = &inst.graph;
    if !g.is_tree() {
        return Err(Error::NotATree);
    }
    let part = &inst.partition;
    let n = g.n();
    let mut new_edges = Vec::new();
    let mut clusters: Vec<VertexSet> = part.clusters().to_vec();
    let mut portals = Vec::new();
    let mut back = Vec::new();
    for &p in inst.portals.iter() {
        if g.degree(p) <= 1 && part.cluster(part.cluster_of(p)).len() == 1 {
            portals.push(p);
            back.push((p, p));
        } else {
            let q = n + new_edges.len();
            new_edges.push((p, q, 0.0));
            clusters.push(VertexSet::singleton(q));
            portals.push(q);
            back.push((q, p));
        }
    }
    let graph = g.extended(new_edges.len(), &new_edges)?;
    let partition = Partition::new(graph.n(), clusters, part.delta())?;
    let instance = ClusterAggInstance::new(graph, partition, VertexSet::new(portals))?;
    Ok(Leafified { instance, back, original_clusters: part.len() })
}

struct Rooted {
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    tin: Vec<usize>,
    tout: Vec<usize>,
}

impl Rooted {
    fn new(g: &WeightedGraph, root: usize) -> Self {
        let n = g.n();
        let mut parent = vec![None; n];
        let mut depth = vec![0; n];
        let mut tin = vec![0; n];
        let mut tout = vec![0; n];
        let mut clock = 0;
        // (vertex, next neighbor index)
        let mut stack = vec![(root, 0usize)];
        tin[root] = clock;
        clock += 1;
        while let Some(top) = stack.last_mut() {
            let (v, i) = *top;
            if let Some(&(u, _)) = g.neighbors(v).get(i) {
                top.1 += 1;
                if Some(u) == parent[v] {
                    continue;
                }
                parent[u] = Some(v);
                depth[u] = depth[v] + 1;
                tin[u] = clock;
                clock += 1;
                stack.push((u, 0));
            } else {
                tout[v] = clock;
                stack.pop();
            }
        }
        Rooted { parent, depth, tin, tout }
    }

    fn is_descendant(&self, v: usize, of: usize) -> bool {
        self.tin[of] <= self.tin[v] && self.tin[v] < self.tout[of]
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        a
    }
}

/// Classifies the clusters of a leafified tree instance rooted at vertex 0.
pub fn classify(inst: &ClusterAggInstance) -> Result<TreeClassification> {
    let g = &inst.graph;
    if !g.is_tree() {
        return Err(Error::NotATree);
    }
    if inst.portals.is_empty() {
        return Err(Error::NoPortals);
    }
    let part = &inst.partition;
    let root = 0;
    let tree = Rooted::new(g, root);
    let forest = SourceForest::new(g, &inst.portals);
    let k = part.len();
    let portal_of = inst.portal_clusters();
    let mut cluster_root = Vec::with_capacity(k);
    let mut nearest_portal = Vec::with_capacity(k);
    let mut kind = Vec::with_capacity(k);
    let mut apex = Vec::with_capacity(k);
    for i in 0..k {
        let c = part.cluster(i);
        let r = *c.iter().min_by_key(|&&v| (tree.depth[v], v)).unwrap();
        cluster_root.push(r);
        if let Some(p) = portal_of[i] {
            nearest_portal.push(p);
            kind.push(ClusterKind::Portal);
            apex.push(None);
            continue;
        }
        let p = forest.nearest(r).ok_or(Error::Disconnected)?;
        nearest_portal.push(p);
        if tree.is_descendant(p, r) {
            kind.push(ClusterKind::Monotone);
            apex.push(None);
        } else {
            kind.push(ClusterKind::Bitone);
            apex.push(Some(tree.lca(r, p)));
        }
    }
    for j in 0..k {
        if let Some(t) = apex[j] {
            let i = part.cluster_of(t);
            if kind[i] == ClusterKind::Bitone {
                kind[i] = ClusterKind::ReflectiveBitone;
            }
        }
    }
    let root_parent = cluster_root.iter().map(|&r| tree.parent[r]).collect();
    let root_depth = cluster_root.iter().map(|&r| tree.depth[r]).collect();
    Ok(TreeClassification { root, cluster_root, nearest_portal, kind, apex, root_parent, root_depth })
}

/// Solves a leafified instance; returns the assignment and classification.
pub fn solve_leafified(inst: &ClusterAggInstance) -> Result<(Assignment, TreeClassification)> {
    let cls = classify(inst)?;
    let part = &inst.partition;
    let k = part.len();
    let mut f: Vec<Option<usize>> = vec![None; k];
    for i in 0..k {
        if matches!(cls.kind[i], ClusterKind::Portal | ClusterKind::Monotone) {
            f[i] = Some(cls.nearest_portal[i]);
        }
    }
    // smallest-index bitone cluster whose apex lies in each cluster
    let mut apex_owner: Vec<Option<usize>> = vec![None; k];
    for j in 0..k {
        if let Some(t) = cls.apex[j] {
            let i = part.cluster_of(t);
            if apex_owner[i].is_none() {
                apex_owner[i] = Some(j);
            }
        }
    }
    for i in 0..k {
        if cls.kind[i] == ClusterKind::ReflectiveBitone {
            let j = apex_owner[i].expect("reflective cluster holds an apex");
            f[i] = Some(cls.nearest_portal[j]);
        }
    }
    // The remaining bitone clusters climb towards their apex. Every cluster
    // met on the way shares that apex; a reflective one among them may
    // already point at another portal, so each cluster follows the cluster
    // just above its root instead of the apex cluster, top-down. Without a
    // reflective cluster in between both rules agree.
    let mut rest: Vec<usize> = cls.clusters_of(ClusterKind::Bitone);
    rest.sort_by_key(|&i| (cls.root_depth[i], i));
    for i in rest {
        let up = cls.root_parent[i].expect("bitone cluster root has a parent");
        let j = part.cluster_of(up);
        f[i] = Some(f[j].ok_or_else(|| Error::Internal(format!("cluster {j} above cluster {i} is unassigned")))?);
    }
    let portal_of_cluster = f
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| Error::Internal(format!("cluster {i} left unassigned"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((Assignment::new(portal_of_cluster), cls))
}

#[derive(Clone, Debug)]
pub struct TreeSolution {
    /// Assignment of the original instance.
    pub assignment: Assignment,
    pub leafified: Leafified,
    /// Assignment of the leafified instance.
    pub leaf_assignment: Assignment,
    pub classification: TreeClassification,
}

/// Leafifies, solves and maps the result back to the original instance.
pub fn solve_tree(inst: &ClusterAggInstance) -> Result<TreeSolution> {
    if inst.portals.is_empty() {
        return Err(Error::NoPortals);
    }
    let leafified = leafify_portals(inst)?;
    let (leaf_assignment, classification) = solve_leafified(&leafified.instance)?;
    let assignment = leafified.map_back(&leaf_assignment);
    Ok(TreeSolution { assignment, leafified, leaf_assignment, classification })
}

/// The lower-bound path: portal, a two-vertex cluster of diameter `delta`,
/// portal, with unit links. Every assignment gives some vertex detour
/// at least `delta`.
pub fn trivial_lower_bound_instance(delta: f64) -> ClusterAggInstance {
    let g = WeightedGraph::new(4, [(0, 1, 1.0), (1, 2, delta), (2, 3, 1.0)]).expect("path");
    let part = Partition::new(4, vec![VertexSet::singleton(0), VertexSet::new([1, 2]), VertexSet::singleton(3)], delta)
        .expect("partition");
    ClusterAggInstance::new(g, part, VertexSet::new([0, 3])).expect("instance")
}

/// Instance on which the tree algorithm's detour reaches `4Δ - 2ε` at
/// vertex 4, for a long leg `d`.
///
/// Vertex 0 is the root. Cluster `{0, 2}` has nearest portal 1 below it and
/// is monotone. Cluster `{3, 4}` hangs below 2; its nearest portal 5 is
/// reached through 2, so it is bitone with apex 2 and follows `{0, 2}` to
/// portal 1, although vertex 4 sits at distance `d` from portal 6.
pub fn tight_instance(delta: f64, eps: f64, d: f64) -> ClusterAggInstance {
    let edges = [
        (0, 1, d + 2.0 * delta - 2.0 * eps),
        (0, 2, delta - eps / 2.0),
        (2, 3, eps / 2.0),
        (2, 5, d + delta - eps),
        (3, 4, delta),
        (4, 6, d),
    ];
    let g = WeightedGraph::new(7, edges).expect("tree");
    let part = Partition::new(
        7,
        vec![
            VertexSet::new([0, 2]),
            VertexSet::new([3, 4]),
            VertexSet::singleton(1),
            VertexSet::singleton(5),
            VertexSet::singleton(6),
        ],
        delta,
    )
    .expect("partition");
    ClusterAggInstance::new(g, part, VertexSet::new([1, 5, 6])).expect("instance")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{gen_partition, gen_random_tree, random_portals};
    use crate::verify::{check_assignment, oracle_min_distortion};

    #[test]
    fn leaf_portals_are_kept() {
        let g = WeightedGraph::new(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let inst = ClusterAggInstance::new(g, Partition::singletons(3), VertexSet::new([0, 2])).unwrap();
        let l = leafify_portals(&inst).unwrap();
        assert_eq!(l.instance.graph.n(), 3);
        assert_eq!(l.instance.portals, inst.portals);
    }

    #[test]
    fn internal_portal_gets_a_leaf() {
        let g = WeightedGraph::new(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let inst = ClusterAggInstance::new(g, Partition::singletons(3), VertexSet::new([1])).unwrap();
        let l = leafify_portals(&inst).unwrap();
        assert_eq!(l.instance.graph.n(), 4);
        assert_eq!(l.instance.partition.len(), 4);
        assert_eq!(l.instance.portals.as_slice(), &[3]);
        assert_eq!(l.original_portal(3), 1);
    }

    #[test]
    fn non_tree_is_rejected() {
        let g = WeightedGraph::new(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let inst = ClusterAggInstance::new(g, Partition::singletons(3), VertexSet::new([1])).unwrap();
        assert!(matches!(solve_tree(&inst), Err(Error::NotATree)));
    }

    // Root 0 is the center: the leaf clusters climb to it and descend to the
    // auxiliary portal leaf, so they are bitone, following the center.
    #[test]
    fn star_with_central_portal() {
        let g = WeightedGraph::new(5, (1..5).map(|i| (0, i, 1.0))).unwrap();
        let part = Partition::new(
            5,
            vec![VertexSet::new([0, 1]), VertexSet::new([2]), VertexSet::new([3]), VertexSet::new([4])],
            1.0,
        )
        .unwrap();
        let inst = ClusterAggInstance::new(g, part, VertexSet::new([0])).unwrap();
        let sol = solve_tree(&inst).unwrap();
        let cls = &sol.classification;
        assert_eq!(cls.kind[0], ClusterKind::Monotone);
        for i in 1..4 {
            assert_eq!(cls.kind[i], ClusterKind::Bitone);
        }
        assert_eq!(sol.assignment.portal_of_cluster, vec![0; 4]);
        let rep = check_assignment(&inst, &sol.assignment);
        assert!(rep.valid);
        assert!(rep.max_detour <= 2.0);
    }

    // {2, 3} climbs to apex 0 but is reflective for {6} and goes to portal 4.
    // {5} hangs below it with apex 0 as well; following the apex cluster {0}
    // would send it to portal 1 across {2, 3}.
    #[test]
    fn reflective_cluster_on_the_climb() {
        let g = WeightedGraph::new(7, [(0, 1, 1.0), (0, 2, 1.0), (2, 3, 1.0), (3, 4, 2.0), (2, 5, 1.0), (3, 6, 1.0)])
            .unwrap();
        let cs = |v: &[usize]| VertexSet::new(v.iter().copied());
        let part = Partition::new(7, vec![cs(&[0]), cs(&[2, 3]), cs(&[5]), cs(&[6]), cs(&[1]), cs(&[4])], 1.0).unwrap();
        let inst = ClusterAggInstance::new(g, part, VertexSet::new([1, 4])).unwrap();
        let sol = solve_tree(&inst).unwrap();
        let cls = &sol.classification;
        assert_eq!(cls.kind[1], ClusterKind::ReflectiveBitone);
        assert_eq!(cls.kind[2], ClusterKind::Bitone);
        assert_eq!(cls.apex[2], Some(0));
        assert_eq!(sol.assignment.portal_of_cluster, vec![1, 4, 4, 4, 1, 4]);
        let rep = check_assignment(&inst, &sol.assignment);
        assert!(rep.valid, "{:?}", rep.violations);
        assert!(rep.max_detour <= 4.0);
    }

    #[test]
    fn tight_instance_reaches_four_delta() {
        let delta = 1.0;
        let eps = delta / 100.0;
        let inst = tight_instance(delta, eps, 10.0 * delta);
        inst.validate().unwrap();
        let sol = solve_tree(&inst).unwrap();
        assert_eq!(sol.classification.kind[0], ClusterKind::Monotone);
        assert_eq!(sol.classification.kind[1], ClusterKind::Bitone);
        assert_eq!(sol.classification.apex[1], Some(2));
        let rep = check_assignment(&inst, &sol.assignment);
        assert!((rep.vertex_detour[4] - (4.0 * delta - 2.0 * eps)).abs() <= 1e-9);
    }

    #[test]
    fn lower_bound_instance_optimum_is_delta() {
        let inst = trivial_lower_bound_instance(3.0);
        let r = oracle_min_distortion(&inst).unwrap();
        assert_eq!(r.optimum, 3.0);
    }

    #[test]
    fn random_trees_within_four_delta_and_class_caps() {
        for seed in 0..200u64 {
            let n = 2 + (seed as usize * 7) % 120;
            let g = gen_random_tree(n, seed);
            let delta = [1.0, 3.0, 6.0, 12.0][seed as usize % 4];
            let part = gen_partition(&g, delta, seed ^ 77);
            let portals = random_portals(n, 1 + seed as usize % 6, seed + 5);
            let inst = ClusterAggInstance::new(g, part, portals).unwrap();
            let sol = solve_tree(&inst).unwrap();
            let rep = check_assignment(&inst, &sol.assignment);
            assert!(rep.valid, "seed {seed}: {:?}", rep.violations);
            assert!(rep.max_detour <= 4.0 * delta + 1e-9, "seed {seed}");
            let leaf = check_assignment(&sol.leafified.instance, &sol.leaf_assignment);
            assert_eq!(leaf.max_detour, rep.max_detour);
            let cls = &sol.classification;
            assert!(leaf.max_over(cls.clusters_of(ClusterKind::Monotone)) <= 2.0 * delta + 1e-9);
            assert!(leaf.max_over(cls.clusters_of(ClusterKind::ReflectiveBitone)) <= 2.0 * delta + 1e-9);
            assert!(leaf.max_over(cls.clusters_of(ClusterKind::Bitone)) <= 4.0 * delta + 1e-9);
        }
    }
}

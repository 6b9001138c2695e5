//! Partitions, cluster aggregation instances, path decompositions and the
//! seeded generators used by tests, the CLI and the acceptance battery.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, SourceForest, VertexSet, WeightedGraph};
use crate::rng::{derive_seed, rng};

/// Relative slack used when comparing measured diameters with their bound.
pub const EPS: f64 = 1e-9;

const CONNECT_RETRIES: u64 = 100;

pub fn within(value: f64, bound: f64) -> bool {
    value <= bound + EPS * bound.abs().max(1.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PartitionData {
    delta: f64,
    clusters: Vec<VertexSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    centers: Option<Vec<usize>>,
}

/// A partition of `0..n` into clusters, with the diameter bound it claims.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionData", into = "PartitionData")]
pub struct Partition {
    delta: f64,
    clusters: Vec<VertexSet>,
    centers: Option<Vec<usize>>,
    cluster_of: Vec<usize>,
}

impl TryFrom<PartitionData> for Partition {
    type Error = Error;
    fn try_from(d: PartitionData) -> Result<Self> {
        let n = d.clusters.iter().map(|c| c.len()).sum();
        let p = Partition::new(n, d.clusters, d.delta)?;
        match d.centers {
            Some(c) => p.with_centers(c),
            None => Ok(p),
        }
    }
}

impl From<Partition> for PartitionData {
    fn from(p: Partition) -> Self {
        PartitionData { delta: p.delta, clusters: p.clusters, centers: p.centers }
    }
}

impl Partition {
    /// Checks that `clusters` are non-empty, disjoint and cover `0..n`.
    pub fn new(n: usize, clusters: Vec<VertexSet>, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) {
            return Err(Error::InvalidPartition(format!("diameter bound {delta}")));
        }
        let mut cluster_of = vec![usize::MAX; n];
        for (i, c) in clusters.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::InvalidPartition(format!("cluster {i} is empty")));
            }
            for &v in c.iter() {
                if v >= n {
                    return Err(Error::InvalidPartition(format!("vertex {v} outside 0..{n}")));
                }
                if cluster_of[v] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("vertex {v} in two clusters")));
                }
                cluster_of[v] = i;
            }
        }
        if let Some(v) = cluster_of.iter().position(|&c| c == usize::MAX) {
            return Err(Error::InvalidPartition(format!("vertex {v} is in no cluster")));
        }
        Ok(Partition { delta, clusters, centers: None, cluster_of })
    }

    pub fn singletons(n: usize) -> Self {
        Partition::new(n, (0..n).map(VertexSet::singleton).collect(), 0.0).expect("singletons")
    }

    /// Attaches one designated center per cluster.
    pub fn with_centers(mut self, centers: Vec<usize>) -> Result<Self> {
        if centers.len() != self.clusters.len() {
            return Err(Error::InvalidPartition("one center per cluster required".into()));
        }
        for (i, &c) in centers.iter().enumerate() {
            if c >= self.cluster_of.len() || self.cluster_of[c] != i {
                return Err(Error::InvalidPartition(format!("center {c} not in cluster {i}")));
            }
        }
        self.centers = Some(centers);
        Ok(self)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn clusters(&self) -> &[VertexSet] {
        &self.clusters
    }

    pub fn cluster(&self, i: usize) -> &VertexSet {
        &self.clusters[i]
    }

    pub fn cluster_of(&self, v: usize) -> usize {
        self.cluster_of[v]
    }

    pub fn cluster_index(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn centers(&self) -> Option<&[usize]> {
        self.centers.as_deref()
    }

    pub fn max_strong_diameter(&self, g: &WeightedGraph) -> f64 {
        self.clusters.iter().map(|c| graph::strong_diameter(g, c)).fold(0.0, f64::max)
    }

    /// Every cluster is connected with strong diameter at most `delta`.
    pub fn validate(&self, g: &WeightedGraph) -> Result<()> {
        if g.n() != self.n() {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} vertices, graph has {}",
                self.n(),
                g.n()
            )));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            let d = graph::strong_diameter(g, c);
            if d.is_infinite() {
                return Err(Error::InvalidPartition(format!("cluster {i} is disconnected")));
            }
            if !within(d, self.delta) {
                return Err(Error::InvalidPartition(format!("cluster {i} has strong diameter {d} > {}", self.delta)));
            }
        }
        Ok(())
    }
}

/// A sequence of bags. Valid when every vertex and edge is covered and the
/// bags holding any vertex are consecutive.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathDecomposition {
    pub bags: Vec<VertexSet>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PdViolation {
    UnknownVertex(usize),
    UncoveredVertex(usize),
    UncoveredEdge(usize, usize),
    NotContiguous(usize),
}

impl fmt::Display for PdViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PdViolation::UnknownVertex(v) => write!(f, "bag mentions unknown vertex {v}"),
            PdViolation::UncoveredVertex(v) => write!(f, "vertex {v} is in no bag"),
            PdViolation::UncoveredEdge(u, v) => write!(f, "edge ({u}, {v}) is in no bag"),
            PdViolation::NotContiguous(v) => write!(f, "bags containing {v} are not consecutive"),
        }
    }
}

impl PathDecomposition {
    pub fn new(bags: Vec<VertexSet>) -> Self {
        PathDecomposition { bags }
    }

    /// Largest bag size minus one.
    pub fn width(&self) -> usize {
        self.bags.iter().map(|b| b.len()).max().unwrap_or(1).saturating_sub(1)
    }

    /// First and last bag index per vertex.
    pub fn spans(&self, n: usize) -> Vec<Option<(usize, usize)>> {
        let mut spans: Vec<Option<(usize, usize)>> = vec![None; n];
        for (i, bag) in self.bags.iter().enumerate() {
            for &v in bag.iter() {
                if v < n {
                    spans[v] = Some(match spans[v] {
                        None => (i, i),
                        Some((a, _)) => (a, i),
                    });
                }
            }
        }
        spans
    }

    pub fn check(&self, g: &WeightedGraph) -> Option<PdViolation> {
        let n = g.n();
        let mut count = vec![0usize; n];
        for bag in &self.bags {
            for &v in bag.iter() {
                if v >= n {
                    return Some(PdViolation::UnknownVertex(v));
                }
                count[v] += 1;
            }
        }
        let spans = self.spans(n);
        for v in 0..n {
            match spans[v] {
                None => return Some(PdViolation::UncoveredVertex(v)),
                Some((a, b)) => {
                    if b - a + 1 != count[v] {
                        return Some(PdViolation::NotContiguous(v));
                    }
                }
            }
        }
        for &(u, v, _) in g.edges() {
            let (a1, b1) = spans[u].unwrap();
            let (a2, b2) = spans[v].unwrap();
            let lo = a1.max(a2);
            let hi = b1.min(b2);
            // contiguous spans overlap exactly when both contain some bag
            if lo > hi {
                return Some(PdViolation::UncoveredEdge(u, v));
            }
        }
        None
    }

    pub fn validate(&self, g: &WeightedGraph) -> Result<()> {
        match self.check(g) {
            None => Ok(()),
            Some(v) => Err(Error::InvalidDecomposition(v.to_string())),
        }
    }
}

/// Graph, Δ-bounded partition and portal set. The partition's `delta` is the
/// instance's Δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAggInstance {
    pub graph: WeightedGraph,
    pub partition: Partition,
    pub portals: VertexSet,
    /// Portals removed by normalization, kept for reporting.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_portals: Vec<usize>,
    #[serde(default, rename = "path_decomposition", skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<PathDecomposition>,
}

impl ClusterAggInstance {
    pub fn new(graph: WeightedGraph, partition: Partition, portals: VertexSet) -> Result<Self> {
        if partition.n() != graph.n() {
            return Err(Error::InvalidInstance(format!(
                "partition covers {} vertices, graph has {}",
                partition.n(),
                graph.n()
            )));
        }
        if let Some(&p) = portals.iter().find(|&&p| p >= graph.n()) {
            return Err(Error::InvalidInstance(format!("portal {p} outside graph")));
        }
        Ok(ClusterAggInstance { graph, partition, portals, dropped_portals: Vec::new(), decomposition: None })
    }

    pub fn with_decomposition(mut self, pd: PathDecomposition) -> Self {
        self.decomposition = Some(pd);
        self
    }

    pub fn delta(&self) -> f64 {
        self.partition.delta()
    }

    /// Full structural validation: partition bounds, portals, decomposition.
    pub fn validate(&self) -> Result<()> {
        self.partition.validate(&self.graph)?;
        if !self.graph.is_connected() {
            return Err(Error::Disconnected);
        }
        if let Some(pd) = &self.decomposition {
            pd.validate(&self.graph)?;
        }
        Ok(())
    }

    pub fn is_normalized(&self) -> bool {
        let mut seen = vec![false; self.partition.len()];
        for &p in self.portals.iter() {
            let c = self.partition.cluster_of(p);
            if seen[c] {
                return false;
            }
            seen[c] = true;
        }
        true
    }

    /// Keeps only the smallest-id portal of each cluster. Dropped portals are
    /// recorded. Clusters and their indices are unchanged.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        let mut seen = vec![false; self.partition.len()];
        let mut keep = Vec::new();
        for &p in self.portals.iter() {
            let c = self.partition.cluster_of(p);
            if seen[c] {
                out.dropped_portals.push(p);
            } else {
                seen[c] = true;
                keep.push(p);
            }
        }
        out.dropped_portals.sort_unstable();
        out.portals = VertexSet::new(keep);
        out
    }

    /// Cluster index -> portal it contains, if any (normalized instances).
    pub fn portal_clusters(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.partition.len()];
        for &p in self.portals.iter() {
            let c = self.partition.cluster_of(p);
            if out[c].is_none() {
                out[c] = Some(p);
            }
        }
        out
    }
}

/// Map from cluster index to the portal the cluster is aggregated into.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub portal_of_cluster: Vec<usize>,
}

impl Assignment {
    pub fn new(portal_of_cluster: Vec<usize>) -> Self {
        Assignment { portal_of_cluster }
    }

    /// Portal of every vertex.
    pub fn vertex_portals(&self, part: &Partition) -> Vec<usize> {
        (0..part.n()).map(|v| self.portal_of_cluster[part.cluster_of(v)]).collect()
    }

    /// Non-empty pre-images keyed by portal.
    pub fn preimages(&self, part: &Partition) -> BTreeMap<usize, VertexSet> {
        let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, c) in part.clusters().iter().enumerate() {
            m.entry(self.portal_of_cluster[i]).or_default().extend(c.iter().copied());
        }
        m.into_iter().map(|(p, vs)| (p, VertexSet::new(vs))).collect()
    }
}

/// Unit-weight `rows x cols` grid; vertex `r * cols + c`.
pub fn gen_grid(rows: usize, cols: usize) -> WeightedGraph {
    gen_grid_weighted(rows, cols, 1, 0)
}

/// Grid with integer weights drawn uniformly from `1..=max_w`.
pub fn gen_grid_weighted(rows: usize, cols: usize, max_w: u32, seed: u64) -> WeightedGraph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    let w = |r: &mut crate::rng::Rng| if max_w <= 1 { 1.0 } else { r.gen_range(1..=max_w) as f64 };
    for i in 0..rows {
        for j in 0..cols {
            let v = i * cols + j;
            if j + 1 < cols {
                edges.push((v, v + 1, w(&mut r)));
            }
            if i + 1 < rows {
                edges.push((v, v + cols, w(&mut r)));
            }
        }
    }
    WeightedGraph::new(rows * cols, edges).expect("grid")
}

/// Random recursive tree: vertex `i > 0` hangs below a uniform earlier vertex
/// with an integer weight in `1..=4`.
pub fn gen_random_tree(n: usize, seed: u64) -> WeightedGraph {
    let mut r = rng(seed);
    let edges: Vec<(usize, usize, f64)> = (1..n)
        .map(|i| {
            let p = r.gen_range(0..i);
            (p, i, r.gen_range(1..=4) as f64)
        })
        .collect();
    WeightedGraph::new(n, edges).expect("tree")
}

/// Path `0 - 1 - ... - n-1` with unit weights.
pub fn gen_path(n: usize) -> WeightedGraph {
    WeightedGraph::new(n, (1..n).map(|i| (i - 1, i, 1.0))).expect("path")
}

/// Connected unit-weight Erdős–Rényi graph; resamples with derived seeds until connected.
pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<WeightedGraph> {
    for attempt in 0..CONNECT_RETRIES {
        let mut r = rng(derive_seed(seed, attempt));
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if r.gen_bool(p.clamp(0.0, 1.0)) {
                    edges.push((u, v, 1.0));
                }
            }
        }
        let g = WeightedGraph::new(n, edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::RetriesExhausted { attempts: CONNECT_RETRIES as usize, detail: format!("G({n}, {p}) never connected") })
}

/// Random geometric graph: `n` uniform points in a box of side `n^(1/dims)`,
/// joined when at Euclidean distance at most `radius`. Weights are the
/// distances rounded up to a multiple of 1/64. Returns the coordinates too.
pub fn gen_geometric(n: usize, dims: usize, radius: f64, seed: u64) -> Result<(WeightedGraph, Vec<Vec<f64>>)> {
    let side = (n as f64).powf(1.0 / dims.max(1) as f64);
    for attempt in 0..CONNECT_RETRIES {
        let mut r = rng(derive_seed(seed, attempt));
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dims).map(|_| r.gen_range(0.0..side)).collect()).collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let d: f64 = pts[u].iter().zip(&pts[v]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if d <= radius {
                    let w = ((d * 64.0).ceil() / 64.0).max(1.0 / 64.0);
                    edges.push((u, v, w));
                }
            }
        }
        let g = WeightedGraph::new(n, edges)?;
        if g.is_connected() {
            return Ok((g, pts));
        }
    }
    Err(Error::RetriesExhausted {
        attempts: CONNECT_RETRIES as usize,
        detail: "geometric graph never connected".into(),
    })
}

/// Connected graph on `n` vertices of pathwidth at most `pw` with its
/// decomposition. A window of `pw + 1` live vertices slides over `0..n`: each
/// new vertex evicts a random live vertex and attaches to a random non-empty
/// subset of the rest. The bags are the successive windows. Weights are
/// integers in `1..=5`. With `pw == 0` only `n <= 1` is connected, so larger
/// `n` is built with width 1.
pub fn gen_pathwidth(pw: usize, n: usize, seed: u64) -> (WeightedGraph, PathDecomposition) {
    let pw = if n <= 1 { pw } else { pw.max(1) };
    let mut r = rng(seed);
    let w = |r: &mut crate::rng::Rng| r.gen_range(1..=5) as f64;
    let first = n.min(pw + 1);
    let mut edges: Vec<(usize, usize, f64)> = (1..first).map(|i| (i - 1, i, 0.0)).collect();
    for e in &mut edges {
        e.2 = w(&mut r);
    }
    let mut live: Vec<usize> = (0..first).collect();
    let mut bags = vec![VertexSet::new(live.clone())];
    for v in first..n {
        let out = r.gen_range(0..live.len());
        live.remove(out);
        let mut nbrs: Vec<usize> = live.iter().copied().filter(|_| r.gen_bool(0.5)).collect();
        if nbrs.is_empty() {
            nbrs.push(*live.choose(&mut r).expect("live window"));
        }
        for u in nbrs {
            let wt = w(&mut r);
            edges.push((u, v, wt));
        }
        live.push(v);
        bags.push(VertexSet::new(live.clone()));
    }
    let g = WeightedGraph::new(n, edges).expect("pathwidth graph");
    (g, PathDecomposition::new(bags))
}

/// Greedy net: scans `order` and keeps a vertex when no kept vertex is within
/// distance `r` of it. Kept vertices are pairwise more than `r` apart and
/// every vertex is within `r` of one.
pub fn greedy_net(g: &WeightedGraph, r: f64, order: &[usize]) -> Vec<usize> {
    let mut covered = vec![false; g.n()];
    let mut net = Vec::new();
    for &v in order {
        if covered[v] {
            continue;
        }
        net.push(v);
        for (u, _) in graph::ball(g, v, r) {
            covered[u] = true;
        }
    }
    net
}

pub fn shuffled_vertices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed));
    order
}

/// Ball carving: visits vertices in seeded random order and turns each still
/// unclustered vertex into a center whose cluster is every unclustered vertex
/// within `delta / 2` inside the unclustered subgraph. Centers are recorded.
pub fn gen_partition(g: &WeightedGraph, delta: f64, seed: u64) -> Partition {
    let n = g.n();
    let mut free = vec![true; n];
    let mut clusters = Vec::new();
    let mut centers = Vec::new();
    for c in shuffled_vertices(n, seed) {
        if !free[c] {
            continue;
        }
        let res = graph::search(g, &[(c, 0.0, c)], Some(&free), delta / 2.0);
        let members: Vec<usize> = (0..n).filter(|&v| res.dist[v] <= delta / 2.0).collect();
        for &v in &members {
            free[v] = false;
        }
        clusters.push(VertexSet::new(members));
        centers.push(c);
    }
    Partition::new(n, clusters, delta).expect("carving").with_centers(centers).expect("centers")
}

/// Voronoi partition around a greedy `delta / 2` net taken in seeded order.
/// Centers are pairwise more than `delta / 2` apart and each cell contains
/// the shortest path from each member to its center.
pub fn gen_net_partition(g: &WeightedGraph, delta: f64, seed: u64) -> Partition {
    let order = shuffled_vertices(g.n(), seed);
    let net = greedy_net(g, delta / 2.0, &order);
    voronoi_partition(g, &net, delta)
}

/// Cells of the shortest-path forest rooted at `centers` (smallest id wins
/// ties), in increasing center order.
pub fn voronoi_partition(g: &WeightedGraph, centers: &[usize], delta: f64) -> Partition {
    let mut sorted = centers.to_vec();
    sorted.sort_unstable();
    let f = SourceForest::new(g, &sorted);
    let mut cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..g.n() {
        cells.entry(f.nearest(v).expect("connected graph")).or_default().push(v);
    }
    let (cs, clusters): (Vec<usize>, Vec<VertexSet>) = cells.into_iter().map(|(c, vs)| (c, VertexSet::new(vs))).unzip();
    Partition::new(g.n(), clusters, delta).expect("voronoi").with_centers(cs).expect("centers")
}

/// `k` distinct uniformly random vertices.
pub fn random_portals(n: usize, k: usize, seed: u64) -> VertexSet {
    let mut order = shuffled_vertices(n, seed);
    order.truncate(k.min(n));
    VertexSet::new(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let g = gen_grid(2, 2);
        assert_eq!((g.n(), g.m()), (4, 4));
        assert!(g.is_connected());
        let g = gen_grid(3, 4);
        assert_eq!((g.n(), g.m()), (12, 17));
    }

    #[test]
    fn partition_rejects_overlap_and_gaps() {
        let c = |v: &[usize]| VertexSet::new(v.iter().copied());
        assert!(Partition::new(3, vec![c(&[0, 1]), c(&[1, 2])], 1.0).is_err());
        assert!(Partition::new(3, vec![c(&[0, 1])], 1.0).is_err());
        assert!(Partition::new(3, vec![c(&[0, 1]), c(&[2])], 1.0).is_ok());
    }

    #[test]
    fn carving_below_min_weight_gives_singletons() {
        let g = gen_grid_weighted(4, 4, 3, 1);
        let p = gen_partition(&g, 0.5, 9);
        assert_eq!(p.len(), 16);
        p.validate(&g).unwrap();
    }

    #[test]
    fn carving_respects_delta() {
        for seed in 0..20 {
            let g = gen_grid(6, 6);
            let p = gen_partition(&g, 4.0, seed);
            p.validate(&g).unwrap();
            let q = gen_net_partition(&g, 4.0, seed);
            q.validate(&g).unwrap();
        }
    }

    #[test]
    fn pathwidth_generator_is_valid() {
        for seed in 0..20 {
            for pw in 1..4 {
                let (g, pd) = gen_pathwidth(pw, 30, seed);
                assert!(g.is_connected());
                assert_eq!(pd.check(&g), None);
                assert!(pd.width() <= pw);
            }
        }
    }

    #[test]
    fn decomposition_violations_are_named() {
        let g = gen_path(3);
        let pd = PathDecomposition::new(vec![VertexSet::new([0, 1]), VertexSet::new([2])]);
        assert_eq!(pd.check(&g), Some(PdViolation::UncoveredEdge(1, 2)));
        let pd = PathDecomposition::new(vec![VertexSet::new([0, 1]), VertexSet::new([1, 2]), VertexSet::new([0])]);
        assert_eq!(pd.check(&g), Some(PdViolation::NotContiguous(0)));
    }

    #[test]
    fn normalization_keeps_smallest_portal() {
        let g = gen_path(4);
        let part = Partition::new(4, vec![VertexSet::new([0, 1]), VertexSet::new([2, 3])], 1.0).unwrap();
        let inst = ClusterAggInstance::new(g, part, VertexSet::new([1, 0, 3])).unwrap();
        assert!(!inst.is_normalized());
        let nz = inst.normalized();
        assert_eq!(nz.portals.as_slice(), &[0, 3]);
        assert_eq!(nz.dropped_portals, vec![1]);
        assert!(nz.is_normalized());
    }

    #[test]
    fn instance_json_roundtrip() {
        let g = gen_grid(3, 3);
        let part = gen_partition(&g, 2.0, 3);
        let inst = ClusterAggInstance::new(g, part, VertexSet::new([0, 8])).unwrap();
        let s = serde_json::to_string(&inst).unwrap();
        let back: ClusterAggInstance = serde_json::from_str(&s).unwrap();
        assert_eq!(inst, back);
    }
}

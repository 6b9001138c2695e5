//! Weighted undirected graphs and deterministic shortest-path searches.
//!
//! Every search breaks ties the same way: at equal tentative distance the
//! smaller source label wins, then the smaller predecessor id. Two runs on the
//! same input therefore produce identical trees.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::ops::Deref;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VertexId = usize;

/// Sorted, duplicate-free set of vertex ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct VertexSet(Vec<usize>);

impl VertexSet {
    pub fn new(items: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = items.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        VertexSet(v)
    }

    pub fn singleton(v: usize) -> Self {
        VertexSet(vec![v])
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// Boolean membership vector of length `n`.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &v in &self.0 {
            if v < n {
                m[v] = true;
            }
        }
        m
    }
}

impl Deref for VertexSet {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for VertexSet {
    fn from(v: Vec<usize>) -> Self {
        VertexSet::new(v)
    }
}

impl From<VertexSet> for Vec<usize> {
    fn from(s: VertexSet) -> Self {
        s.0
    }
}

impl FromIterator<usize> for VertexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        VertexSet::new(iter)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GraphData {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

/// Undirected graph with non-negative edge weights on vertices `0..n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphData", into = "GraphData")]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    adj: Vec<Vec<(usize, f64)>>,
}

impl TryFrom<GraphData> for WeightedGraph {
    type Error = Error;
    fn try_from(d: GraphData) -> Result<Self> {
        WeightedGraph::new(d.n, d.edges)
    }
}

impl From<WeightedGraph> for GraphData {
    fn from(g: WeightedGraph) -> Self {
        GraphData { n: g.n, edges: g.edges }
    }
}

impl WeightedGraph {
    /// Builds a graph, normalizing each edge to `(min, max, w)` and sorting
    /// the edge list. Self loops, unknown endpoints and negative or
    /// non-finite weights are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut list = Vec::new();
        for (u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!("edge ({u}, {v}) has an endpoint outside 0..{n}")));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self loop at {u}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidGraph(format!("edge ({u}, {v}) has weight {w}")));
            }
            list.push((u.min(v), u.max(v), w));
        }
        list.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        let mut adj = vec![Vec::new(); n];
        for &(u, v, w) in &list {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        for a in &mut adj {
            a.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        }
        Ok(WeightedGraph { n, edges: list, adj })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn min_weight(&self) -> Option<f64> {
        self.edges.iter().map(|e| e.2).min_by(f64::total_cmp)
    }

    /// Weight of the lightest edge between `u` and `v`, if any.
    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.adj[u].iter().filter(|&&(x, _)| x == v).map(|&(_, w)| w).min_by(f64::total_cmp)
    }

    /// Copy of the graph with `extra` new vertices and the given extra edges.
    pub fn extended(&self, extra: usize, new_edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut edges = self.edges.clone();
        edges.extend_from_slice(new_edges);
        WeightedGraph::new(self.n + extra, edges)
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(u, _) in &self.adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == self.n
    }

    pub fn is_tree(&self) -> bool {
        self.n > 0 && self.m() + 1 == self.n && self.is_connected()
    }

    /// Plain-text form: a `n m` header followed by one `u v w` line per edge.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.n, self.m());
        for &(u, v, w) in &self.edges {
            let _ = writeln!(s, "{u} {v} {w}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))?;
        let mut it = header.split_whitespace();
        let n: usize = parse_field(it.next(), "vertex count")?;
        let m: usize = parse_field(it.next(), "edge count")?;
        let mut edges = Vec::with_capacity(m);
        for line in lines {
            let mut it = line.split_whitespace();
            let u: usize = parse_field(it.next(), "edge endpoint")?;
            let v: usize = parse_field(it.next(), "edge endpoint")?;
            let w: f64 = parse_field(it.next(), "edge weight")?;
            edges.push((u, v, w));
        }
        if edges.len() != m {
            return Err(Error::Parse(format!("header declares {m} edges, found {}", edges.len())));
        }
        WeightedGraph::new(n, edges)
    }
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse(format!("missing {what}")))?;
    tok.parse().map_err(|_| Error::Parse(format!("bad {what}: {tok}")))
}

#[derive(Copy, Clone, Debug, PartialEq)]
struct Item {
    d: f64,
    label: usize,
    v: usize,
}

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        o.d.total_cmp(&self.d).then(o.label.cmp(&self.label)).then(o.v.cmp(&self.v))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Output of a (multi-source) shortest-path search. Vertices that were not
/// settled have infinite distance and no label.
#[derive(Clone, Debug)]
pub struct SearchResult {
    pub dist: Vec<f64>,
    pub parent: Vec<Option<usize>>,
    pub label: Vec<Option<usize>>,
    /// Settled vertices in settling order; parents precede children.
    pub order: Vec<usize>,
}

impl SearchResult {
    /// Vertices from `v` up the search tree to its source, inclusive.
    pub fn path_to_source(&self, v: usize) -> Vec<usize> {
        let mut path = vec![v];
        let mut cur = v;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path
    }

    pub fn reached(&self, v: usize) -> bool {
        self.dist[v].is_finite()
    }
}

/// Multi-source Dijkstra. Each source is `(vertex, initial distance, label)`.
/// Vertices are ranked by `(distance, label)`, so with offsets this is the
/// exponential-shift winner computation; with zero offsets and labels equal
/// to vertex ids it gives nearest-source assignment with smallest-id ties.
/// `mask` restricts the search to an induced subgraph; vertices farther than
/// `radius` are left unsettled.
pub fn search(g: &WeightedGraph, sources: &[(usize, f64, usize)], mask: Option<&[bool]>, radius: f64) -> SearchResult {
    let n = g.n();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut order = Vec::new();
    let allowed = |v: usize| mask.map_or(true, |m| m[v]);

    for &(s, off, lab) in sources {
        if !allowed(s) {
            continue;
        }
        let better = match label[s] {
            None => true,
            Some(l) => off < dist[s] || (off == dist[s] && lab < l),
        };
        if better {
            dist[s] = off;
            label[s] = Some(lab);
            heap.push(Item { d: off, label: lab, v: s });
        }
    }

    while let Some(Item { d, label: lab, v }) = heap.pop() {
        if done[v] || d != dist[v] || Some(lab) != label[v] {
            continue;
        }
        if d > radius {
            break;
        }
        done[v] = true;
        order.push(v);
        for &(u, w) in g.neighbors(v) {
            if done[u] || !allowed(u) {
                continue;
            }
            let nd = d + w;
            let better = match label[u] {
                None => true,
                Some(l) => nd < dist[u] || (nd == dist[u] && (lab < l || (lab == l && Some(v) < parent[u]))),
            };
            if better {
                dist[u] = nd;
                label[u] = Some(lab);
                parent[u] = Some(v);
                heap.push(Item { d: nd, label: lab, v: u });
            }
        }
    }
    for v in 0..n {
        if !done[v] {
            dist[v] = f64::INFINITY;
            parent[v] = None;
            label[v] = None;
        }
    }
    SearchResult { dist, parent, label, order }
}

/// Single-source shortest paths on the whole graph.
pub fn dijkstra(g: &WeightedGraph, source: usize) -> SearchResult {
    search(g, &[(source, 0.0, source)], None, f64::INFINITY)
}

pub fn distances(g: &WeightedGraph, source: usize) -> Vec<f64> {
    dijkstra(g, source).dist
}

/// Shortest-path distances from `source` inside the subgraph induced by `mask`.
pub fn induced_distances(g: &WeightedGraph, mask: &[bool], source: usize) -> Vec<f64> {
    search(g, &[(source, 0.0, source)], Some(mask), f64::INFINITY).dist
}

/// `d_{G[set]}(u, v)`; infinite when either endpoint is outside `set` or the
/// two are disconnected inside it.
pub fn induced_distance(g: &WeightedGraph, set: &VertexSet, u: usize, v: usize) -> f64 {
    if !set.contains(u) || !set.contains(v) {
        return f64::INFINITY;
    }
    let mask = set.mask(g.n());
    induced_distances(g, &mask, u)[v]
}

pub fn is_connected_subset(g: &WeightedGraph, set: &VertexSet) -> bool {
    let Some(&first) = set.first() else {
        return true;
    };
    let mask = set.mask(g.n());
    let d = induced_distances(g, &mask, first);
    set.iter().all(|&v| d[v].is_finite())
}

/// Largest induced distance between two members of `set`. Infinite when the
/// induced subgraph is disconnected, zero for singletons and the empty set.
pub fn strong_diameter(g: &WeightedGraph, set: &VertexSet) -> f64 {
    if set.len() <= 1 {
        return 0.0;
    }
    let mask = set.mask(g.n());
    let mut best: f64 = 0.0;
    for &s in set.iter() {
        let d = induced_distances(g, &mask, s);
        for &v in set.iter() {
            best = best.max(d[v]);
        }
        if best.is_infinite() {
            break;
        }
    }
    best
}

/// Vertices within distance `radius` of `center`, ordered by (distance, id).
pub fn ball(g: &WeightedGraph, center: usize, radius: f64) -> Vec<(usize, f64)> {
    let r = search(g, &[(center, 0.0, center)], None, radius);
    let mut out: Vec<(usize, f64)> = (0..g.n()).filter(|&v| r.dist[v] <= radius).map(|v| (v, r.dist[v])).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out
}

/// Shortest-path forest rooted at a set of sources: every vertex learns its
/// nearest source (smallest id on ties) and a path towards it. The suffix of a
/// forest path from any vertex is again that vertex's forest path.
#[derive(Clone, Debug)]
pub struct SourceForest {
    pub search: SearchResult,
}

impl SourceForest {
    pub fn new(g: &WeightedGraph, sources: &[usize]) -> Self {
        let src: Vec<(usize, f64, usize)> = sources.iter().map(|&s| (s, 0.0, s)).collect();
        SourceForest { search: search(g, &src, None, f64::INFINITY) }
    }

    pub fn nearest(&self, v: usize) -> Option<usize> {
        self.search.label[v]
    }

    pub fn dist(&self, v: usize) -> f64 {
        self.search.dist[v]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.search.parent[v]
    }

    pub fn path(&self, v: usize) -> Vec<usize> {
        self.search.path_to_source(v)
    }

    pub fn distances(&self) -> &[f64] {
        &self.search.dist
    }
}

/// Minimum distance between two distinct sources, found by scanning edges
/// that cross between Voronoi cells. Infinite with fewer than two sources.
pub fn min_source_separation(g: &WeightedGraph, sources: &[usize]) -> f64 {
    closest_source_pair(g, sources).map_or(f64::INFINITY, |c| c.0)
}

/// Closest pair of distinct sources as `(distance, a, b)` with `a < b`.
pub fn closest_source_pair(g: &WeightedGraph, sources: &[usize]) -> Option<(f64, usize, usize)> {
    let f = SourceForest::new(g, sources);
    let mut best: Option<(f64, usize, usize)> = None;
    for &(u, v, w) in g.edges() {
        if let (Some(a), Some(b)) = (f.nearest(u), f.nearest(v)) {
            if a != b {
                let d = f.dist(u) + w + f.dist(v);
                let cand = (d, a.min(b), a.max(b));
                if best.map_or(true, |x| (cand.0, cand.1, cand.2) < (x.0, x.1, x.2)) {
                    best = Some(cand);
                }
            }
        }
    }
    best
}

/// Largest shortest-path distance between two vertices (exact, `n` searches).
pub fn diameter(g: &WeightedGraph) -> f64 {
    (0..g.n()).into_par_iter().map(|s| distances(g, s).into_iter().fold(0.0f64, f64::max)).reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> WeightedGraph {
        WeightedGraph::new(n, (1..n).map(|i| (i - 1, i, 1.0))).unwrap()
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(WeightedGraph::new(2, [(0, 0, 1.0)]).is_err());
        assert!(WeightedGraph::new(2, [(0, 2, 1.0)]).is_err());
        assert!(WeightedGraph::new(2, [(0, 1, -1.0)]).is_err());
        assert!(WeightedGraph::new(2, [(0, 1, f64::NAN)]).is_err());
    }

    #[test]
    fn ties_prefer_smaller_predecessor() {
        // diamond 0-1-3 and 0-2-3 with equal lengths
        let g = WeightedGraph::new(4, [(0, 2, 1.0), (2, 3, 1.0), (0, 1, 1.0), (1, 3, 1.0)]).unwrap();
        let r = dijkstra(&g, 0);
        assert_eq!(r.parent[3], Some(1));
        assert_eq!(r.dist[3], 2.0);
    }

    #[test]
    fn forest_ties_prefer_smaller_source() {
        let g = path_graph(5);
        let f = SourceForest::new(&g, &[4, 0]);
        assert_eq!(f.nearest(2), Some(0));
        assert_eq!(f.path(2), vec![2, 1, 0]);
        assert_eq!(f.nearest(3), Some(4));
    }

    #[test]
    fn induced_vs_global() {
        // square 0-1-2-3-0 plus a heavy chord
        let g = WeightedGraph::new(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]).unwrap();
        let s = VertexSet::new([0, 1, 2]);
        assert_eq!(induced_distance(&g, &s, 0, 2), 2.0);
        let s = VertexSet::new([0, 2]);
        assert!(induced_distance(&g, &s, 0, 2).is_infinite());
        assert!(!is_connected_subset(&g, &s));
        assert_eq!(strong_diameter(&g, &VertexSet::new([0, 1, 2, 3])), 2.0);
    }

    #[test]
    fn ball_respects_radius() {
        let g = path_graph(6);
        let b = ball(&g, 2, 1.0);
        assert_eq!(b, vec![(2, 0.0), (1, 1.0), (3, 1.0)]);
    }

    #[test]
    fn separation_matches_pairwise() {
        let g = path_graph(10);
        assert_eq!(min_source_separation(&g, &[0, 9, 4]), 4.0);
        assert!(min_source_separation(&g, &[3]).is_infinite());
    }

    #[test]
    fn text_roundtrip() {
        let g = WeightedGraph::new(3, [(2, 0, 0.5), (1, 2, 3.0)]).unwrap();
        let back = WeightedGraph::from_text(&g.to_text()).unwrap();
        assert_eq!(g, back);
        assert!(WeightedGraph::from_text("3 2\n0 1 1\n").is_err());
    }

    #[test]
    fn json_roundtrip() {
        let g = WeightedGraph::new(3, [(0, 1, 1.25), (1, 2, 2.0)]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: WeightedGraph = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
    }
}

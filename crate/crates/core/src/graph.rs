//! Street navigation graph: ingestion, structural repair, and path queries.
//!
//! Nodes are stored sorted by [`NodeId`], so comparing dense node indices is
//! the same as comparing ids lexicographically. Every deterministic tie-break
//! in this crate leans on that.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_distance, initial_bearing, GeoError, GeoPoint};

/// Default maximum edge length kept by [`NavGraph::reject_long_jumps`].
pub const DEFAULT_MAX_EDGE_M: f64 = 100.0;

/// Lengths this close to a threshold count as equal to it.
pub const LENGTH_TOLERANCE_M: f64 = 1e-6;

/// Number of hops walked by [`NavGraph::link_heading`].
pub const HEADING_LOOKAHEAD_HOPS: usize = 3;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0} is not adjacent to {1}")]
    NotAdjacent(NodeId, NodeId),
    #[error("graph is not symmetric ({0} -> {1} has no reverse link)")]
    NotSymmetric(NodeId, NodeId),
    #[error("pruning would isolate protected node {0}")]
    ProtectedIsolation(NodeId),
    #[error("no destination reachable from {0}")]
    Unreachable(NodeId),
    #[error("empty destination set")]
    EmptyTargets,
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Directed link to a neighbor, by dense index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub to: usize,
    pub length_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolatedComponent {
    pub size: usize,
    pub sample: NodeId,
}

/// Audit trail of the repair passes applied to a graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphRepairReport {
    pub reverse_edges_added: usize,
    pub dead_end_nodes_removed: usize,
    pub long_jump_edges_removed: usize,
    pub isolated_components: Vec<IsolatedComponent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairConfig {
    pub max_edge_m: f64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self { max_edge_m: DEFAULT_MAX_EDGE_M }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub length_m: f64,
    pub nodes: Vec<NodeId>,
}

/// Immutable street graph. Links are directed until [`NavGraph::symmetrize`] runs.
#[derive(Debug, Clone)]
pub struct NavGraph {
    ids: Vec<NodeId>,
    points: Vec<GeoPoint>,
    index: HashMap<NodeId, usize>,
    links: Vec<Vec<Link>>,
}

/// Accumulates nodes and links, then validates them into a [`NavGraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: BTreeMap<NodeId, GeoPoint>,
    duplicate: Option<NodeId>,
    links: Vec<(NodeId, NodeId, Option<f64>)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self, id: impl Into<NodeId>, point: GeoPoint) -> &mut Self {
        let id = id.into();
        if self.nodes.insert(id.clone(), point).is_some() && self.duplicate.is_none() {
            self.duplicate = Some(id);
        }
        self
    }

    /// Directed link whose length is the haversine distance between its endpoints.
    pub fn link(&mut self, from: impl Into<NodeId>, to: impl Into<NodeId>) -> &mut Self {
        self.links.push((from.into(), to.into(), None));
        self
    }

    /// Directed link with an explicit length.
    pub fn link_with_length(&mut self, from: impl Into<NodeId>, to: impl Into<NodeId>, length_m: f64) -> &mut Self {
        self.links.push((from.into(), to.into(), Some(length_m)));
        self
    }

    /// Both directions of an edge.
    pub fn edge(&mut self, a: impl Into<NodeId>, b: impl Into<NodeId>) -> &mut Self {
        let (a, b) = (a.into(), b.into());
        self.link(a.clone(), b.clone());
        self.link(b, a)
    }

    pub fn build(&self) -> Result<NavGraph, GraphError> {
        if let Some(dup) = &self.duplicate {
            return Err(GraphError::Integrity(format!("duplicate node id {dup}")));
        }
        let ids: Vec<NodeId> = self.nodes.keys().cloned().collect();
        let points: Vec<GeoPoint> = self.nodes.values().copied().collect();
        let index: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); ids.len()];
        for (from, to, length) in &self.links {
            let resolve = |id: &NodeId| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| GraphError::Integrity(format!("link {from} -> {to} references undefined node {id}")))
            };
            let (a, b) = (resolve(from)?, resolve(to)?);
            if a == b {
                return Err(GraphError::Integrity(format!("self-loop at {from}")));
            }
            let len = length.unwrap_or_else(|| haversine_distance(points[a], points[b]));
            if !(len > 0.0 && len.is_finite()) {
                return Err(GraphError::Integrity(format!("link {from} -> {to} has non-positive length {len}")));
            }
            adj[a].insert(b, len);
        }
        let links =
            adj.into_iter().map(|m| m.into_iter().map(|(to, length_m)| Link { to, length_m }).collect()).collect();
        Ok(NavGraph { ids, points, index, links })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum GraphRecord {
    Node { id: NodeId, lat: f64, lon: f64 },
    Link { from_id: NodeId, to_id: NodeId },
}

/// Parses a graph file (one JSON record per line). The result is unrepaired.
pub fn load_graph(source: &[u8]) -> Result<(NavGraph, GraphRepairReport), GraphError> {
    let text = std::str::from_utf8(source)
        .map_err(|e| GraphError::Parse { line: 0, message: format!("invalid UTF-8: {e}") })?;
    let mut builder = GraphBuilder::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record: GraphRecord =
            serde_json::from_str(trimmed).map_err(|e| GraphError::Parse { line: line_no, message: e.to_string() })?;
        match record {
            GraphRecord::Node { id, lat, lon } => {
                if id.as_str().is_empty() {
                    return Err(GraphError::Parse { line: line_no, message: "empty node id".into() });
                }
                let p =
                    GeoPoint::new(lat, lon).map_err(|e| GraphError::Parse { line: line_no, message: e.to_string() })?;
                builder.node(id, p);
            }
            GraphRecord::Link { from_id, to_id } => {
                builder.link(from_id, to_id);
            }
        }
    }
    Ok((builder.build()?, GraphRepairReport::default()))
}

#[derive(PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, node)
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NavGraph {
    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of directed links.
    pub fn link_count(&self) -> usize {
        self.links.iter().map(Vec::len).sum()
    }

    /// Number of undirected edges (a link in either direction counts once).
    pub fn edge_count(&self) -> usize {
        let mut n = 0;
        for (a, out) in self.links.iter().enumerate() {
            for l in out {
                if a < l.to || !self.has_link(l.to, a) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &NodeId) -> Result<usize, GraphError> {
        self.index_of(id).ok_or_else(|| GraphError::UnknownNode(id.clone()))
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn id(&self, ix: usize) -> &NodeId {
        &self.ids[ix]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn point(&self, ix: usize) -> GeoPoint {
        self.points[ix]
    }

    pub fn point_of(&self, id: &NodeId) -> Option<GeoPoint> {
        self.index_of(id).map(|i| self.points[i])
    }

    /// Outgoing links of a node, sorted by neighbor index.
    pub fn links(&self, ix: usize) -> &[Link] {
        &self.links[ix]
    }

    pub fn degree(&self, ix: usize) -> usize {
        self.links[ix].len()
    }

    pub fn has_link(&self, from: usize, to: usize) -> bool {
        self.link_length(from, to).is_some()
    }

    pub fn link_length(&self, from: usize, to: usize) -> Option<f64> {
        let out = &self.links[from];
        out.binary_search_by(|l| l.to.cmp(&to)).ok().map(|i| out[i].length_m)
    }

    pub fn neighbors(&self, id: &NodeId) -> Result<Vec<&NodeId>, GraphError> {
        let ix = self.require(id)?;
        Ok(self.links[ix].iter().map(|l| &self.ids[l.to]).collect())
    }

    /// First link without a reverse counterpart, if any.
    pub fn find_asymmetry(&self) -> Option<(usize, usize)> {
        self.links
            .iter()
            .enumerate()
            .find_map(|(a, out)| out.iter().find(|l| !self.has_link(l.to, a)).map(|l| (a, l.to)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.find_asymmetry().is_none()
    }

    fn require_symmetric(&self) -> Result<(), GraphError> {
        match self.find_asymmetry() {
            Some((a, b)) => Err(GraphError::NotSymmetric(self.ids[a].clone(), self.ids[b].clone())),
            None => Ok(()),
        }
    }

    /// Serializes in the graph file format: nodes by id, then links by (from, to).
    pub fn to_graph_file(&self) -> String {
        let mut out = String::new();
        for (id, p) in self.ids.iter().zip(&self.points) {
            let rec = GraphRecord::Node { id: id.clone(), lat: p.lat(), lon: p.lon() };
            out.push_str(&serde_json::to_string(&rec).expect("graph record serializes"));
            out.push('\n');
        }
        for (a, outl) in self.links.iter().enumerate() {
            for l in outl {
                let rec = GraphRecord::Link { from_id: self.ids[a].clone(), to_id: self.ids[l.to].clone() };
                out.push_str(&serde_json::to_string(&rec).expect("graph record serializes"));
                out.push('\n');
            }
        }
        out
    }

    /// Rebuilds the graph keeping only the selected nodes and links.
    fn retain(&self, keep_node: &[bool], keep_link: impl Fn(usize, &Link) -> bool) -> NavGraph {
        let mut remap = vec![usize::MAX; self.ids.len()];
        let mut ids = Vec::new();
        let mut points = Vec::new();
        for (i, &keep) in keep_node.iter().enumerate() {
            if keep {
                remap[i] = ids.len();
                ids.push(self.ids[i].clone());
                points.push(self.points[i]);
            }
        }
        let links = (0..self.ids.len())
            .filter(|&i| keep_node[i])
            .map(|i| {
                self.links[i]
                    .iter()
                    .filter(|l| keep_node[l.to] && keep_link(i, l))
                    .map(|l| Link { to: remap[l.to], length_m: l.length_m })
                    .collect()
            })
            .collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        NavGraph { ids, points, index, links }
    }

    /// Adds every missing reverse link. Reverse links inherit the forward length.
    pub fn symmetrize(&self, report: &mut GraphRepairReport) -> NavGraph {
        let mut links = self.links.clone();
        let mut added = 0;
        for (a, out) in self.links.iter().enumerate() {
            for l in out {
                if !self.has_link(l.to, a) {
                    links[l.to].push(Link { to: a, length_m: l.length_m });
                    added += 1;
                }
            }
        }
        for out in &mut links {
            out.sort_by_key(|l| l.to);
        }
        report.reverse_edges_added += added;
        NavGraph { links, ..self.clone() }
    }

    /// Removes unprotected nodes of degree <= 1 until none remain.
    pub fn prune_dead_ends(
        &self,
        protected: &BTreeSet<NodeId>,
        report: &mut GraphRepairReport,
    ) -> Result<NavGraph, GraphError> {
        self.require_symmetric()?;
        let n = self.ids.len();
        let is_protected: Vec<bool> = self.ids.iter().map(|id| protected.contains(id)).collect();
        let mut degree: Vec<usize> = self.links.iter().map(Vec::len).collect();
        let mut alive = vec![true; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| !is_protected[i] && degree[i] <= 1).collect();
        let mut removed = 0;
        while let Some(v) = queue.pop_front() {
            if !alive[v] || degree[v] > 1 {
                continue;
            }
            alive[v] = false;
            removed += 1;
            for l in &self.links[v] {
                if alive[l.to] {
                    degree[l.to] -= 1;
                    if !is_protected[l.to] && degree[l.to] <= 1 {
                        queue.push_back(l.to);
                    }
                }
            }
        }
        if let Some(v) = (0..n).find(|&v| is_protected[v] && !self.links[v].is_empty() && degree[v] == 0) {
            return Err(GraphError::ProtectedIsolation(self.ids[v].clone()));
        }
        report.dead_end_nodes_removed += removed;
        Ok(self.retain(&alive, |_, _| true))
    }

    /// Drops both directions of every edge longer than `max_edge_m` (the threshold itself is kept).
    pub fn reject_long_jumps(&self, max_edge_m: f64, report: &mut GraphRepairReport) -> NavGraph {
        // haversine round-off puts exact-threshold edges a few nm over
        let max_edge_m = max_edge_m + LENGTH_TOLERANCE_M;
        let mut removed = BTreeSet::new();
        for (a, out) in self.links.iter().enumerate() {
            for l in out {
                let reverse = self.link_length(l.to, a).unwrap_or(l.length_m);
                if l.length_m > max_edge_m || reverse > max_edge_m {
                    removed.insert((a.min(l.to), a.max(l.to)));
                }
            }
        }
        report.long_jump_edges_removed += removed.len();
        let keep = vec![true; self.ids.len()];
        self.retain(&keep, |a, l| !removed.contains(&(a.min(l.to), a.max(l.to))))
    }

    /// Full repair: symmetrize, reject long jumps, prune dead ends, then report isolated components.
    pub fn repair(
        &self,
        protected: &BTreeSet<NodeId>,
        cfg: &RepairConfig,
    ) -> Result<(NavGraph, GraphRepairReport), GraphError> {
        let mut report = GraphRepairReport::default();
        let g = self.symmetrize(&mut report);
        let g = g.reject_long_jumps(cfg.max_edge_m, &mut report);
        let g = g.prune_dead_ends(protected, &mut report)?;
        report.isolated_components = g.validate_connectivity()?;
        Ok((g, report))
    }

    /// Connected components (links treated as undirected), each sorted, in order of smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.ids.len();
        let mut undirected: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (a, out) in self.links.iter().enumerate() {
            for l in out {
                undirected[a].push(l.to);
                undirected[l.to].push(a);
            }
        }
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for root in 0..n {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut comp = vec![root];
            let mut stack = vec![root];
            while let Some(v) = stack.pop() {
                for &w in &undirected[v] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Reports every component except the main one. Among equally large candidates the
    /// component rooted at the lexicographically largest id is kept as main.
    pub fn validate_connectivity(&self) -> Result<Vec<IsolatedComponent>, GraphError> {
        if self.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let comps = self.components();
        let main = comps
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| (c.len(), c[0]))
            .map(|(i, _)| i)
            .expect("non-empty graph has a component");
        Ok(comps
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != main)
            .map(|(_, c)| IsolatedComponent { size: c.len(), sample: self.ids[c[0]].clone() })
            .collect())
    }

    /// Uniform-cost search from `from` to the nearest member of `targets`.
    pub fn shortest_path(&self, from: &NodeId, to_set: &BTreeSet<NodeId>) -> Result<PathResult, GraphError> {
        let start = self.require(from)?;
        if to_set.is_empty() {
            return Err(GraphError::EmptyTargets);
        }
        let mut targets = vec![false; self.ids.len()];
        for id in to_set {
            targets[self.require(id)?] = true;
        }
        let (length_m, path) = self.shortest_path_ix(start, &targets)?;
        Ok(PathResult { length_m, nodes: path.into_iter().map(|i| self.ids[i].clone()).collect() })
    }

    /// Index-based variant of [`NavGraph::shortest_path`]. Ties resolve toward smaller indices.
    pub fn shortest_path_ix(&self, start: usize, targets: &[bool]) -> Result<(f64, Vec<usize>), GraphError> {
        let n = self.ids.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[start] = 0.0;
        heap.push(HeapEntry { dist: 0.0, node: start });
        while let Some(HeapEntry { dist: d, node: v }) = heap.pop() {
            if done[v] {
                continue;
            }
            done[v] = true;
            if targets[v] {
                let mut path = vec![v];
                let mut cur = v;
                while pred[cur] != usize::MAX {
                    cur = pred[cur];
                    path.push(cur);
                }
                path.reverse();
                return Ok((d, path));
            }
            for l in &self.links[v] {
                let nd = d + l.length_m;
                if nd < dist[l.to] {
                    dist[l.to] = nd;
                    pred[l.to] = v;
                    heap.push(HeapEntry { dist: nd, node: l.to });
                }
            }
        }
        Err(GraphError::Unreachable(self.ids[start].clone()))
    }

    /// Distance from every node to the nearest target (infinite when unreachable).
    pub fn distances_to(&self, targets: &[bool]) -> Vec<f64> {
        let n = self.ids.len();
        let mut incoming: Vec<Vec<Link>> = vec![Vec::new(); n];
        for (a, out) in self.links.iter().enumerate() {
            for l in out {
                incoming[l.to].push(Link { to: a, length_m: l.length_m });
            }
        }
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        for (v, _) in targets.iter().enumerate().filter(|(_, &t)| t) {
            dist[v] = 0.0;
            heap.push(HeapEntry { dist: 0.0, node: v });
        }
        while let Some(HeapEntry { dist: d, node: v }) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for l in &incoming[v] {
                let nd = d + l.length_m;
                if nd < dist[l.to] {
                    dist[l.to] = nd;
                    heap.push(HeapEntry { dist: nd, node: l.to });
                }
            }
        }
        dist
    }

    /// Heading of the street leaving `at` through `toward`.
    ///
    /// Walks up to three hops, continuing only through nodes with exactly one onward
    /// neighbor, and returns the bearing from `at` to the last node reached.
    pub fn link_heading(&self, at: &NodeId, toward: &NodeId) -> Result<f64, GraphError> {
        let (a, b) = (self.require(at)?, self.require(toward)?);
        if !self.has_link(a, b) {
            return Err(GraphError::NotAdjacent(at.clone(), toward.clone()));
        }
        Ok(self.link_heading_ix(a, b))
    }

    pub fn link_heading_ix(&self, at: usize, toward: usize) -> f64 {
        let (mut prev, mut cur) = (at, toward);
        for _ in 1..HEADING_LOOKAHEAD_HOPS {
            let mut onward = self.links[cur].iter().filter(|l| l.to != prev);
            match (onward.next(), onward.next()) {
                (Some(l), None) => {
                    prev = cur;
                    cur = l.to;
                }
                _ => break,
            }
        }
        initial_bearing(self.points[at], self.points[cur])
            .or_else(|_| initial_bearing(self.points[at], self.points[toward]))
            // coincident endpoints are rejected at build time
            .unwrap_or(0.0)
    }
}

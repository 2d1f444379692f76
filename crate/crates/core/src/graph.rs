//! Road topology, capped hop distances and the sparse joint spatial-temporal
//! edge set.
//!
//! A target node `i` at time `t` is linked to every node `j` within `alpha`
//! hops at each of the times `t, t-1, .., t-beta`. Only the spatial part of
//! that pattern is stored; the temporal fan-out is implicit in `beta`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoadGraph {
    n_nodes: usize,
    edges: Vec<(NodeId, NodeId)>,
    directed: bool,
}

impl RoadGraph {
    /// Builds a graph from raw pairs. Duplicates collapse; in undirected mode
    /// `(a, b)` and `(b, a)` are the same edge and are stored once as
    /// `(min, max)`. Self-loops carry no topology and are dropped.
    pub fn new(n_nodes: usize, pairs: impl IntoIterator<Item = (NodeId, NodeId)>, directed: bool) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (s, d) in pairs {
            if s >= n_nodes || d >= n_nodes {
                return Err(Error::Dimension(format!(
                    "edge ({s},{d}) references a node outside 0..{n_nodes}"
                )));
            }
            if s == d {
                continue;
            }
            let e = if directed { (s, d) } else { (s.min(d), s.max(d)) };
            set.insert(e);
        }
        Ok(Self {
            n_nodes,
            edges: set.into_iter().collect(),
            directed,
        })
    }

    pub fn path(n_nodes: usize) -> Self {
        let pairs = (1..n_nodes).map(|i| (i - 1, i));
        Self::new(n_nodes, pairs, false).expect("path edges are in range")
    }

    /// Undirected random spanning tree plus `extra` random chords.
    pub fn random_connected(n_nodes: usize, extra: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs: Vec<(NodeId, NodeId)> = (1..n_nodes).map(|i| (rng.random_range(0..i), i)).collect();
        if n_nodes > 1 {
            for _ in 0..extra {
                pairs.push((rng.random_range(0..n_nodes), rng.random_range(0..n_nodes)));
            }
        }
        Self::new(n_nodes, pairs, false).expect("random edges are in range")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Parses the `src,dst` edge-list CSV. `nodes` raises the node count for
    /// isolated trailing nodes.
    pub fn parse_csv(text: &str, directed: bool, nodes: Option<usize>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => break Some((i, l)),
                None => break None,
            }
        };
        let mut pairs = Vec::new();
        if let Some((i, h)) = header {
            let cols: Vec<&str> = h.split(',').map(str::trim).collect();
            if cols != ["src", "dst"] {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected header \"src,dst\", found {h:?}"),
                });
            }
        }
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected two comma-separated ids, found {line:?}"),
                });
            };
            let parse = |s: &str| {
                s.trim().parse::<usize>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("invalid node id {:?}", s.trim()),
                })
            };
            pairs.push((parse(a)?, parse(b)?));
        }
        let needed = pairs.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
        let n = match nodes {
            Some(n) if n < needed => {
                return Err(Error::Dimension(format!(
                    "node override {n} is smaller than the {needed} nodes referenced by the edge list"
                )))
            }
            Some(n) => n,
            None => needed,
        };
        Self::new(n, pairs, directed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("src,dst\n");
        for (a, b) in &self.edges {
            s.push_str(&format!("{a},{b}\n"));
        }
        s
    }

    /// Out-neighbour lists. Undirected edges appear in both directions.
    pub fn neighbors(&self) -> Vec<Vec<NodeId>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            if !self.directed {
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

pub fn load_edge_list(path: impl AsRef<Path>, directed: bool, nodes: Option<usize>) -> Result<RoadGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RoadGraph::parse_csv(&text, directed, nodes)
}

/// Capped shortest-hop distances. Entries beyond `alpha` hold the sentinel
/// `alpha + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopMatrix {
    n_nodes: usize,
    alpha: u8,
    hops: Vec<u8>,
}

impl HopMatrix {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn alpha(&self) -> usize {
        self.alpha as usize
    }

    pub fn unreachable(&self) -> u8 {
        self.alpha + 1
    }

    /// Hop count from `i` to `j`, `None` when farther than `alpha`.
    pub fn get(&self, i: NodeId, j: NodeId) -> Option<usize> {
        let h = self.hops[i * self.n_nodes + j];
        (h <= self.alpha).then_some(h as usize)
    }

    pub fn row(&self, i: NodeId) -> &[u8] {
        &self.hops[i * self.n_nodes..(i + 1) * self.n_nodes]
    }
}

/// Depth-limited breadth-first search from every node.
pub fn compute_hops(g: &RoadGraph, alpha: usize) -> Result<HopMatrix> {
    if alpha >= u8::MAX as usize {
        return Err(Error::Config(format!("alpha {alpha} exceeds the supported maximum of 254")));
    }
    let n = g.n_nodes();
    let alpha = alpha as u8;
    let sentinel = alpha + 1;
    let adj = g.neighbors();
    let mut hops = vec![sentinel; n * n];
    if n > 0 {
        hops.par_chunks_mut(n).enumerate().for_each(|(src, row)| {
            row[src] = 0;
            let mut frontier = vec![src];
            let mut next = Vec::new();
            for depth in 1..=alpha {
                for &u in &frontier {
                    for &v in &adj[u] {
                        if row[v] == sentinel {
                            row[v] = depth;
                            next.push(v);
                        }
                    }
                }
                if next.is_empty() {
                    break;
                }
                std::mem::swap(&mut frontier, &mut next);
                next.clear();
            }
        });
    }
    Ok(HopMatrix {
        n_nodes: n,
        alpha,
        hops,
    })
}

/// One spatial pair of the joint graph: target `i` reads source `j` at hop
/// distance `hop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SpatialPair {
    pub target: NodeId,
    pub source: NodeId,
    pub hop: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StEdgeSet {
    n_nodes: usize,
    alpha: usize,
    beta: usize,
    pairs: Vec<SpatialPair>,
}

impl StEdgeSet {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn beta(&self) -> usize {
        self.beta
    }

    /// Pairs sorted by `(target, source)`.
    pub fn pairs(&self) -> &[SpatialPair] {
        &self.pairs
    }

    pub fn m_spatial(&self) -> usize {
        self.pairs.len()
    }

    /// Spatial-temporal edges entering one target timestamp: `M`.
    pub fn m_total(&self) -> usize {
        self.pairs.len() * (self.beta + 1)
    }

    pub fn stats(&self) -> GraphStats {
        let mut per_target = vec![0usize; self.n_nodes];
        let mut histogram = vec![0usize; self.alpha + 1];
        for p in &self.pairs {
            per_target[p.target] += 1;
            histogram[p.hop] += 1;
        }
        GraphStats {
            n_nodes: self.n_nodes,
            alpha: self.alpha,
            beta: self.beta,
            m_spatial: self.m_spatial(),
            m_total: self.m_total(),
            q_max: per_target.into_iter().max().unwrap_or(0),
            hop_histogram: histogram,
        }
    }
}

pub fn build_st_edges(h: &HopMatrix, beta: usize) -> StEdgeSet {
    let n = h.n_nodes();
    let mut pairs = Vec::new();
    for i in 0..n {
        for (j, &hop) in h.row(i).iter().enumerate() {
            if hop <= h.alpha {
                pairs.push(SpatialPair {
                    target: i,
                    source: j,
                    hop: hop as usize,
                });
            }
        }
    }
    StEdgeSet {
        n_nodes: n,
        alpha: h.alpha(),
        beta,
        pairs,
    }
}

/// Convenience for the full graph pipeline.
pub fn st_edges_for(g: &RoadGraph, alpha: usize, beta: usize) -> Result<StEdgeSet> {
    Ok(build_st_edges(&compute_hops(g, alpha)?, beta))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub alpha: usize,
    pub beta: usize,
    pub m_spatial: usize,
    pub m_total: usize,
    /// Largest alpha-hop neighbourhood, the node itself included.
    pub q_max: usize,
    /// Pair counts by hop distance `0..=alpha`.
    pub hop_histogram: Vec<usize>,
}

pub fn graph_stats(s: &StEdgeSet) -> GraphStats {
    s.stats()
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes={}", self.n_nodes)?;
        writeln!(f, "alpha={}", self.alpha)?;
        writeln!(f, "beta={}", self.beta)?;
        writeln!(f, "m_spatial={}", self.m_spatial)?;
        writeln!(f, "m_total={}", self.m_total)?;
        writeln!(f, "q_max={}", self.q_max)?;
        let hist: Vec<String> = self
            .hop_histogram
            .iter()
            .enumerate()
            .map(|(h, c)| format!("{h}:{c}"))
            .collect();
        write!(f, "hop_histogram={}", hist.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_of(s: &StEdgeSet) -> Vec<(usize, usize, usize)> {
        s.pairs().iter().map(|p| (p.target, p.source, p.hop)).collect()
    }

    #[test]
    fn parses_simple_list() {
        let g = RoadGraph::parse_csv("src,dst\n0,1\n1,2", false, None).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn header_only_is_empty() {
        let g = RoadGraph::parse_csv("src,dst\n", false, None).unwrap();
        assert_eq!(g.n_nodes(), 0);
        let g = RoadGraph::parse_csv("src,dst\n", false, Some(4)).unwrap();
        assert_eq!(g.n_nodes(), 4);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn duplicate_rows_collapse() {
        let g = RoadGraph::parse_csv("src,dst\n0,1\n0,1\n1,0\n", false, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        let d = RoadGraph::parse_csv("src,dst\n0,1\n0,1\n1,0\n", true, None).unwrap();
        assert_eq!(d.edges(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = RoadGraph::parse_csv("src,dst\n0,1\n1;2\n", false, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = RoadGraph::parse_csv("src,dst\n0,-1\n", false, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = RoadGraph::parse_csv("a,b\n0,1\n", false, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn id_gaps_allowed() {
        let g = RoadGraph::parse_csv("src,dst\n0,5\n", false, None).unwrap();
        assert_eq!(g.n_nodes(), 6);
        let h = compute_hops(&g, 3).unwrap();
        assert_eq!(h.get(2, 2), Some(0));
        assert_eq!(h.get(2, 3), None);
    }

    #[test]
    fn path_graph_hops() {
        let h = compute_hops(&RoadGraph::path(5), 2).unwrap();
        let row: Vec<Option<usize>> = (0..5).map(|j| h.get(0, j)).collect();
        assert_eq!(row, vec![Some(0), Some(1), Some(2), None, None]);
        assert_eq!(h.row(0)[3], h.unreachable());
    }

    #[test]
    fn zero_cap_is_identity() {
        let h = compute_hops(&RoadGraph::path(4), 0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(h.get(i, j), (i == j).then_some(0));
            }
        }
    }

    #[test]
    fn directed_bfs_follows_direction() {
        let g = RoadGraph::new(3, [(0, 1), (1, 2)], true).unwrap();
        let h = compute_hops(&g, 2).unwrap();
        assert_eq!(h.get(0, 2), Some(2));
        assert_eq!(h.get(2, 0), None);
    }

    #[test]
    fn single_node_self_loop() {
        let g = RoadGraph::new(1, [], false).unwrap();
        let s = st_edges_for(&g, 0, 2).unwrap();
        assert_eq!(pairs_of(&s), vec![(0, 0, 0)]);
        assert_eq!(s.m_total(), 3);
        let st = s.stats();
        assert_eq!((st.n_nodes, st.m_total, st.q_max), (1, 3, 1));
    }

    #[test]
    fn path_three_pairs() {
        let s = st_edges_for(&RoadGraph::path(3), 1, 0).unwrap();
        assert_eq!(
            pairs_of(&s),
            vec![(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0), (1, 2, 1), (2, 1, 1), (2, 2, 0)]
        );
        assert_eq!(s.m_total(), 7);
        assert_eq!(s.stats().q_max, 3);
        assert_eq!(s.stats().hop_histogram, vec![3, 4]);
    }

    #[test]
    fn star_hub_sees_all() {
        let g = RoadGraph::new(6, (1..6).map(|l| (0, l)), false).unwrap();
        let s = st_edges_for(&g, 1, 0).unwrap();
        assert_eq!(s.stats().q_max, 6);
    }

    #[test]
    fn stats_display_is_line_oriented() {
        let s = st_edges_for(&RoadGraph::path(3), 1, 2).unwrap();
        let text = s.stats().to_string();
        assert!(text.contains("m_total=21"));
        assert!(text.ends_with("hop_histogram=0:3,1:4"));
    }

    #[test]
    fn csv_round_trip() {
        let g = RoadGraph::new(4, [(0, 1), (2, 3), (1, 2)], false).unwrap();
        let back = RoadGraph::parse_csv(&g.to_csv(), false, Some(4)).unwrap();
        assert_eq!(back, g);
    }
}

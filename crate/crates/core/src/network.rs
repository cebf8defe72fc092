//! Network instances: validation, adjacency, and the split graph used for
//! vertex-disjoint path sets.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Source,
    Server,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNode {
    pub name: String,
    pub kind: NodeKind,
    pub rate: f64,
}

/// Per-type edge mask, only meaningful for typed networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTypeMask {
    pub source: String,
    pub edges: Vec<(String, String)>,
}

/// On-disk network description before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNetwork {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub edges: Vec<(String, String)>,
    pub nodes: Vec<RawNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub types: Vec<RawTypeMask>,
}

impl RawNetwork {
    pub fn from_toml(text: &str) -> Result<Self, NetworkError> {
        toml::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("raw network serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnknownNode(String),
    DuplicateName(String),
    DuplicateEdge { tail: usize, head: usize },
    SelfLoop(usize),
    Cycle { edge: (usize, usize) },
    Degree { node: usize, kind: NodeKind, in_degree: usize, out_degree: usize },
    RateRange { node: usize, rate: f64 },
    Empty,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownNode(n) => write!(f, "edge references unknown node {n:?}"),
            Violation::DuplicateName(n) => write!(f, "node name {n:?} used twice"),
            Violation::DuplicateEdge { tail, head } => write!(f, "edge ({tail},{head}) listed twice"),
            Violation::SelfLoop(v) => write!(f, "self loop at node {v}"),
            Violation::Cycle { edge } => write!(f, "cycle through edge ({},{})", edge.0, edge.1),
            Violation::Degree { node, kind, in_degree, out_degree } => {
                write!(f, "node {node} ({kind:?}) has in-degree {in_degree}, out-degree {out_degree}")
            }
            Violation::RateRange { node, rate } => write!(f, "node {node} has rate {rate} out of range"),
            Violation::Empty => write!(f, "network has no nodes"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid network: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("network has middle servers; a bipartite instance is required")]
    NotBipartite,
    #[error("network file carries per-type masks; load it as a typed network")]
    UnexpectedTypes,
}

impl NetworkError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            NetworkError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub rate: f64,
}

/// A validated DAG queueing network. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: Option<String>,
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl NetworkSpec {
    pub fn from_toml(text: &str) -> Result<Self, NetworkError> {
        let raw = RawNetwork::from_toml(text)?;
        if !raw.types.is_empty() {
            return Err(NetworkError::UnexpectedTypes);
        }
        validate(&raw)
    }

    /// Build from nodes listed in id order and edges by id.
    pub fn build(nodes: Vec<Node>, edges: Vec<(usize, usize)>) -> Result<Self, NetworkError> {
        let raw = RawNetwork {
            name: None,
            edges: edges
                .iter()
                .map(|&(a, b)| {
                    let name = |i: usize| nodes.get(i).map(|n| n.name.clone()).unwrap_or_else(|| format!("#{i}"));
                    (name(a), name(b))
                })
                .collect(),
            nodes: nodes.into_iter().map(|n| RawNode { name: n.name, kind: n.kind, rate: n.rate }).collect(),
            types: Vec::new(),
        };
        validate(&raw)
    }

    pub fn to_raw(&self) -> RawNetwork {
        RawNetwork {
            name: self.name.clone(),
            edges: self.edges.iter().map(|&(a, b)| (self.nodes[a].name.clone(), self.nodes[b].name.clone())).collect(),
            nodes: self.nodes.iter().map(|n| RawNode { name: n.name.clone(), kind: n.kind, rate: n.rate }).collect(),
            types: Vec::new(),
        }
    }

    pub fn to_toml(&self) -> String {
        self.to_raw().to_toml()
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn instance_hash(&self) -> String {
        let mut raw = self.to_raw();
        raw.name = None;
        hash_text(&raw.to_toml())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn kind(&self, id: usize) -> NodeKind {
        self.nodes[id].kind
    }

    pub fn rate(&self, id: usize) -> f64 {
        self.nodes[id].rate
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_index(&self, tail: usize, head: usize) -> Option<usize> {
        self.edges.iter().position(|&e| e == (tail, head))
    }

    pub fn out_neighbors(&self, id: usize) -> &[usize] {
        &self.out_adj[id]
    }

    pub fn in_neighbors(&self, id: usize) -> &[usize] {
        &self.in_adj[id]
    }

    /// Topological order; ties broken by lowest id.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn ids_of(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.nodes[i].kind == kind).collect()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.ids_of(NodeKind::Source)
    }

    pub fn middle(&self) -> Vec<usize> {
        self.ids_of(NodeKind::Server)
    }

    pub fn terminals(&self) -> Vec<usize> {
        self.ids_of(NodeKind::Terminal)
    }

    /// Nodes that hold queues (sources and middle servers).
    pub fn senders(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.nodes[i].kind != NodeKind::Terminal).collect()
    }

    /// Nodes that process packets (middle servers and terminals).
    pub fn receivers(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.nodes[i].kind != NodeKind::Source).collect()
    }

    pub fn is_bipartite(&self) -> bool {
        self.nodes.iter().all(|n| n.kind != NodeKind::Server)
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Same topology with every rate replaced by `f(id, rate)`. No re-validation
    /// of ranges, so scaled copies used inside LP checks may leave (0,1].
    pub fn with_rates(&self, f: impl Fn(usize, f64) -> f64) -> NetworkSpec {
        let mut out = self.clone();
        for (i, n) in out.nodes.iter_mut().enumerate() {
            n.rate = f(i, n.rate);
        }
        out
    }

    pub fn bipartite(&self) -> Result<BipartiteView, NetworkError> {
        BipartiteView::new(self)
    }

    pub fn split(&self) -> SplitGraph {
        SplitGraph::new(self)
    }
}

pub fn hash_text(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Validate a raw description, collecting every violation found.
pub fn validate(raw: &RawNetwork) -> Result<NetworkSpec, NetworkError> {
    let mut errs = Vec::new();
    let n = raw.nodes.len();
    if n == 0 {
        return Err(NetworkError::Invalid(vec![Violation::Empty]));
    }
    let mut by_name = BTreeMap::new();
    for (i, node) in raw.nodes.iter().enumerate() {
        if by_name.insert(node.name.clone(), i).is_some() {
            errs.push(Violation::DuplicateName(node.name.clone()));
        }
    }
    let mut edges = Vec::with_capacity(raw.edges.len());
    for (a, b) in &raw.edges {
        match (by_name.get(a), by_name.get(b)) {
            (Some(&x), Some(&y)) => {
                if x == y {
                    errs.push(Violation::SelfLoop(x));
                } else if edges.contains(&(x, y)) {
                    errs.push(Violation::DuplicateEdge { tail: x, head: y });
                } else {
                    edges.push((x, y));
                }
            }
            (None, _) => errs.push(Violation::UnknownNode(a.clone())),
            (_, None) => errs.push(Violation::UnknownNode(b.clone())),
        }
    }

    let mut out_adj = vec![Vec::new(); n];
    let mut in_adj = vec![Vec::new(); n];
    for &(a, b) in &edges {
        out_adj[a].push(b);
        in_adj[b].push(a);
    }
    for v in out_adj.iter_mut().chain(in_adj.iter_mut()) {
        v.sort_unstable();
    }

    for (i, node) in raw.nodes.iter().enumerate() {
        let ok_rate = match node.kind {
            NodeKind::Source => node.rate > 0.0 && node.rate < 1.0,
            _ => node.rate > 0.0 && node.rate <= 1.0,
        };
        if !ok_rate || !node.rate.is_finite() {
            errs.push(Violation::RateRange { node: i, rate: node.rate });
        }
        let (din, dout) = (in_adj[i].len(), out_adj[i].len());
        let ok_deg = match node.kind {
            NodeKind::Source => din == 0 && dout >= 1,
            NodeKind::Server => din >= 1 && dout >= 1,
            NodeKind::Terminal => din >= 1 && dout == 0,
        };
        if !ok_deg {
            errs.push(Violation::Degree { node: i, kind: node.kind, in_degree: din, out_degree: dout });
        }
    }

    // Kahn with a min-heap so the order is stable by id.
    let mut indeg: Vec<usize> = in_adj.iter().map(Vec::len).collect();
    let mut heap: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(Reverse(v)) = heap.pop() {
        topo.push(v);
        for &w in &out_adj[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                heap.push(Reverse(w));
            }
        }
    }
    if topo.len() < n {
        let stuck = edges.iter().find(|&&(a, b)| indeg[a] > 0 && indeg[b] > 0).copied().unwrap_or((0, 0));
        errs.push(Violation::Cycle { edge: stuck });
    }

    if !errs.is_empty() {
        return Err(NetworkError::Invalid(errs));
    }
    Ok(NetworkSpec {
        name: raw.name.clone(),
        nodes: raw.nodes.iter().map(|r| Node { name: r.name.clone(), kind: r.kind, rate: r.rate }).collect(),
        edges,
        out_adj,
        in_adj,
        topo,
    })
}

/// Queues (sources) against servers (terminals) of a network with no middle layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteView {
    pub queues: Vec<usize>,
    pub servers: Vec<usize>,
    pub adj: Vec<Vec<bool>>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

impl BipartiteView {
    pub fn new(net: &NetworkSpec) -> Result<Self, NetworkError> {
        if !net.is_bipartite() {
            return Err(NetworkError::NotBipartite);
        }
        let queues = net.sources();
        let servers = net.terminals();
        let mut col = vec![usize::MAX; net.len()];
        for (j, &s) in servers.iter().enumerate() {
            col[s] = j;
        }
        let adj = queues
            .iter()
            .map(|&q| {
                let mut row = vec![false; servers.len()];
                for &s in net.out_neighbors(q) {
                    row[col[s]] = true;
                }
                row
            })
            .collect();
        Ok(BipartiteView {
            lambda: queues.iter().map(|&q| net.rate(q)).collect(),
            mu: servers.iter().map(|&s| net.rate(s)).collect(),
            queues,
            servers,
            adj,
        })
    }

    pub fn n(&self) -> usize {
        self.queues.len()
    }

    pub fn m(&self) -> usize {
        self.servers.len()
    }

    pub fn is_complete(&self) -> bool {
        self.adj.iter().all(|r| r.iter().all(|&b| b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitEdge {
    pub left: usize,
    pub right: usize,
    pub tail: usize,
    pub head: usize,
}

/// Left side: out-copies of sources and middle servers. Right side: in-copies
/// of middle servers and terminals. Matchings here are exactly the
/// vertex-disjoint path sets of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGraph {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub edges: Vec<SplitEdge>,
    left_pos: Vec<Option<usize>>,
    right_pos: Vec<Option<usize>>,
}

impl SplitGraph {
    pub fn new(net: &NetworkSpec) -> Self {
        let left = net.senders();
        let right = net.receivers();
        let mut left_pos = vec![None; net.len()];
        let mut right_pos = vec![None; net.len()];
        for (k, &v) in left.iter().enumerate() {
            left_pos[v] = Some(k);
        }
        for (k, &v) in right.iter().enumerate() {
            right_pos[v] = Some(k);
        }
        let edges = net
            .edges()
            .iter()
            .map(|&(a, b)| SplitEdge {
                left: left_pos[a].expect("tail is a sender"),
                right: right_pos[b].expect("head is a receiver"),
                tail: a,
                head: b,
            })
            .collect();
        SplitGraph { left, right, edges, left_pos, right_pos }
    }

    pub fn left_of(&self, node: usize) -> Option<usize> {
        self.left_pos.get(node).copied().flatten()
    }

    pub fn right_of(&self, node: usize) -> Option<usize> {
        self.right_pos.get(node).copied().flatten()
    }

    /// Read a matching of (left, right) positions back as network edges.
    pub fn decode(&self, matching: &[(usize, usize)]) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = matching.iter().map(|&(l, r)| (self.left[l], self.right[r])).collect();
        out.sort_unstable();
        out
    }

    /// Dense left × right matrix of `value(tail, head)` over split edges; `None` elsewhere.
    pub fn weight_matrix(&self, mut value: impl FnMut(usize, usize) -> f64) -> Vec<Vec<Option<f64>>> {
        let mut w = vec![vec![None; self.right.len()]; self.left.len()];
        for e in &self.edges {
            w[e.left][e.right] = Some(value(e.tail, e.head));
        }
        w
    }
}

/// True when no two edges share a tail and no two share a head.
pub fn is_vertex_disjoint(edges: &[(usize, usize)]) -> bool {
    let mut tails: Vec<_> = edges.iter().map(|e| e.0).collect();
    let mut heads: Vec<_> = edges.iter().map(|e| e.1).collect();
    tails.sort_unstable();
    heads.sort_unstable();
    tails.windows(2).all(|w| w[0] != w[1]) && heads.windows(2).all(|w| w[0] != w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, kind: NodeKind, rate: f64) -> Node {
        Node { name: name.into(), kind, rate }
    }

    #[test]
    fn slow_fast_pair_shape_is_valid_bipartite() {
        let net = NetworkSpec::build(
            vec![
                node("q1", NodeKind::Source, 0.4),
                node("q2", NodeKind::Source, 0.4),
                node("s1", NodeKind::Terminal, 0.41),
                node("s2", NodeKind::Terminal, 0.99),
            ],
            vec![(0, 2), (0, 3), (1, 2), (1, 3)],
        )
        .unwrap();
        let b = net.bipartite().unwrap();
        assert!(b.is_complete());
        assert_eq!(b.lambda, vec![0.4, 0.4]);
        assert_eq!(b.mu, vec![0.41, 0.99]);
    }

    #[test]
    fn isolated_source_is_degree_error() {
        let err = NetworkSpec::build(vec![node("a", NodeKind::Source, 0.5)], vec![]).unwrap_err();
        assert!(matches!(err.violations()[0], Violation::Degree { node: 0, .. }));
    }

    #[test]
    fn two_cycle_is_rejected() {
        let err = NetworkSpec::build(
            vec![node("a", NodeKind::Server, 0.5), node("b", NodeKind::Server, 0.5)],
            vec![(0, 1), (1, 0)],
        )
        .unwrap_err();
        assert!(err.violations().iter().any(|v| matches!(v, Violation::Cycle { .. })));
    }

    #[test]
    fn rates_are_range_checked() {
        let err = NetworkSpec::build(
            vec![node("a", NodeKind::Source, 1.0), node("b", NodeKind::Terminal, 1.2)],
            vec![(0, 1)],
        )
        .unwrap_err();
        let bad: Vec<_> = err
            .violations()
            .iter()
            .filter_map(|v| match v {
                Violation::RateRange { node, .. } => Some(*node),
                _ => None,
            })
            .collect();
        assert_eq!(bad, vec![0, 1]);
        // a deterministic server is fine
        NetworkSpec::build(vec![node("a", NodeKind::Source, 0.5), node("b", NodeKind::Terminal, 1.0)], vec![(0, 1)])
            .unwrap();
    }

    #[test]
    fn chain_split_and_decode() {
        let net = NetworkSpec::build(
            vec![
                node("1", NodeKind::Source, 0.3),
                node("2", NodeKind::Server, 0.5),
                node("3", NodeKind::Terminal, 0.8),
            ],
            vec![(0, 1), (1, 2)],
        )
        .unwrap();
        let sg = net.split();
        assert_eq!(sg.left, vec![0, 1]);
        assert_eq!(sg.right, vec![1, 2]);
        assert_eq!(sg.edges.len(), 2);
        assert_eq!(sg.decode(&[(0, 0), (1, 1)]), vec![(0, 1), (1, 2)]);
        assert!(net.bipartite().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "edges = []\nbogus = 1\n[[nodes]]\nname = \"a\"\nkind = \"source\"\nrate = 0.5\n";
        assert!(matches!(NetworkSpec::from_toml(text), Err(NetworkError::Parse(_))));
    }

    #[test]
    fn toml_round_trip_is_idempotent() {
        let net = NetworkSpec::build(
            vec![
                node("x", NodeKind::Source, 0.2),
                node("y", NodeKind::Server, 0.7),
                node("z", NodeKind::Terminal, 1.0),
            ],
            vec![(0, 1), (1, 2)],
        )
        .unwrap();
        let again = NetworkSpec::from_toml(&net.to_toml()).unwrap();
        assert_eq!(again, net);
        assert_eq!(again.instance_hash(), net.instance_hash());
    }
}

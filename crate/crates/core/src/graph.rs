//! Undirected unweighted graphs, their combinatorial Laplacians and the
//! rank-one edge perturbations `φ a aᵀ` that insert or delete single edges.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An unordered node pair stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", try_from = "[usize; 2]")]
pub struct Edge {
    lo: usize,
    hi: usize,
}

impl Edge {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidEdge(a, b, "self-loop"));
        }
        Ok(Edge {
            lo: a.min(b),
            hi: a.max(b),
        })
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

impl From<Edge> for [usize; 2] {
    fn from(e: Edge) -> Self {
        [e.lo, e.hi]
    }
}

impl TryFrom<[usize; 2]> for Edge {
    type Error = Error;

    fn try_from(v: [usize; 2]) -> Result<Self> {
        Edge::new(v[0], v[1])
    }
}

/// Whether a perturbed edge is inserted (`φ = +1`) or deleted (`φ = −1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Insert,
    Delete,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Insert => 1.0,
            Sign::Delete => -1.0,
        }
    }
}

/// Undirected unweighted graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct Graph {
    n: usize,
    edges: BTreeSet<Edge>,
    community: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    community: Option<Vec<usize>>,
}

impl TryFrom<GraphFile> for Graph {
    type Error = Error;

    fn try_from(raw: GraphFile) -> Result<Self> {
        let edges = raw
            .edges
            .into_iter()
            .map(|[s, t]| Edge::new(s, t))
            .collect::<Result<Vec<_>>>()?;
        Graph::with_communities(raw.n, edges, raw.community)
    }
}

impl From<Graph> for GraphFile {
    fn from(g: Graph) -> Self {
        GraphFile {
            n: g.n,
            edges: g.edges.iter().map(|&e| e.into()).collect(),
            community: g.community,
        }
    }
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        Self::with_communities(n, edges, None)
    }

    pub fn with_communities(
        n: usize,
        edges: impl IntoIterator<Item = Edge>,
        community: Option<Vec<usize>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("node count must be at least 1".into()));
        }
        let mut set = BTreeSet::new();
        for e in edges {
            if e.hi >= n {
                return Err(Error::InvalidEdge(e.lo, e.hi, "endpoint out of range"));
            }
            if !set.insert(e) {
                return Err(Error::InvalidEdge(e.lo, e.hi, "duplicate edge"));
            }
        }
        if let Some(c) = &community {
            if c.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "community labels have length {} for {} nodes",
                    c.len(),
                    n
                )));
            }
        }
        Ok(Graph {
            n,
            edges: set,
            community,
        })
    }

    /// Convenience constructor from raw pairs, mostly for tests and fixtures.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let edges = pairs
            .iter()
            .map(|&(s, t)| Edge::new(s, t))
            .collect::<Result<Vec<_>>>()?;
        Graph::new(n, edges)
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| Edge { lo: i, hi: j }));
        Graph::new(n, edges).expect("complete graph is valid")
    }

    pub fn path(n: usize) -> Self {
        let edges = (1..n).map(|i| Edge { lo: i - 1, hi: i });
        Graph::new(n, edges).expect("path graph is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl ExactSizeIterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, e: Edge) -> bool {
        self.edges.contains(&e)
    }

    pub fn community(&self) -> Option<&[usize]> {
        self.community.as_deref()
    }

    /// True when both endpoints carry the same community label.
    pub fn is_intra(&self, e: Edge) -> Option<bool> {
        self.community.as_ref().map(|c| c[e.lo] == c[e.hi])
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for e in &self.edges {
            d[e.lo] += 1;
            d[e.hi] += 1;
        }
        d
    }

    /// Node pairs that are not edges, in lexicographic order.
    pub fn non_edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let e = Edge { lo: i, hi: j };
                if !self.edges.contains(&e) {
                    out.push(e);
                }
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Set of perturbed edges `ℰ_p = ℰ_a ∪ ℰ_d`, each with its sign.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgePerturbation {
    items: Vec<(Edge, Sign)>,
}

impl EdgePerturbation {
    pub fn new(items: Vec<(Edge, Sign)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (e, _) in &items {
            if !seen.insert(*e) {
                return Err(Error::InconsistentPerturbation(format!(
                    "edge {e} listed twice"
                )));
            }
        }
        Ok(EdgePerturbation { items })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn deletions(edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        Self::new(edges.into_iter().map(|e| (e, Sign::Delete)).collect())
    }

    pub fn items(&self) -> &[(Edge, Sign)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn insertion_count(&self) -> usize {
        self.items.iter().filter(|(_, s)| *s == Sign::Insert).count()
    }

    /// Checks the sign of every item against the base graph.
    pub fn validate_against(&self, g: &Graph) -> Result<()> {
        for &(e, sign) in &self.items {
            if e.hi >= g.n {
                return Err(Error::InvalidEdge(e.lo, e.hi, "endpoint out of range"));
            }
            match (sign, g.has_edge(e)) {
                (Sign::Delete, false) => {
                    return Err(Error::InconsistentPerturbation(format!(
                        "cannot delete absent edge {e}"
                    )))
                }
                (Sign::Insert, true) => {
                    return Err(Error::InconsistentPerturbation(format!(
                        "cannot insert existing edge {e}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Edge-difference vector `a_m`: +1 at the source, −1 at the target.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVector(DVector<f64>);

impl EdgeVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

pub fn edge_vector(source: usize, target: usize, n: usize) -> Result<EdgeVector> {
    if source == target {
        return Err(Error::InvalidEdge(source, target, "self-loop"));
    }
    if source >= n || target >= n {
        return Err(Error::InvalidEdge(source, target, "endpoint out of range"));
    }
    let mut v = DVector::zeros(n);
    v[source] = 1.0;
    v[target] = -1.0;
    Ok(EdgeVector(v))
}

/// Combinatorial Laplacian `L = D − A`.
pub fn laplacian(g: &Graph) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(g.n, g.n);
    for e in &g.edges {
        add_edge_laplacian(&mut l, *e, 1.0);
    }
    l
}

/// `ΔL = Σ φ_m a_m a_mᵀ`.
pub fn delta_laplacian(p: &EdgePerturbation, n: usize) -> DMatrix<f64> {
    let mut dl = DMatrix::zeros(n, n);
    for &(e, sign) in &p.items {
        add_edge_laplacian(&mut dl, e, sign.value());
    }
    dl
}

/// Adds `phi · a aᵀ` for edge `e` in place.
pub(crate) fn add_edge_laplacian(m: &mut DMatrix<f64>, e: Edge, phi: f64) {
    let (s, t) = e.endpoints();
    m[(s, s)] += phi;
    m[(t, t)] += phi;
    m[(s, t)] -= phi;
    m[(t, s)] -= phi;
}

pub fn apply_perturbation(g: &Graph, p: &EdgePerturbation) -> Result<Graph> {
    p.validate_against(g)?;
    let mut edges = g.edges.clone();
    for &(e, sign) in &p.items {
        match sign {
            Sign::Insert => edges.insert(e),
            Sign::Delete => edges.remove(&e),
        };
    }
    Ok(Graph {
        n: g.n,
        edges,
        community: g.community.clone(),
    })
}

pub fn is_connected(g: &Graph) -> bool {
    let mut adj = vec![Vec::new(); g.n];
    for e in &g.edges {
        adj[e.lo].push(e.hi);
        adj[e.hi].push(e.lo);
    }
    let mut seen = vec![false; g.n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == g.n
}

/// Connectivity of `g` after applying `p`, without building a new graph.
pub fn is_connected_after(g: &Graph, p: &EdgePerturbation) -> bool {
    let removed: BTreeSet<Edge> = p
        .items
        .iter()
        .filter(|(_, s)| *s == Sign::Delete)
        .map(|(e, _)| *e)
        .collect();
    let mut adj = vec![Vec::new(); g.n];
    let kept = g.edges.iter().filter(|e| !removed.contains(e));
    let added = p
        .items
        .iter()
        .filter(|(_, s)| *s == Sign::Insert)
        .map(|(e, _)| e);
    for e in kept.chain(added) {
        adj[e.lo].push(e.hi);
        adj[e.hi].push(e.lo);
    }
    let mut seen = vec![false; g.n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == g.n
}

/// Parses a comma-separated list such as `+0-2,-0-1`: a leading `+`
/// inserts the edge, `-` deletes it.
impl FromStr for EdgePerturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut items = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let bad = || Error::InvalidArgument(format!("cannot parse edge change `{part}`; expected +a-b or -a-b"));
            let (sign, rest) = match part.as_bytes()[0] {
                b'+' => (Sign::Insert, &part[1..]),
                b'-' => (Sign::Delete, &part[1..]),
                _ => return Err(bad()),
            };
            let (a, b) = rest.split_once('-').ok_or_else(bad)?;
            let a = a.trim().parse().map_err(|_| bad())?;
            let b = b.trim().parse().map_err(|_| bad())?;
            items.push((Edge::new(a, b)?, sign));
        }
        EdgePerturbation::new(items)
    }
}

//! Undirected simple graphs with stable edge indexing, random generators,
//! edge-list ingestion and k-hop locality queries.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Immutable undirected simple graph. Edges carry a canonical index
/// `0..m-1` that is stable for the lifetime of the value.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    /// Edge l is stored as (u, v) with u < v.
    edges: Vec<(usize, usize)>,
    /// Per node: (neighbor, edge index), sorted by neighbor id.
    adj: Vec<Vec<(usize, usize)>>,
    /// Original labels for graphs loaded from text; generated graphs have none.
    labels: Option<Vec<String>>,
}

impl Graph {
    /// Build from an edge list over nodes `0..n`. Rejects self-loops,
    /// duplicates and out-of-range endpoints.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::build(n, edges, None)
    }

    fn build(n: usize, raw: &[(usize, usize)], labels: Option<Vec<String>>) -> Result<Self> {
        let mut edges = Vec::with_capacity(raw.len());
        let mut seen = HashSet::with_capacity(raw.len());
        for &(a, b) in raw {
            if a >= n || b >= n {
                return Err(Error::InvalidNode(a.max(b)));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate edge ({}, {})",
                    e.0, e.1
                )));
            }
            edges.push(e);
        }
        let mut adj = vec![Vec::new(); n];
        for (l, &(u, v)) in edges.iter().enumerate() {
            adj[u].push((v, l));
            adj[v].push((u, l));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Graph {
            n,
            edges,
            adj,
            labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Endpoints of edge l as (u, v) with u < v.
    pub fn edge(&self, l: usize) -> Result<(usize, usize)> {
        self.edges.get(l).copied().ok_or(Error::InvalidEdge(l))
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of i with the incident edge index, ascending by neighbor.
    pub fn incident(&self, i: usize) -> &[(usize, usize)] {
        &self.adj[i]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[i].iter().map(|&(j, _)| j)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Edge index joining i and j, if present (order-insensitive).
    pub fn edge_between(&self, i: usize, j: usize) -> Option<usize> {
        self.adj[i]
            .binary_search_by_key(&j, |&(nb, _)| nb)
            .ok()
            .map(|pos| self.adj[i][pos].1)
    }

    /// Label of node i; loaded graphs keep their file tokens, generated
    /// graphs fall back to the index.
    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => i.to_string(),
        }
    }

    /// BFS hop distances from `start`; `None` marks unreachable nodes.
    pub fn bfs_distances(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        dist[start] = Some(0);
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &(v, _) in &self.adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        self.bfs_distances(0).iter().all(Option::is_some)
    }

    /// Longest shortest path; requires a connected graph.
    pub fn diameter(&self) -> Result<usize> {
        if !self.is_connected() {
            return Err(Error::Disconnected);
        }
        let mut diam = 0;
        for s in 0..self.n {
            for d in self.bfs_distances(s).iter().flatten() {
                diam = diam.max(*d);
            }
        }
        Ok(diam)
    }

    /// Adjacency matrix A.
    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(u, v) in &self.edges {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        a
    }

    /// Laplacian L = D - A.
    pub fn laplacian(&self) -> Array2<f64> {
        let mut l = Array2::zeros((self.n, self.n));
        for &(u, v) in &self.edges {
            l[[u, v]] = -1.0;
            l[[v, u]] = -1.0;
            l[[u, u]] += 1.0;
            l[[v, v]] += 1.0;
        }
        l
    }

    /// Incidence matrix with +1 at the smaller-index endpoint of each edge
    /// and -1 at the larger, so that L = incidence * incidence^T.
    pub fn incidence(&self) -> Array2<f64> {
        let mut inc = Array2::zeros((self.n, self.edges.len()));
        for (l, &(u, v)) in self.edges.iter().enumerate() {
            inc[[u, l]] = 1.0;
            inc[[v, l]] = -1.0;
        }
        inc
    }
}

/// Node- and edge-induced neighborhood of a parent graph, kept for the
/// locality arguments of the distributed gradient.
#[derive(Debug, Clone)]
pub struct Subgraph {
    parent: Arc<Graph>,
    /// Retained node ids, ascending.
    nodes: Vec<usize>,
    /// Parent edge indices with both endpoints retained.
    edges: Vec<usize>,
    center: usize,
    radius: usize,
}

impl Subgraph {
    pub fn parent(&self) -> &Arc<Graph> {
        &self.parent
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edge_ids(&self) -> &[usize] {
        &self.edges
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn contains_node(&self, v: usize) -> bool {
        self.nodes.binary_search(&v).is_ok()
    }

    fn induced(parent: Arc<Graph>, mut nodes: Vec<usize>, center: usize, radius: usize) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        let set: HashSet<usize> = nodes.iter().copied().collect();
        let edges = parent
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, (u, v))| set.contains(u) && set.contains(v))
            .map(|(l, _)| l)
            .collect();
        Subgraph {
            parent,
            nodes,
            edges,
            center,
            radius,
        }
    }
}

/// All nodes within `k` hops of `center`, plus every parent edge among them.
pub fn k_hop_subgraph(g: &Arc<Graph>, center: usize, k: usize) -> Result<Subgraph> {
    if center >= g.node_count() {
        return Err(Error::InvalidNode(center));
    }
    let dist = g.bfs_distances(center);
    let nodes = (0..g.node_count())
        .filter(|&v| matches!(dist[v], Some(d) if d <= k))
        .collect();
    Ok(Subgraph::induced(g.clone(), nodes, center, k))
}

/// Nodes within `r` hops of either endpoint of edge `l`, plus the edges
/// among them. This is the tight neighborhood needed by the local gradient.
pub fn edge_neighborhood(g: &Arc<Graph>, l: usize, r: usize) -> Result<Subgraph> {
    let (u, v) = g.edge(l)?;
    let du = g.bfs_distances(u);
    let dv = g.bfs_distances(v);
    let nodes = (0..g.node_count())
        .filter(|&x| {
            matches!(du[x], Some(d) if d <= r) || matches!(dv[x], Some(d) if d <= r)
        })
        .collect();
    Ok(Subgraph::induced(g.clone(), nodes, u, r))
}

/// Erdos-Renyi G(n, pr): each of the n(n-1)/2 pairs is an edge with
/// probability `pr`, independently. Deterministic for a fixed seed. The
/// output may be disconnected; callers decide whether to resample.
pub fn generate_er(n: usize, pr: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&pr) {
        return Err(Error::InvalidArgument(format!(
            "edge probability {pr} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < pr {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges)
}

/// Points drawn i.i.d. uniform on the unit square, in node order.
pub fn sample_unit_square(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect()
}

/// Random geometric graph from explicit points: edge iff the Euclidean
/// distance is at most `radius`.
pub fn rgg_from_points(points: &[(f64, f64)], radius: f64) -> Result<Graph> {
    let n = points.len();
    let r2 = radius * radius;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = points[i].0 - points[j].0;
            let dy = points[i].1 - points[j].1;
            if dx * dx + dy * dy <= r2 {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges)
}

/// Random geometric graph on the unit square with connectivity radius
/// `radius`. Deterministic for a fixed seed; may be disconnected.
pub fn generate_rgg(n: usize, radius: f64, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if radius <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "connectivity radius must be positive, got {radius}"
        )));
    }
    rgg_from_points(&sample_unit_square(n, seed), radius)
}

/// Parse a whitespace-separated edge list. Lines starting with `#` are
/// comments, blank lines are skipped, labels are arbitrary tokens mapped to
/// dense indices in first-appearance order. Reversed and repeated edges
/// collapse to one.
pub fn load_edge_list(text: &str) -> Result<Graph> {
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();

    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let (a, b) = match (toks.next(), toks.next()) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::EdgeListParse {
                    line: lineno + 1,
                    reason: "expected two node labels".into(),
                })
            }
        };
        if a == b {
            return Err(Error::EdgeListParse {
                line: lineno + 1,
                reason: format!("self-loop on '{a}'"),
            });
        }
        let mut id_of = |tok: &str| -> usize {
            if let Some(&id) = index.get(tok) {
                id
            } else {
                let id = labels.len();
                labels.push(tok.to_string());
                index.insert(tok.to_string(), id);
                id
            }
        };
        let (u, v) = (id_of(a), id_of(b));
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            edges.push(key);
        }
    }
    Graph::build(labels.len(), &edges, Some(labels))
}

/// Serialize a graph back to the edge-list text format.
pub fn to_edge_list(g: &Graph) -> String {
    let mut out = String::new();
    for &(u, v) in g.edges() {
        out.push_str(&g.label(u));
        out.push(' ');
        out.push_str(&g.label(v));
        out.push('\n');
    }
    out
}

/// Deterministic seed derivation for auxiliary draws (e.g. connectivity
/// resampling), splitmix64 over the pair.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Resample a generator until the output is connected, deriving a fresh
/// seed per attempt.
pub fn generate_connected<F>(mut gen: F, seed: u64, max_attempts: usize) -> Result<Graph>
where
    F: FnMut(u64) -> Result<Graph>,
{
    for attempt in 0..max_attempts {
        let g = gen(derive_seed(seed, attempt as u64))?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Disconnected)
}

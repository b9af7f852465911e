//! Per-concept similarity graphs and cognate clustering.
//!
//! Distances below a threshold become edges weighted by similarity, and
//! clusters are the modules found by minimizing the two-level map
//! equation (greedy single-node moves plus module aggregation, seeded
//! for determinism). A connected-components clusterer doubles as the
//! naive baseline.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Word, Wordlist};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("node {0} out of range")]
    NodeOutOfRange(usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge between {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("edge weight {0} not strictly positive")]
    BadWeight(f64),
    #[error("partition covers {got} nodes, graph has {want}")]
    PartitionMismatch { got: usize, want: usize },
}

/// Undirected weighted graph over the words of one concept. Nodes are
/// dense indices into the caller's word list for that concept.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    concept: String,
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl SimilarityGraph {
    pub fn new(concept: &str, n: usize) -> SimilarityGraph {
        SimilarityGraph {
            concept: concept.to_string(),
            n,
            edges: Vec::new(),
        }
    }

    /// Insert an undirected edge; at most one per node pair, no
    /// self-loops, strictly positive weight.
    pub fn add_edge(&mut self, u: usize, v: usize, w: f64) -> Result<(), ClusterError> {
        if u >= self.n {
            return Err(ClusterError::NodeOutOfRange(u));
        }
        if v >= self.n {
            return Err(ClusterError::NodeOutOfRange(v));
        }
        if u == v {
            return Err(ClusterError::SelfLoop(u));
        }
        if w <= 0.0 || w.is_nan() {
            return Err(ClusterError::BadWeight(w));
        }
        let (a, b) = (u.min(v), u.max(v));
        if self.edges.iter().any(|&(x, y, _)| (x, y) == (a, b)) {
            return Err(ClusterError::DuplicateEdge(a, b));
        }
        self.edges.push((a, b, w));
        Ok(())
    }

    pub fn concept(&self) -> &str {
        &self.concept
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }
}

/// Dense assignment of nodes to clusters; ids renumbered 0.. in order of
/// first appearance, so structurally equal clusterings compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    pub fn new(raw: Vec<usize>) -> Partition {
        let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
        let mut next = 0;
        let assignment = raw
            .into_iter()
            .map(|c| {
                *relabel.entry(c).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                })
            })
            .collect();
        Partition {
            assignment,
            n_clusters: next,
        }
    }

    pub fn singletons(n: usize) -> Partition {
        Partition {
            assignment: (0..n).collect(),
            n_clusters: n,
        }
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (node, &c) in self.assignment.iter().enumerate() {
            out[c].push(node);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEquationValue {
    pub codelength: f64,
    pub module_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterMethod {
    Infomap,
    Components,
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterMethod::Infomap => "infomap",
            ClusterMethod::Components => "components",
        })
    }
}

/// Keep an edge exactly when the distance is strictly below the
/// threshold; its weight is the similarity `1 - distance`. At the
/// default threshold 0.5 and a sigmoid-of-score distance this prunes
/// precisely the non-positive-score pairs.
pub fn build_graph<E>(
    concept: &str,
    words: &[&Word],
    mut dist: impl FnMut(&Word, &Word) -> Result<f64, E>,
    threshold: f64,
) -> Result<SimilarityGraph, E> {
    let mut g = SimilarityGraph::new(concept, words.len());
    for u in 0..words.len() {
        for v in u + 1..words.len() {
            let d = dist(words[u], words[v])?;
            if d < threshold {
                g.add_edge(u, v, 1.0 - d)
                    .expect("loop yields unique in-range pairs");
            }
        }
    }
    Ok(g)
}

fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Internal flow graph the optimizer works on. Aggregation introduces
/// self-mass (intra-module weight folded into a super-node), which fuels
/// node visit rates but can never count toward module exits.
struct Flow {
    strength: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
    total: f64,
}

impl Flow {
    fn from_graph(g: &SimilarityGraph) -> Flow {
        let mut strength = vec![0.0; g.n];
        let mut total = 0.0;
        for &(u, v, w) in &g.edges {
            strength[u] += w;
            strength[v] += w;
            total += w;
        }
        Flow {
            strength,
            edges: g.edges.clone(),
            total,
        }
    }

    fn n(&self) -> usize {
        self.strength.len()
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n()];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        adj
    }
}

/// Two-level map equation terms for an assignment over a flow graph:
/// `L = plogp(q) - 2 sum plogp(q_i) + sum plogp(q_i + p_i) - sum plogp(p_a)`
/// with all rates normalized by twice the total weight, in bits.
fn flow_codelength(flow: &Flow, assignment: &[usize], n_modules: usize) -> f64 {
    if flow.total <= 0.0 {
        return 0.0;
    }
    let two_w = 2.0 * flow.total;
    let mut exit = vec![0.0; n_modules];
    let mut inside = vec![0.0; n_modules];
    for (node, &m) in assignment.iter().enumerate() {
        inside[m] += flow.strength[node] / two_w;
    }
    for &(u, v, w) in &flow.edges {
        if assignment[u] != assignment[v] {
            exit[assignment[u]] += w / two_w;
            exit[assignment[v]] += w / two_w;
        }
    }
    let q: f64 = exit.iter().sum();
    let mut l = plogp(q);
    for m in 0..n_modules {
        l -= 2.0 * plogp(exit[m]);
        l += plogp(exit[m] + inside[m]);
    }
    for node in 0..flow.n() {
        l -= plogp(flow.strength[node] / two_w);
    }
    l
}

/// Codelength of a partition of the graph, in bits. A graph with no
/// edges carries no flow and codes in zero bits by convention.
pub fn map_equation(
    g: &SimilarityGraph,
    part: &Partition,
) -> Result<MapEquationValue, ClusterError> {
    if g.n == 0 {
        return Err(ClusterError::EmptyGraph);
    }
    if part.len() != g.n {
        return Err(ClusterError::PartitionMismatch {
            got: part.len(),
            want: g.n,
        });
    }
    let flow = Flow::from_graph(g);
    Ok(MapEquationValue {
        codelength: flow_codelength(&flow, &part.assignment, part.n_clusters),
        module_count: part.n_clusters,
    })
}

/// Moves below this gain count as noise, not improvement.
const MIN_GAIN: f64 = 1e-12;

/// One optimization level: sweep seeded-shuffled nodes, moving each to
/// the neighboring module that shrinks the codelength most (ties to the
/// lowest module id), until a full sweep moves nothing.
fn optimize_level(flow: &Flow, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = flow.n();
    let mut module: Vec<usize> = (0..n).collect();
    if flow.total <= 0.0 {
        return (module, false);
    }
    let two_w = 2.0 * flow.total;
    let adj = flow.adjacency();
    let p: Vec<f64> = flow.strength.iter().map(|s| s / two_w).collect();

    let mut exit = vec![0.0; n];
    let mut inside = p.clone();
    for (u, nbrs) in adj.iter().enumerate() {
        exit[u] = nbrs.iter().map(|&(_, w)| w / two_w).sum();
    }
    let mut sum_exit: f64 = exit.iter().sum();

    let mut order: Vec<usize> = (0..n).collect();
    let mut moved_any = false;
    loop {
        order.shuffle(rng);
        let mut moved = false;
        for &u in &order {
            let a = module[u];
            // Edge flow from u into each neighboring module.
            let mut to_mod: BTreeMap<usize, f64> = BTreeMap::new();
            let mut d_u = 0.0;
            for &(v, w) in &adj[u] {
                let f = w / two_w;
                d_u += f;
                *to_mod.entry(module[v]).or_insert(0.0) += f;
            }
            let k_a = to_mod.get(&a).copied().unwrap_or(0.0);
            let mut best: Option<(f64, usize)> = None;
            for (&b, &k_b) in &to_mod {
                if b == a {
                    continue;
                }
                let exit_a = exit[a] - d_u + 2.0 * k_a;
                let exit_b = exit[b] + d_u - 2.0 * k_b;
                let delta = plogp(sum_exit + (exit_a + exit_b - exit[a] - exit[b]))
                    - plogp(sum_exit)
                    - 2.0 * (plogp(exit_a) + plogp(exit_b) - plogp(exit[a]) - plogp(exit[b]))
                    + plogp(exit_a + inside[a] - p[u])
                    + plogp(exit_b + inside[b] + p[u])
                    - plogp(exit[a] + inside[a])
                    - plogp(exit[b] + inside[b]);
                let better = match best {
                    None => delta < -MIN_GAIN,
                    Some((bd, bm)) => delta < bd - MIN_GAIN || (delta < bd + MIN_GAIN && b < bm),
                };
                if better {
                    best = Some((delta, b));
                }
            }
            if let Some((_, b)) = best {
                let k_b = to_mod[&b];
                sum_exit +=
                    (exit[a] - d_u + 2.0 * k_a) + (exit[b] + d_u - 2.0 * k_b) - exit[a] - exit[b];
                exit[a] += 2.0 * k_a - d_u;
                exit[b] += d_u - 2.0 * k_b;
                inside[a] -= p[u];
                inside[b] += p[u];
                module[u] = b;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    (module, moved_any)
}

/// Renumber modules densely by first appearance and build the aggregated
/// flow graph whose nodes are the modules.
fn aggregate(flow: &Flow, module: &[usize]) -> (Vec<usize>, Flow) {
    let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
    let mut dense = Vec::with_capacity(module.len());
    for &m in module {
        let next = relabel.len();
        dense.push(*relabel.entry(m).or_insert(next));
    }
    let k = relabel.len();
    let mut strength = vec![0.0; k];
    for (node, &m) in dense.iter().enumerate() {
        strength[m] += flow.strength[node];
    }
    let mut cross: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(u, v, w) in &flow.edges {
        let (a, b) = (dense[u], dense[v]);
        if a != b {
            *cross.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
    }
    let edges = cross.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    (
        dense,
        Flow {
            strength,
            edges,
            total: flow.total,
        },
    )
}

/// Greedily minimize the map equation: sweep single-node moves, collapse
/// the modules into super-nodes, and repeat on the coarser graph until a
/// level finds nothing to move. Isolated nodes stay singletons. The
/// result is deterministic for a fixed seed.
pub fn infomap(g: &SimilarityGraph, seed: u64) -> Partition {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flow = Flow::from_graph(g);
    let mut flat: Vec<usize> = (0..g.n).collect();
    loop {
        let (module, moved) = optimize_level(&flow, &mut rng);
        if !moved {
            break;
        }
        let (dense, coarser) = aggregate(&flow, &module);
        for slot in &mut flat {
            *slot = dense[*slot];
        }
        if coarser.n() == flow.n() {
            break;
        }
        flow = coarser;
    }
    Partition::new(flat)
}

/// Connected components as clusters, ids in order of the lowest node.
pub fn connected_components(g: &SimilarityGraph) -> Partition {
    let flow = Flow::from_graph(g);
    let adj = flow.adjacency();
    let mut component = vec![usize::MAX; g.n];
    let mut next = 0;
    for start in 0..g.n {
        if component[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        component[start] = next;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if component[v] == usize::MAX {
                    component[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    Partition::new(component)
}

/// Cluster every concept independently: graph from the distance function
/// at the threshold, then the chosen clusterer. Partition node order
/// follows the wordlist's per-concept word order.
pub fn cluster_wordlist<E>(
    wl: &Wordlist,
    mut dist: impl FnMut(&Word, &Word) -> Result<f64, E>,
    threshold: f64,
    seed: u64,
    method: ClusterMethod,
) -> Result<BTreeMap<String, Partition>, E> {
    let mut out = BTreeMap::new();
    for concept in wl.concepts() {
        let words: Vec<&Word> = wl.words_for_concept(concept).collect();
        let g = build_graph(concept, &words, &mut dist, threshold)?;
        let part = match method {
            ClusterMethod::Infomap => infomap(&g, seed),
            ClusterMethod::Components => connected_components(&g),
        };
        out.insert(concept.clone(), part);
    }
    Ok(out)
}

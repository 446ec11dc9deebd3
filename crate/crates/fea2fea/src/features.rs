//! The five per-node structural features and their |V|×5 matrix.
//!
//! Canonical column order: constant, degree, clustering coefficient,
//! PageRank, average shortest-path length. All operations are pure functions
//! of an immutable graph; per-node work is spread across the ambient thread
//! pool via `par::map_range`.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphCollection};
use crate::par;
use crate::tensor::Tensor;

pub const NUM_FEATURES: usize = 5;

/// One structural feature, identified by its canonical column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Cons,
    Deg,
    Clu,
    Pr,
    AvgLen,
}

pub const ALL_FEATURES: [Feature; NUM_FEATURES] =
    [Feature::Cons, Feature::Deg, Feature::Clu, Feature::Pr, Feature::AvgLen];

impl Feature {
    pub fn index(self) -> usize {
        match self {
            Feature::Cons => 0,
            Feature::Deg => 1,
            Feature::Clu => 2,
            Feature::Pr => 3,
            Feature::AvgLen => 4,
        }
    }

    pub fn from_index(idx: usize) -> Result<Self> {
        ALL_FEATURES
            .get(idx)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("feature index {idx} outside 0..{NUM_FEATURES}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Cons => "cons",
            Feature::Deg => "deg",
            Feature::Clu => "clu",
            Feature::Pr => "pr",
            Feature::AvgLen => "avglen",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cons" | "constant" => Ok(Feature::Cons),
            "deg" | "degree" => Ok(Feature::Deg),
            "clu" | "clustering" => Ok(Feature::Clu),
            "pr" | "pagerank" => Ok(Feature::Pr),
            "avglen" | "avg_len" => Ok(Feature::AvgLen),
            other => Err(Error::InvalidConfig(format!(
                "unknown feature {other:?} (expected cons|deg|clu|pr|avglen)"
            ))),
        }
    }
}

/// |V|×5 matrix of structural features in canonical column order.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMatrix {
    values: Tensor,
}

impl NodeFeatureMatrix {
    pub fn from_tensor(values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 || values.shape()[1] != NUM_FEATURES {
            return Err(Error::ShapeMismatch {
                op: "NodeFeatureMatrix::from_tensor",
                lhs: values.shape().to_vec(),
                rhs: vec![values.rows(), NUM_FEATURES],
            });
        }
        Ok(NodeFeatureMatrix { values })
    }

    pub fn num_nodes(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn get(&self, node: usize, feature: Feature) -> f64 {
        self.values.at(node, feature.index())
    }

    pub fn column(&self, feature: Feature) -> Vec<f64> {
        (0..self.num_nodes()).map(|u| self.get(u, feature)).collect()
    }

    /// Stacks rows of `other` below `self`. Column order must already agree,
    /// which the type guarantees.
    pub fn stack(&mut self, other: &NodeFeatureMatrix) {
        let mut data = self.values.data().to_vec();
        data.extend_from_slice(other.values.data());
        let rows = data.len() / NUM_FEATURES;
        self.values = Tensor::matrix(rows, NUM_FEATURES, data).unwrap();
    }
}

impl Default for NodeFeatureMatrix {
    fn default() -> Self {
        NodeFeatureMatrix { values: Tensor::zeros(vec![0, NUM_FEATURES]) }
    }
}

/// Every node gets the same constant value (default 1).
pub fn constant_feature(g: &Graph, c: f64) -> Vec<f64> {
    vec![c; g.num_nodes()]
}

/// Neighbor counts as reals.
pub fn degree(g: &Graph) -> Vec<f64> {
    (0..g.num_nodes()).map(|u| g.degree(u) as f64).collect()
}

/// Fraction of a node's neighbor pairs that are themselves connected;
/// defined as 0 for degree < 2.
pub fn local_clustering(g: &Graph, u: usize) -> f64 {
    let ns = g.neighbors(u);
    let k = ns.len();
    if k < 2 {
        return 0.0;
    }
    let mut links = 0usize;
    for (i, &a) in ns.iter().enumerate() {
        for &b in &ns[i + 1..] {
            if g.has_edge(a, b) {
                links += 1;
            }
        }
    }
    2.0 * links as f64 / (k * (k - 1)) as f64
}

pub fn clustering_coefficient(g: &Graph) -> Vec<f64> {
    par::map_range(g.num_nodes(), |u| local_clustering(g, u))
}

pub const PAGERANK_DAMPING: f64 = 0.85;
pub const PAGERANK_TOL: f64 = 1e-8;
pub const PAGERANK_MAX_ITER: usize = 200;

/// Power iteration for PR(u) = (1−q)/|V| + q·Σ_{v∈N(u)} PR(v)/deg(v),
/// starting from the uniform vector. Degree-0 nodes redistribute their mass
/// uniformly, so Σ PR stays 1. Stops when the max-abs change drops below
/// `tol`; exceeding `max_iter` is an error carrying the residual.
pub fn pagerank(g: &Graph, q: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    pagerank_impl(g, q, tol, max_iter, false)
}

/// Single-threaded twin of [`pagerank`], for benchmarking the parallel speedup.
pub fn pagerank_seq(g: &Graph, q: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    pagerank_impl(g, q, tol, max_iter, true)
}

fn pagerank_impl(g: &Graph, q: f64, tol: f64, max_iter: usize, seq: bool) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!("damping factor {q} outside [0, 1)")));
    }
    let n = g.num_nodes();
    if n == 0 {
        return Ok(Vec::new());
    }
    let nf = n as f64;
    let mut rank = vec![1.0 / nf; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let dangling: f64 = (0..n).filter(|&u| g.degree(u) == 0).map(|u| rank[u]).sum();
        let base = (1.0 - q) / nf + q * dangling / nf;
        let rank_ref = &rank;
        let step = |u: usize| {
            let flow: f64 = g.neighbors(u).iter().map(|&v| rank_ref[v] / g.degree(v) as f64).sum();
            base + q * flow
        };
        let next = if seq { par::map_range_seq(n, &step) } else { par::map_range(n, &step) };
        residual = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rank = next;
        if residual < tol {
            return Ok(rank);
        }
    }
    Err(Error::NoConvergence { residual, iterations: max_iter, tolerance: tol })
}

pub fn pagerank_default(g: &Graph) -> Result<Vec<f64>> {
    pagerank(g, PAGERANK_DAMPING, PAGERANK_TOL, PAGERANK_MAX_ITER)
}

/// Mean BFS distance from `u` to the nodes it can reach (0 when it reaches
/// nothing). Unreachable nodes are excluded from the average, not counted
/// as infinite.
pub fn avg_len_from(g: &Graph, u: usize) -> f64 {
    let n = g.num_nodes();
    let mut dist = vec![usize::MAX; n];
    dist[u] = 0;
    let mut queue = VecDeque::from([u]);
    let mut total = 0usize;
    let mut reached = 0usize;
    while let Some(v) = queue.pop_front() {
        for &w in g.neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                total += dist[w];
                reached += 1;
                queue.push_back(w);
            }
        }
    }
    if reached == 0 {
        0.0
    } else {
        total as f64 / reached as f64
    }
}

pub fn average_path_length(g: &Graph) -> Vec<f64> {
    par::map_range(g.num_nodes(), |u| avg_len_from(g, u))
}

/// Computes all five features in canonical order.
pub fn build_feature_matrix(g: &Graph) -> Result<NodeFeatureMatrix> {
    build_matrix_impl(g, false)
}

/// Single-threaded twin of [`build_feature_matrix`]. Exists so benchmarks
/// can time the dispatch overhead; output is identical.
pub fn build_feature_matrix_seq(g: &Graph) -> Result<NodeFeatureMatrix> {
    build_matrix_impl(g, true)
}

fn build_matrix_impl(g: &Graph, seq: bool) -> Result<NodeFeatureMatrix> {
    let cons = constant_feature(g, 1.0);
    let deg = degree(g);
    let (clu, pr, avg) = if seq {
        (
            par::map_range_seq(g.num_nodes(), |u| local_clustering(g, u)),
            pagerank_impl(g, PAGERANK_DAMPING, PAGERANK_TOL, PAGERANK_MAX_ITER, true)?,
            par::map_range_seq(g.num_nodes(), |u| avg_len_from(g, u)),
        )
    } else {
        (clustering_coefficient(g), pagerank_default(g)?, average_path_length(g))
    };
    let n = g.num_nodes();
    let mut data = Vec::with_capacity(n * NUM_FEATURES);
    for u in 0..n {
        data.extend_from_slice(&[cons[u], deg[u], clu[u], pr[u], avg[u]]);
    }
    NodeFeatureMatrix::from_tensor(Tensor::matrix(n, NUM_FEATURES, data)?)
}

/// Per-graph feature matrices stacked in disjoint-union node order. Each
/// member graph is processed independently, so no feature leaks across
/// graphs.
pub fn build_collection_features(coll: &GraphCollection) -> Result<NodeFeatureMatrix> {
    let mut out = NodeFeatureMatrix::default();
    for g in &coll.graphs {
        out.stack(&build_feature_matrix(g)?);
    }
    Ok(out)
}

/// Writes the matrix as TSV with the canonical header. Values are printed
/// with 17 significant digits, enough for a lossless f64 round trip.
pub fn save_feature_matrix(m: &NodeFeatureMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("cons\tdeg\tclu\tpr\tavglen\n");
    for u in 0..m.num_nodes() {
        let row: Vec<String> = ALL_FEATURES.iter().map(|&f| format!("{:.16e}", m.get(u, f))).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_feature_matrix(path: &Path) -> Result<NodeFeatureMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.split_whitespace().collect::<Vec<_>>() == ["cons", "deg", "clu", "pr", "avglen"] => {}
        _ => return Err(Error::parse(path, 1, "expected header `cons deg clu pr avglen`")),
    }
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != NUM_FEATURES {
            return Err(Error::parse(path, lineno + 1, format!("expected 5 columns, got {}", fields.len())));
        }
        for f in fields {
            data.push(
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno + 1, format!("invalid number {f:?}")))?,
            );
        }
        rows += 1;
    }
    NodeFeatureMatrix::from_tensor(Tensor::matrix(rows, NUM_FEATURES, data)?)
}

//! Sparse undirected graphs in CSR form, plus datasets built on top of them.
//!
//! Graphs are simple: construction strips self-loops and duplicate edges, and
//! neighbor lists are kept sorted so lookups can binary-search. A built
//! `Graph` is immutable and safe to share across threads.

mod geometric;
mod io;

pub use geometric::{default_geometric_radius, generate_random_geometric, geometric_points};
pub use io::{load_edge_list, load_tudataset, save_edge_list, saved_node_count};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds a graph from undirected edge pairs. Self-loops and duplicate
    /// edges are dropped; endpoints outside `0..num_nodes` are errors.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::NodeOutOfRange { u, v, num_nodes });
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Ok(Graph { offsets, neighbors })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Iterates each undirected edge once, as (u, v) with u < v, in
    /// ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes())
            .flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }
}

/// Train/val/test node membership. Masks are pairwise disjoint and cover
/// every node when produced by [`split_masks`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        mask_indices(&self.train)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        mask_indices(&self.val)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        mask_indices(&self.test)
    }
}

fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

/// A single graph with optional per-node labels, initial features and split
/// masks.
#[derive(Debug, Clone)]
pub struct NodeDataset {
    pub graph: Graph,
    pub initial_node_features: Option<Tensor>,
    pub node_labels: Option<Vec<usize>>,
    pub split_masks: Option<SplitMasks>,
}

impl NodeDataset {
    pub fn from_graph(graph: Graph) -> Self {
        NodeDataset { graph, initial_node_features: None, node_labels: None, split_masks: None }
    }
}

/// Multiple graphs with one class label each, as loaded from TUDataset
/// archives.
#[derive(Debug, Clone)]
pub struct GraphCollection {
    pub graphs: Vec<Graph>,
    pub graph_labels: Vec<usize>,
    pub num_classes: usize,
    pub node_labels: Option<Vec<Vec<usize>>>,
    pub initial_node_features: Option<Vec<Tensor>>,
}

impl GraphCollection {
    pub fn new(graphs: Vec<Graph>, graph_labels: Vec<usize>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidConfig("graph collection is empty".into()));
        }
        if graphs.len() != graph_labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} graphs but {} labels",
                graphs.len(),
                graph_labels.len()
            )));
        }
        if let Some(i) = graphs.iter().position(|g| g.num_nodes() == 0) {
            return Err(Error::InvalidConfig(format!("graph {i} has no nodes")));
        }
        let num_classes = graph_labels.iter().max().copied().unwrap_or(0) + 1;
        Ok(GraphCollection {
            graphs,
            graph_labels,
            num_classes,
            node_labels: None,
            initial_node_features: None,
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.graphs.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs.iter().map(|g| g.num_nodes()).sum()
    }

    /// Merges all member graphs into one graph over disjoint node ranges.
    /// Message passing on the union never crosses members because no union
    /// edge does.
    pub fn disjoint_union(&self) -> UnionGraph {
        let total = self.total_nodes();
        let mut node_offsets = Vec::with_capacity(self.graphs.len() + 1);
        node_offsets.push(0usize);
        let mut node_graph = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(total + 1);
        offsets.push(0usize);
        let mut neighbors = Vec::new();
        for (gi, g) in self.graphs.iter().enumerate() {
            let base = *node_offsets.last().unwrap();
            for u in 0..g.num_nodes() {
                node_graph.push(gi);
                neighbors.extend(g.neighbors(u).iter().map(|&v| v + base));
                offsets.push(neighbors.len());
            }
            node_offsets.push(base + g.num_nodes());
        }
        UnionGraph { graph: Graph { offsets, neighbors }, node_graph, node_offsets }
    }
}

/// Disjoint union of a collection: one big graph plus node→member bookkeeping.
#[derive(Debug, Clone)]
pub struct UnionGraph {
    pub graph: Graph,
    /// Owning member graph per union node.
    pub node_graph: Vec<usize>,
    /// Member graph `g` owns union nodes `node_offsets[g]..node_offsets[g+1]`.
    pub node_offsets: Vec<usize>,
}

/// Splits `0..n` into train/val/test by seeded shuffle. Bucket sizes floor
/// toward zero and the remainder spills into train.
pub fn split_masks(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitMasks> {
    let (rt, rv, re) = ratios;
    if rt < 0.0 || rv < 0.0 || re < 0.0 {
        return Err(Error::InvalidConfig(format!("split ratios must be non-negative, got {ratios:?}")));
    }
    if (rt + rv + re - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    if n < 3 {
        return Err(Error::InvalidConfig(format!("cannot split {n} items into three buckets")));
    }
    let n_val = (rv * n as f64).floor() as usize;
    let n_test = (re * n as f64).floor() as usize;
    let n_train = n - n_val - n_test; // floor(rt·n) plus the spilled remainder

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (pos, &i) in order.iter().enumerate() {
        if pos < n_train {
            masks.train[i] = true;
        } else if pos < n_train + n_val {
            masks.val[i] = true;
        } else {
            masks.test[i] = true;
        }
    }
    Ok(masks)
}

/// Attaches seeded split masks to a dataset.
pub fn node_split(mut dataset: NodeDataset, ratios: (f64, f64, f64), seed: u64) -> Result<NodeDataset> {
    dataset.split_masks = Some(split_masks(dataset.graph.num_nodes(), ratios, seed)?);
    Ok(dataset)
}

//! Text loaders and writers: plain edge lists and the TUDataset layout.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphCollection};
use crate::tensor::Tensor;

/// Loads a whitespace-separated edge list (`<u> <v>` per line, `#` starts a
/// comment). When `num_nodes` is absent it becomes 1 + the largest id seen.
pub fn load_edge_list(path: &Path, num_nodes: Option<usize>) -> Result<Graph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    let mut max_id = None::<usize>;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let u = parse_id(parts.next(), path, lineno + 1)?;
        let v = parse_id(parts.next(), path, lineno + 1)?;
        if parts.next().is_some() {
            return Err(Error::parse(path, lineno + 1, "expected exactly two node ids"));
        }
        max_id = Some(max_id.map_or(u.max(v), |m: usize| m.max(u.max(v))));
        edges.push((u, v));
    }
    let n = match (num_nodes, max_id) {
        (Some(n), _) => n,
        (None, Some(m)) => m + 1,
        (None, None) => {
            return Err(Error::parse(path, 0, "empty edge list and no node count given"));
        }
    };
    Graph::from_edges(n, &edges)
}

fn parse_id(tok: Option<&str>, path: &Path, lineno: usize) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::parse(path, lineno, "expected two node ids"))?;
    tok.parse::<usize>()
        .map_err(|_| Error::parse(path, lineno, format!("invalid node id {tok:?}")))
}

/// Writes a graph in the canonical edge-list form: one `u v` line per
/// undirected edge with u < v, ascending, plus a node-count comment so
/// trailing isolated nodes survive a round trip.
pub fn save_edge_list(graph: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# nodes: {}\n", graph.num_nodes()));
    for (u, v) in graph.edges() {
        out.push_str(&format!("{u} {v}\n"));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads the node count a [`save_edge_list`] header records, if present.
pub fn saved_node_count(path: &Path) -> Result<Option<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# nodes:") {
            let n = rest.trim().parse::<usize>().map_err(|_| {
                Error::parse(path, 1, format!("invalid node count {:?}", rest.trim()))
            })?;
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// Loads a TUDataset-style directory: `<name>_A.txt` (1-based global node id
/// pairs, comma or whitespace separated), `<name>_graph_indicator.txt`,
/// `<name>_graph_labels.txt` and optionally `<name>_node_labels.txt`, which
/// one-hot encodes into initial node features.
pub fn load_tudataset(dir: &Path, name: &str) -> Result<GraphCollection> {
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{name}_{suffix}.txt")) };
    let indicator = read_int_lines(&file("graph_indicator"))?;
    let raw_graph_labels = read_int_lines(&file("graph_labels"))?;

    let num_nodes = indicator.len();
    let num_graphs = raw_graph_labels.len();
    if num_graphs == 0 {
        return Err(Error::parse(file("graph_labels"), 0, "no graphs in dataset"));
    }

    // Global node id (1-based) → (graph index, local id). Nodes keep their
    // file order within each graph.
    let mut graph_of = vec![0usize; num_nodes];
    let mut local_of = vec![0usize; num_nodes];
    let mut graph_sizes = vec![0usize; num_graphs];
    let ind_path = file("graph_indicator");
    for (i, &gid) in indicator.iter().enumerate() {
        if gid < 1 || gid as usize > num_graphs {
            return Err(Error::parse(
                &ind_path,
                i + 1,
                format!("graph id {gid} outside 1..={num_graphs}"),
            ));
        }
        let g = gid as usize - 1;
        graph_of[i] = g;
        local_of[i] = graph_sizes[g];
        graph_sizes[g] += 1;
    }
    if let Some(g) = graph_sizes.iter().position(|&s| s == 0) {
        return Err(Error::parse(&ind_path, 0, format!("graph {} has no nodes", g + 1)));
    }

    // Edges, translated to per-graph local ids.
    let a_path = file("A");
    let text = fs::read_to_string(&a_path).map_err(|e| Error::io(&a_path, e))?;
    let mut per_graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty());
        let u = parse_tu_id(parts.next(), &a_path, lineno + 1, num_nodes)?;
        let v = parse_tu_id(parts.next(), &a_path, lineno + 1, num_nodes)?;
        if parts.next().is_some() {
            return Err(Error::parse(&a_path, lineno + 1, "expected exactly two node ids"));
        }
        if graph_of[u] != graph_of[v] {
            return Err(Error::CrossGraphEdge { u: u + 1, v: v + 1, gu: graph_of[u] + 1, gv: graph_of[v] + 1 });
        }
        per_graph_edges[graph_of[u]].push((local_of[u], local_of[v]));
    }

    let graphs = graph_sizes
        .iter()
        .zip(&per_graph_edges)
        .map(|(&n, edges)| Graph::from_edges(n, edges))
        .collect::<Result<Vec<_>>>()?;

    // Graph labels remapped to 0-based contiguous class ids.
    let mut classes: Vec<i64> = raw_graph_labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let graph_labels: Vec<usize> = raw_graph_labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();

    // Optional node labels, one-hot encoded over the dataset-wide label set.
    let node_label_path = file("node_labels");
    let (node_labels, initial) = if node_label_path.exists() {
        let raw = read_int_lines(&node_label_path)?;
        if raw.len() != num_nodes {
            return Err(Error::parse(
                &node_label_path,
                0,
                format!("{} node labels for {num_nodes} nodes", raw.len()),
            ));
        }
        let mut label_set = raw.clone();
        label_set.sort_unstable();
        label_set.dedup();
        let width = label_set.len();
        let mut per_graph: Vec<Vec<usize>> = graph_sizes.iter().map(|&n| vec![0; n]).collect();
        let mut features: Vec<Tensor> =
            graph_sizes.iter().map(|&n| Tensor::zeros(vec![n, width])).collect();
        for (i, l) in raw.iter().enumerate() {
            let class = label_set.binary_search(l).unwrap();
            per_graph[graph_of[i]][local_of[i]] = class;
            features[graph_of[i]].set(local_of[i], class, 1.0);
        }
        (Some(per_graph), Some(features))
    } else {
        (None, None)
    };

    Ok(GraphCollection {
        graphs,
        graph_labels,
        num_classes: classes.len(),
        node_labels,
        initial_node_features: initial,
    })
}

fn parse_tu_id(tok: Option<&str>, path: &Path, lineno: usize, num_nodes: usize) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::parse(path, lineno, "expected two node ids"))?;
    let id = tok
        .parse::<usize>()
        .map_err(|_| Error::parse(path, lineno, format!("invalid node id {tok:?}")))?;
    if id < 1 || id > num_nodes {
        return Err(Error::parse(path, lineno, format!("node id {id} outside 1..={num_nodes}")));
    }
    Ok(id - 1)
}

fn read_int_lines(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse::<i64>()
                .map_err(|_| Error::parse(path, lineno + 1, format!("invalid integer {line:?}")))?,
        );
    }
    Ok(out)
}

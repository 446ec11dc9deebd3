//! Downstream classification with structural-feature augmentation: selected
//! structural features pass per-feature encoders, are combined, concatenated
//! with any initial node features, and feed a skip-connected GNN. Graph
//! tasks pool node embeddings with a permutation-invariant readout and run
//! ten-fold cross validation inside an 8:1 train/test split.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, Feature, NodeFeatureMatrix, NUM_FEATURES};
use crate::graph::{split_masks, Graph, GraphCollection, NodeDataset, UnionGraph};
use crate::multiple::{combine_on_tape, ConcatMethod, NtnStepVars, DEFAULT_EMBED_DIM};
use crate::nn::{
    fit, Binder, ConvStack, ConvType, Fwd, LayerConfig, Mlp2, ParamId, ParamStore, Supervision,
    Tape, TrainSettings, Var,
};
use crate::par;
use crate::report::{fingerprint, mean_std};
use crate::seeds::{child_seed, tags};
use crate::single::PreparedData;
use crate::tensor::Tensor;

pub const APPLICATION_DEPTH: usize = 3;
pub const APPLICATION_DROPOUT: f64 = 0.6;
pub const NUM_FOLDS: usize = 10;
/// Train:test graph split of 8:1.
pub const GRAPH_TEST_FRACTION: f64 = 1.0 / 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Mean,
    Sum,
}

impl Readout {
    pub fn name(self) -> &'static str {
        match self {
            Readout::Mean => "mean",
            Readout::Sum => "sum",
        }
    }
}

impl std::fmt::Display for Readout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Readout::Mean),
            "sum" => Ok(Readout::Sum),
            other => Err(Error::InvalidConfig(format!(
                "unknown readout '{other}' (expected mean or sum)"
            ))),
        }
    }
}

/// Which structural features to fold in, how to combine them, and the
/// backbone that consumes the augmented input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Ascending structural feature indices; empty reproduces the
    /// unaugmented baseline exactly.
    pub members: Vec<usize>,
    pub concat_method: ConcatMethod,
    /// Encoder output dimension per structural feature.
    pub embed_dim: usize,
    /// Backbone; `in_dim`/`out_dim` are overwritten per task.
    pub gnn: LayerConfig,
    pub readout: Readout,
}

impl AugmentConfig {
    pub fn new(members: Vec<usize>, concat_method: ConcatMethod, conv: ConvType) -> Self {
        let mut gnn = LayerConfig::new(conv, 1, 2);
        gnn.depth = APPLICATION_DEPTH;
        gnn.dropout_p = APPLICATION_DROPOUT;
        gnn.use_batchnorm = true;
        gnn.use_skip = true;
        AugmentConfig {
            members,
            concat_method,
            embed_dim: DEFAULT_EMBED_DIM,
            gnn,
            readout: Readout::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.members.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "combination members must be strictly ascending".into(),
            ));
        }
        if let Some(&max) = self.members.last() {
            if max >= NUM_FEATURES {
                return Err(Error::InvalidConfig(format!(
                    "feature index {max} outside the {NUM_FEATURES} structural features"
                )));
            }
        }
        if !self.members.is_empty() && self.embed_dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        Ok(())
    }

    /// Column count of the augmented input for `initial_cols` raw columns.
    pub fn augmented_width(&self, initial_cols: usize) -> usize {
        self.members.len() * self.embed_dim + initial_cols
    }
}

/// Trainable augmentation pipeline: per-feature encoders plus combination
/// parameters. Shared by node and graph models.
struct Augmenter {
    encoders: Vec<Mlp2>,
    ntn_steps: Vec<(ParamId, ParamId, ParamId)>,
    method: ConcatMethod,
}

impl Augmenter {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        k: usize,
        embed_dim: usize,
        method: ConcatMethod,
    ) -> Self {
        let encoders: Vec<Mlp2> = (0..k)
            .map(|i| Mlp2::new(store, rng, &format!("enc{i}"), 1, embed_dim, embed_dim))
            .collect();
        let mut ntn_steps = Vec::new();
        if method != ConcatMethod::Simple {
            for t in 2..=k {
                let td = t * embed_dim;
                let prev = (t - 1) * embed_dim;
                let w = store.add(
                    format!("ntn{t}.w"),
                    crate::nn::glorot_uniform(rng, vec![td, prev, embed_dim], prev, td),
                );
                let b = store.add(format!("ntn{t}.b"), Tensor::zeros(vec![td]));
                let u = store.add(
                    format!("ntn{t}.u"),
                    crate::nn::glorot_uniform(rng, vec![td, td], td, td),
                );
                ntn_steps.push((w, b, u));
            }
        }
        Augmenter { encoders, ntn_steps, method }
    }

    /// Encoded-and-combined structural features, simple-concatenated with
    /// the initial features when present.
    fn forward(&self, fwd: &mut Fwd, columns: &[Var], initial: Option<Var>) -> Result<Var> {
        let mut parts = Vec::new();
        if !self.encoders.is_empty() {
            let mut embeds = Vec::with_capacity(self.encoders.len());
            for (enc, &x) in self.encoders.iter().zip(columns) {
                embeds.push(enc.forward(fwd, x)?);
            }
            let steps: Vec<NtnStepVars> = self
                .ntn_steps
                .iter()
                .map(|&(w, b, u)| NtnStepVars {
                    w: fwd.param(w),
                    b: fwd.param(b),
                    u: fwd.param(u),
                })
                .collect();
            parts.push(combine_on_tape(fwd.tape, &embeds, &steps, self.method)?);
        }
        if let Some(init) = initial {
            parts.push(init);
        }
        match parts.len() {
            0 => Err(Error::InvalidConfig(
                "no input features: empty combination and no initial features".into(),
            )),
            1 => Ok(parts[0]),
            _ => fwd.tape.concat_cols(&parts),
        }
    }
}

/// Node-to-graph pooling for graph-level tasks.
#[derive(Debug, Clone)]
pub struct GraphPooling {
    pub readout: Readout,
    /// Owning graph per union node.
    pub segments: Vec<usize>,
    pub num_graphs: usize,
}

/// The application model: augmentation, conv stack, classifier head, and an
/// optional readout that turns node rows into graph rows.
pub struct ApplicationModel {
    store: ParamStore,
    augmenter: Augmenter,
    stack: ConvStack,
    head: Mlp2,
    columns: Vec<Tensor>,
    initial: Option<Tensor>,
    pooling: Option<GraphPooling>,
    dropout_rng: ChaCha8Rng,
}

impl ApplicationModel {
    /// `columns` holds one `[n, 1]` tensor per combination member in config
    /// order; `initial` is the raw `[n, F]` feature matrix when the dataset
    /// provides one.
    pub fn new(
        columns: Vec<Tensor>,
        initial: Option<Tensor>,
        num_classes: usize,
        cfg: &AugmentConfig,
        pooling: Option<GraphPooling>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if columns.len() != cfg.members.len() {
            return Err(Error::InvalidConfig(format!(
                "{} input columns for {} combination members",
                columns.len(),
                cfg.members.len()
            )));
        }
        let n = columns
            .first()
            .map(|c| c.rows())
            .or_else(|| initial.as_ref().map(|t| t.rows()))
            .unwrap_or(0);
        for c in &columns {
            if c.cols() != 1 || c.rows() != n {
                return Err(Error::ShapeMismatch {
                    op: "augment input",
                    lhs: c.shape().to_vec(),
                    rhs: vec![n, 1],
                });
            }
        }
        if let Some(init) = &initial {
            if init.rows() != n {
                return Err(Error::ShapeMismatch {
                    op: "initial features",
                    lhs: init.shape().to_vec(),
                    rhs: vec![n, 0],
                });
            }
        }
        if let Some(p) = &pooling {
            if p.segments.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "readout segments",
                    lhs: vec![p.segments.len()],
                    rhs: vec![n],
                });
            }
        }
        let width = cfg.augmented_width(initial.as_ref().map(|t| t.cols()).unwrap_or(0));
        if width == 0 {
            return Err(Error::InvalidConfig(
                "no input features: empty combination and no initial features".into(),
            ));
        }
        let mut gnn = cfg.gnn.clone();
        gnn.in_dim = width;
        gnn.out_dim = num_classes;
        gnn.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[tags::MODEL_INIT]));
        let augmenter = Augmenter::new(&mut store, &mut rng, columns.len(), cfg.embed_dim, cfg.concat_method);
        let stack = ConvStack::new(&mut store, &mut rng, &gnn, "stack");
        let head = Mlp2::new(&mut store, &mut rng, "head", gnn.hidden_dim, gnn.hidden_dim, num_classes);
        let dropout_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[tags::DROPOUT]));
        Ok(ApplicationModel { store, augmenter, stack, head, columns, initial, pooling, dropout_rng })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward_parts<'g>(&mut self, tape: &mut Tape<'g>, train: bool) -> Result<(Var, Var, Binder)> {
        let mut binder = Binder::new();
        let columns: Vec<Var> = self.columns.iter().map(|t| tape.leaf(t.clone())).collect();
        let initial = self.initial.as_ref().map(|t| tape.leaf(t.clone()));
        let mut fwd = Fwd {
            tape,
            store: &self.store,
            binder: &mut binder,
            rng: &mut self.dropout_rng,
            train,
        };
        let augmented = self.augmenter.forward(&mut fwd, &columns, initial)?;
        let mut h = self.stack.forward(&mut fwd, augmented)?;
        if let Some(p) = &self.pooling {
            h = fwd.tape.segment_mean(h, &p.segments, p.num_graphs)?;
            if p.readout == Readout::Sum {
                let cols = fwd.tape.value(h).cols();
                let mut counts = vec![0.0; p.num_graphs];
                for &g in &p.segments {
                    counts[g] += 1.0;
                }
                let data: Vec<f64> = counts.iter().flat_map(|&c| std::iter::repeat(c).take(cols)).collect();
                let scale = fwd.tape.leaf(Tensor::matrix(p.num_graphs, cols, data)?);
                h = fwd.tape.mul(h, scale)?;
            }
        }
        let logits = self.head.forward(&mut fwd, h)?;
        let logp = fwd.tape.log_softmax_rows(logits);
        Ok((h, logp, binder))
    }

    /// Pre-head activations in eval mode: node rows for node tasks, pooled
    /// graph rows for graph tasks.
    pub fn embeddings(&mut self, graph: &Graph) -> Result<Tensor> {
        let mut tape = Tape::with_graph(graph);
        let (pre_head, _, _) = self.forward_parts(&mut tape, false)?;
        Ok(tape.value(pre_head).clone())
    }
}

impl crate::nn::ForwardModel for ApplicationModel {
    fn forward<'g>(&mut self, tape: &mut Tape<'g>, train: bool) -> Result<(Var, Binder)> {
        let (_, logp, binder) = self.forward_parts(tape, train)?;
        Ok((logp, binder))
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn norm_stats(&self) -> Vec<f64> {
        self.stack.norm_stats()
    }

    fn set_norm_stats(&mut self, stats: &[f64]) {
        self.stack.set_norm_stats(stats)
    }
}

/// Augmented input matrix under freshly seeded (untrained) parameters.
/// Useful for inspecting widths and exporting inputs; training re-derives
/// the same parameters from the same seed.
pub fn augment_features(
    features: &NodeFeatureMatrix,
    initial: Option<&Tensor>,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Tensor> {
    cfg.validate()?;
    if cfg.members.is_empty() {
        return match initial {
            Some(init) => Ok(init.clone()),
            None => Err(Error::InvalidConfig(
                "no input features: empty combination and no initial features".into(),
            )),
        };
    }
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[tags::MODEL_INIT]));
    let augmenter = Augmenter::new(&mut store, &mut rng, cfg.members.len(), cfg.embed_dim, cfg.concat_method);
    let mut tape = Tape::new();
    let columns: Result<Vec<Var>> = cfg
        .members
        .iter()
        .map(|&i| {
            let col = features.column(Feature::from_index(i)?);
            Ok(tape.leaf(Tensor::matrix(col.len(), 1, col)?))
        })
        .collect();
    let columns = columns?;
    let initial = initial.map(|t| tape.leaf(t.clone()));
    let mut binder = Binder::new();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[tags::DROPOUT]));
    let mut fwd = Fwd {
        tape: &mut tape,
        store: &store,
        binder: &mut binder,
        rng: &mut dropout_rng,
        train: false,
    };
    let out = augmenter.forward(&mut fwd, &columns, initial)?;
    Ok(tape.value(out).clone())
}

/// A node-classification problem: one graph, per-node labels, fixed splits.
#[derive(Debug, Clone)]
pub struct NodeTask {
    pub name: String,
    pub data: PreparedData,
    pub initial: Option<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl NodeTask {
    /// Uses the dataset's stored splits when present, otherwise draws them
    /// from `seed`.
    pub fn from_dataset(
        name: &str,
        ds: &NodeDataset,
        ratios: (f64, f64, f64),
        seed: u64,
    ) -> Result<Self> {
        let labels = ds
            .node_labels
            .clone()
            .ok_or_else(|| Error::InvalidConfig("dataset has no node labels".into()))?;
        let n = ds.graph.num_nodes();
        if labels.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        let masks = match &ds.split_masks {
            Some(m) => m.clone(),
            None => split_masks(n, ratios, child_seed(seed, &[tags::SPLIT]))?,
        };
        let features = build_feature_matrix(&ds.graph)?;
        let num_classes = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
        Ok(NodeTask {
            name: name.to_string(),
            data: PreparedData { graph: ds.graph.clone(), features, masks },
            initial: ds.initial_node_features.clone(),
            labels,
            num_classes,
        })
    }
}

/// A graph-classification problem over the disjoint union of the members.
#[derive(Debug, Clone)]
pub struct GraphTask {
    pub name: String,
    pub union: UnionGraph,
    pub features: NodeFeatureMatrix,
    pub initial: Option<Tensor>,
    pub graph_labels: Vec<usize>,
    pub num_classes: usize,
}

impl GraphTask {
    pub fn from_collection(name: &str, coll: &GraphCollection) -> Result<Self> {
        let union = coll.disjoint_union();
        let features = crate::features::build_collection_features(coll)?;
        let initial = match &coll.initial_node_features {
            Some(per_graph) => Some(stack_rows(per_graph)?),
            None => None,
        };
        Ok(GraphTask {
            name: name.to_string(),
            union,
            features,
            initial,
            graph_labels: coll.graph_labels.clone(),
            num_classes: coll.num_classes,
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.graph_labels.len()
    }
}

fn stack_rows(tensors: &[Tensor]) -> Result<Tensor> {
    let cols = tensors.first().map(|t| t.cols()).unwrap_or(0);
    let mut data = Vec::new();
    let mut rows = 0;
    for t in tensors {
        if t.cols() != cols {
            return Err(Error::ShapeMismatch {
                op: "stack initial features",
                lhs: t.shape().to_vec(),
                rhs: vec![t.rows(), cols],
            });
        }
        rows += t.rows();
        data.extend_from_slice(t.data());
    }
    Tensor::matrix(rows, cols, data)
}

/// Accuracy report for one configuration over a seed set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn config_hash(cfg: &AugmentConfig) -> String {
    fingerprint(&serde_json::to_vec(cfg).expect("config serializes"))
}

fn member_columns(features: &NodeFeatureMatrix, members: &[usize]) -> Result<Vec<Tensor>> {
    members
        .iter()
        .map(|&i| {
            let col = features.column(Feature::from_index(i)?);
            Tensor::matrix(col.len(), 1, col)
        })
        .collect()
}

fn warn_if_structural_only(cfg: &AugmentConfig, initial_missing: bool) {
    if initial_missing && !cfg.members.is_empty() {
        eprintln!("warning: no initial node features; training on structural features only");
    }
}

/// Train the application model on the node task once per seed and report
/// test accuracy at the best-validation checkpoint.
pub fn classify_nodes(
    task: &NodeTask,
    cfg: &AugmentConfig,
    seeds: &[u64],
    settings: &TrainSettings,
) -> Result<RunReport> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    warn_if_structural_only(cfg, task.initial.is_none());
    let columns = member_columns(&task.data.features, &cfg.members)?;
    let sup = Supervision {
        labels: task.labels.clone(),
        num_classes: task.num_classes,
        train_idx: task.data.masks.train_indices(),
        val_idx: task.data.masks.val_indices(),
        test_idx: task.data.masks.test_indices(),
    };
    let accuracies: Result<Vec<f64>> = par::map_items(seeds, |&seed| {
        let model_seed = child_seed(seed, &[tags::APPLICATION_TASK]);
        let mut model = ApplicationModel::new(
            columns.clone(),
            task.initial.clone(),
            task.num_classes,
            cfg,
            None,
            model_seed,
        )?;
        fit(&mut model, &task.data.graph, &sup, settings).map(|r| r.test_accuracy)
    })
    .into_iter()
    .collect();
    let accuracies = accuracies?;
    let (mean, std) = mean_std(&accuracies);
    Ok(RunReport {
        dataset: task.name.clone(),
        config_hash: config_hash(cfg),
        seeds: seeds.to_vec(),
        accuracies,
        mean,
        std,
    })
}

/// Round-robin fold assignment over a seeded shuffle: `result[i]` is the
/// fold of item `i`; fold sizes differ by at most one.
pub fn assign_folds(num_items: usize, num_folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..num_items).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut folds = vec![0usize; num_items];
    for (pos, &item) in order.iter().enumerate() {
        folds[item] = pos % num_folds;
    }
    folds
}

/// Train the application model on the graph task: per seed, an 8:1
/// train/test split over graphs, then cross validation folds inside the
/// training split (ten, or fewer when the split is smaller). The seed's
/// accuracy is the mean test accuracy over its folds; folds run in
/// parallel.
pub fn classify_graphs(
    task: &GraphTask,
    cfg: &AugmentConfig,
    seeds: &[u64],
    settings: &TrainSettings,
) -> Result<RunReport> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let g = task.num_graphs();
    if g < 9 {
        return Err(Error::InvalidConfig(format!(
            "{g} graphs cannot be split 8:1 (need at least 9)"
        )));
    }
    warn_if_structural_only(cfg, task.initial.is_none());
    let columns = member_columns(&task.features, &cfg.members)?;

    // One (seed, fold) job per model; fold counts may differ by seed only
    // through the split remainder, never in practice for g >= 9.
    let mut jobs = Vec::new();
    for &seed in seeds {
        let ratios = (1.0 - GRAPH_TEST_FRACTION, 0.0, GRAPH_TEST_FRACTION);
        let split = split_masks(g, ratios, child_seed(seed, &[tags::SPLIT]))?;
        let train_graphs = split.train_indices();
        let test_graphs = split.test_indices();
        let num_folds = NUM_FOLDS.min(train_graphs.len());
        let folds = assign_folds(
            train_graphs.len(),
            num_folds,
            child_seed(seed, &[tags::FOLD_ASSIGNMENT]),
        );
        for fold in 0..num_folds {
            let train_idx: Vec<usize> = train_graphs
                .iter()
                .enumerate()
                .filter(|(pos, _)| folds[*pos] != fold)
                .map(|(_, &g)| g)
                .collect();
            let val_idx: Vec<usize> = train_graphs
                .iter()
                .enumerate()
                .filter(|(pos, _)| folds[*pos] == fold)
                .map(|(_, &g)| g)
                .collect();
            jobs.push((seed, fold, train_idx, val_idx, test_graphs.clone()));
        }
    }

    let fold_accs: Result<Vec<(u64, f64)>> = par::map_items(&jobs, |(seed, fold, train_idx, val_idx, test_idx)| {
        let sup = Supervision {
            labels: task.graph_labels.clone(),
            num_classes: task.num_classes,
            train_idx: train_idx.clone(),
            val_idx: val_idx.clone(),
            test_idx: test_idx.clone(),
        };
        let pooling = GraphPooling {
            readout: cfg.readout,
            segments: task.union.node_graph.clone(),
            num_graphs: task.num_graphs(),
        };
        let model_seed = child_seed(*seed, &[tags::APPLICATION_TASK, *fold as u64]);
        let mut model = ApplicationModel::new(
            columns.clone(),
            task.initial.clone(),
            task.num_classes,
            cfg,
            Some(pooling),
            model_seed,
        )?;
        let report = fit(&mut model, &task.union.graph, &sup, settings)?;
        Ok((*seed, report.test_accuracy))
    })
    .into_iter()
    .collect();
    let fold_accs = fold_accs?;

    let accuracies: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            let per_seed: Vec<f64> = fold_accs.iter().filter(|(fs, _)| *fs == s).map(|(_, a)| *a).collect();
            mean_std(&per_seed).0
        })
        .collect();
    let (mean, std) = mean_std(&accuracies);
    Ok(RunReport {
        dataset: task.name.clone(),
        config_hash: config_hash(cfg),
        seeds: seeds.to_vec(),
        accuracies,
        mean,
        std,
    })
}

/// Synthetic graph-classification task: geometric graphs labeled by their
/// binned median node degree. Initial features are a constant column, so a
/// model without structural augmentation sees nothing that separates the
/// classes beyond what its aggregation leaks.
pub fn synthetic_degree_collection(
    num_graphs: usize,
    n: usize,
    radius: Option<f64>,
    num_classes: usize,
    seed: u64,
) -> Result<GraphCollection> {
    use crate::binning::{apply_bins, fit_bins, BinStrategy};
    use crate::graph::{default_geometric_radius, generate_random_geometric};

    if num_graphs == 0 {
        return Err(Error::InvalidConfig("collection needs at least one graph".into()));
    }
    let r = radius.unwrap_or_else(|| default_geometric_radius(n));
    let mut graphs = Vec::with_capacity(num_graphs);
    let mut medians = Vec::with_capacity(num_graphs);
    for i in 0..num_graphs {
        let g = generate_random_geometric(n, r, child_seed(seed, &[tags::SYNTH_GRAPH, i as u64]))?;
        let mut degrees: Vec<f64> = (0..g.num_nodes()).map(|u| g.degree(u) as f64).collect();
        degrees.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = degrees.len() / 2;
        let median = if degrees.len() % 2 == 0 {
            (degrees[mid - 1] + degrees[mid]) / 2.0
        } else {
            degrees[mid]
        };
        medians.push(median);
        graphs.push(g);
    }
    let spec = fit_bins(&medians, num_classes, BinStrategy::EqualFrequency)?;
    let labels = apply_bins(&medians, &spec);
    let initial: Vec<Tensor> = graphs.iter().map(|g| Tensor::filled(vec![g.num_nodes(), 1], 1.0)).collect();
    let mut coll = GraphCollection::new(graphs, labels)?;
    coll.num_classes = spec.num_classes();
    coll.initial_node_features = Some(initial);
    Ok(coll)
}

/// Writes one row per embedding with tab-separated full-precision columns.
pub fn save_embeddings_tsv(path: &std::path::Path, embeddings: &Tensor) -> Result<()> {
    use std::io::Write;
    let mut text = String::new();
    for r in 0..embeddings.rows() {
        let row: Vec<String> = embeddings.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        text.push_str(&row.join("\t"));
        text.push('\n');
    }
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{apply_bins, fit_bins, BinStrategy};
    use crate::graph::generate_random_geometric;
    use crate::single::DEFAULT_SPLIT_RATIOS;

    fn degree_labeled_task(n: usize, seed: u64) -> NodeTask {
        let graph = generate_random_geometric(n, 0.2, seed).unwrap();
        let features = build_feature_matrix(&graph).unwrap();
        let deg = features.column(Feature::Deg);
        let spec = fit_bins(&deg, 2, BinStrategy::EqualFrequency).unwrap();
        let labels = apply_bins(&deg, &spec);
        let mut ds = NodeDataset::from_graph(graph);
        ds.node_labels = Some(labels);
        NodeTask::from_dataset("synthetic", &ds, DEFAULT_SPLIT_RATIOS, seed).unwrap()
    }

    fn small_collection(num_graphs: usize, seed: u64) -> GraphCollection {
        let mut graphs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..num_graphs {
            let n = 8 + (i % 5);
            let g = generate_random_geometric(n, 0.5, seed + i as u64).unwrap();
            graphs.push(g);
            labels.push(i % 2);
        }
        GraphCollection::new(graphs, labels).unwrap()
    }

    fn tiny_cfg(members: Vec<usize>, conv: ConvType) -> AugmentConfig {
        let mut cfg = AugmentConfig::new(members, ConcatMethod::Simple, conv);
        cfg.embed_dim = 4;
        cfg.gnn.hidden_dim = 8;
        cfg.gnn.depth = 2;
        cfg.gnn.dropout_p = 0.0;
        cfg.gnn.use_batchnorm = false;
        cfg
    }

    fn quick_settings() -> TrainSettings {
        TrainSettings { max_epochs: 5, patience: 5, ..TrainSettings::default() }
    }

    #[test]
    fn default_config_matches_application_shape() {
        let cfg = AugmentConfig::new(vec![1, 3], ConcatMethod::Ntn, ConvType::Gcn);
        assert_eq!(cfg.gnn.depth, 3);
        assert_eq!(cfg.gnn.dropout_p, APPLICATION_DROPOUT);
        assert!(cfg.gnn.use_batchnorm);
        assert!(cfg.gnn.use_skip);
        assert_eq!(cfg.readout, Readout::Mean);
        assert_eq!(cfg.embed_dim, 64);
    }

    #[test]
    fn augmented_width_law() {
        let cfg = AugmentConfig::new(vec![1, 3], ConcatMethod::Simple, ConvType::Gcn);
        assert_eq!(cfg.augmented_width(10), 138);
        let graph = generate_random_geometric(12, 0.4, 1).unwrap();
        let features = build_feature_matrix(&graph).unwrap();
        let initial = Tensor::filled(vec![12, 10], 0.5);
        let augmented = augment_features(&features, Some(&initial), &cfg, 7).unwrap();
        assert_eq!(augmented.shape(), [12, 138]);
    }

    #[test]
    fn empty_combination_is_identity() {
        let cfg = AugmentConfig::new(vec![], ConcatMethod::Simple, ConvType::Gcn);
        let graph = generate_random_geometric(9, 0.4, 2).unwrap();
        let features = build_feature_matrix(&graph).unwrap();
        let initial = Tensor::matrix(9, 2, (0..18).map(|i| i as f64).collect()).unwrap();
        let augmented = augment_features(&features, Some(&initial), &cfg, 7).unwrap();
        assert_eq!(augmented, initial);
    }

    #[test]
    fn structural_only_when_initial_missing() {
        let cfg = tiny_cfg(vec![1, 2], ConvType::Gcn);
        let graph = generate_random_geometric(10, 0.4, 3).unwrap();
        let features = build_feature_matrix(&graph).unwrap();
        let augmented = augment_features(&features, None, &cfg, 7).unwrap();
        assert_eq!(augmented.shape(), [10, 8]);
    }

    #[test]
    fn no_inputs_at_all_is_an_error() {
        let cfg = AugmentConfig::new(vec![], ConcatMethod::Simple, ConvType::Gcn);
        let graph = generate_random_geometric(6, 0.5, 4).unwrap();
        let features = build_feature_matrix(&graph).unwrap();
        assert!(augment_features(&features, None, &cfg, 7).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_members() {
        let mut cfg = AugmentConfig::new(vec![3, 1], ConcatMethod::Simple, ConvType::Gcn);
        assert!(cfg.validate().is_err());
        cfg.members = vec![1, 7];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn node_classification_is_deterministic() {
        let task = degree_labeled_task(60, 11);
        let cfg = tiny_cfg(vec![1], ConvType::Sage);
        let a = classify_nodes(&task, &cfg, &[1, 2], &quick_settings()).unwrap();
        let b = classify_nodes(&task, &cfg, &[1, 2], &quick_settings()).unwrap();
        assert_eq!(a.accuracies, b.accuracies);
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.accuracies.len(), 2);
        assert!(a.accuracies.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn null_baseline_runs_without_structural_members() {
        let mut task = degree_labeled_task(50, 13);
        task.initial = Some(Tensor::filled(vec![50, 3], 1.0));
        let cfg = tiny_cfg(vec![], ConvType::Gcn);
        let a = classify_nodes(&task, &cfg, &[5], &quick_settings()).unwrap();
        let b = classify_nodes(&task, &cfg, &[5], &quick_settings()).unwrap();
        assert_eq!(a.accuracies, b.accuracies);
    }

    #[test]
    fn fold_assignment_partitions_items() {
        let folds = assign_folds(23, 10, 99);
        assert_eq!(folds.len(), 23);
        let mut sizes = vec![0usize; 10];
        for &f in &folds {
            assert!(f < 10);
            sizes[f] += 1;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(max - min <= 1);
        assert_ne!(assign_folds(23, 10, 99), assign_folds(23, 10, 100));
        assert_eq!(assign_folds(23, 10, 99), assign_folds(23, 10, 99));
    }

    #[test]
    fn graph_classification_runs_and_repeats() {
        let coll = small_collection(12, 20);
        let task = GraphTask::from_collection("toy", &coll).unwrap();
        let cfg = tiny_cfg(vec![1], ConvType::Sage);
        let a = classify_graphs(&task, &cfg, &[3], &quick_settings()).unwrap();
        let b = classify_graphs(&task, &cfg, &[3], &quick_settings()).unwrap();
        assert_eq!(a.accuracies, b.accuracies);
        assert!((0.0..=1.0).contains(&a.mean));
    }

    #[test]
    fn too_few_graphs_rejected() {
        let coll = small_collection(5, 30);
        let task = GraphTask::from_collection("tiny", &coll).unwrap();
        let cfg = tiny_cfg(vec![1], ConvType::Sage);
        assert!(classify_graphs(&task, &cfg, &[1], &quick_settings()).is_err());
    }

    #[test]
    fn mean_readout_is_permutation_invariant() {
        // Relabel the nodes of one member graph; the graph-level embedding
        // must agree up to float summation order.
        let base = generate_random_geometric(11, 0.5, 40).unwrap();
        let n = base.num_nodes();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let mut relabeled_edges: Vec<(usize, usize)> =
            base.edges().map(|(u, v)| (perm[u], perm[v])).collect();
        relabeled_edges.sort_unstable();
        let relabeled = Graph::from_edges(n, &relabeled_edges).unwrap();

        let embed = |g: &Graph| {
            let coll = GraphCollection::new(vec![g.clone()], vec![0]).unwrap();
            let task = GraphTask::from_collection("one", &coll).unwrap();
            let cfg = tiny_cfg(vec![1, 2], ConvType::Gcn);
            let columns = member_columns(&task.features, &cfg.members).unwrap();
            let pooling = GraphPooling {
                readout: Readout::Mean,
                segments: task.union.node_graph.clone(),
                num_graphs: 1,
            };
            let mut model = ApplicationModel::new(columns, None, 2, &cfg, Some(pooling), 77).unwrap();
            model.embeddings(&task.union.graph).unwrap()
        };
        let a = embed(&base);
        let b = embed(&relabeled);
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn sum_readout_scales_mean_by_count() {
        let coll = small_collection(9, 50);
        let task = GraphTask::from_collection("toy", &coll).unwrap();
        let cfg = tiny_cfg(vec![1], ConvType::Gcn);
        let columns = member_columns(&task.features, &cfg.members).unwrap();
        let counts: Vec<f64> = (0..task.num_graphs())
            .map(|g| task.union.node_graph.iter().filter(|&&x| x == g).count() as f64)
            .collect();
        let build = |readout: Readout| {
            let pooling = GraphPooling {
                readout,
                segments: task.union.node_graph.clone(),
                num_graphs: task.num_graphs(),
            };
            let mut model =
                ApplicationModel::new(columns.clone(), None, 2, &cfg, Some(pooling), 8).unwrap();
            model.embeddings(&task.union.graph).unwrap()
        };
        let mean = build(Readout::Mean);
        let sum = build(Readout::Sum);
        for r in 0..mean.rows() {
            for c in 0..mean.cols() {
                let expect = mean.at(r, c) * counts[r];
                assert!((sum.at(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_collection_is_balanced_and_constant_featured() {
        let coll = synthetic_degree_collection(24, 16, None, 2, 5).unwrap();
        assert_eq!(coll.graphs.len(), 24);
        assert_eq!(coll.num_classes, 2);
        let ones = coll.graph_labels.iter().filter(|&&l| l == 1).count();
        // Quantile binning keeps the classes roughly even.
        assert!((6..=18).contains(&ones), "{ones} of 24 labeled 1");
        let initial = coll.initial_node_features.as_ref().unwrap();
        assert!(initial.iter().all(|t| t.cols() == 1 && t.data().iter().all(|&v| v == 1.0)));
        let again = synthetic_degree_collection(24, 16, None, 2, 5).unwrap();
        assert_eq!(coll.graph_labels, again.graph_labels);
    }

    #[test]
    fn embeddings_export_round_trips_shape() {
        let task = degree_labeled_task(30, 60);
        let cfg = tiny_cfg(vec![1], ConvType::Gcn);
        let columns = member_columns(&task.data.features, &cfg.members).unwrap();
        let mut model = ApplicationModel::new(columns, None, 2, &cfg, None, 5).unwrap();
        let emb = model.embeddings(&task.data.graph).unwrap();
        assert_eq!(emb.shape(), [30, 8]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        save_embeddings_tsv(&path, &emb).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 30);
        assert_eq!(text.lines().next().unwrap().split('\t').count(), 8);
    }
}

//! Pairwise feature prediction: one model per (input, output) feature pair,
//! assembled into the 5×5 accuracy matrix. Entry (i, j) reports how well
//! feature i predicts the binned feature j on held-out nodes.

use serde::{Deserialize, Serialize};

use crate::binning::{apply_bins, fit_bins, BinStrategy, DEFAULT_NUM_BINS};
use crate::error::{Error, Result};
use crate::features::{
    build_collection_features, build_feature_matrix, Feature, NodeFeatureMatrix, ALL_FEATURES,
    NUM_FEATURES,
};
use crate::graph::{split_masks, Graph, GraphCollection, SplitMasks};
use crate::nn::{fit, GnnModel, LayerConfig, Supervision, TrainSettings};
use crate::par;
use crate::report::mean_std;
use crate::seeds::{child_seed, tags};
use crate::tensor::Tensor;

pub use crate::nn::accuracy;

pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);
pub const DEFAULT_SEED_COUNT: usize = 3;

/// A graph with computed structural features and a fixed node split, ready
/// for any number of prediction tasks. For graph collections the split is
/// drawn over member graphs so no graph straddles two splits.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub graph: Graph,
    pub features: NodeFeatureMatrix,
    pub masks: SplitMasks,
}

pub fn prepare_node_data(graph: &Graph, ratios: (f64, f64, f64), seed: u64) -> Result<PreparedData> {
    let features = build_feature_matrix(graph)?;
    let masks = split_masks(graph.num_nodes(), ratios, child_seed(seed, &[tags::SPLIT]))?;
    Ok(PreparedData { graph: graph.clone(), features, masks })
}

pub fn prepare_collection_data(
    collection: &GraphCollection,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<PreparedData> {
    let union = collection.disjoint_union();
    let features = build_collection_features(collection)?;
    let graph_masks = split_masks(collection.num_graphs(), ratios, child_seed(seed, &[tags::SPLIT]))?;
    let n = union.graph.num_nodes();
    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (u, &g) in union.node_graph.iter().enumerate() {
        masks.train[u] = graph_masks.train[g];
        masks.val[u] = graph_masks.val[g];
        masks.test[u] = graph_masks.test[g];
    }
    Ok(PreparedData { graph: union.graph, features, masks })
}

/// One (input feature, output feature) prediction task. The constant feature
/// is never a prediction target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairTask {
    pub input: Feature,
    pub output: Feature,
    pub num_bins: usize,
    pub strategy: BinStrategy,
    pub model: LayerConfig,
    pub seed: u64,
}

impl PairTask {
    pub fn new(input: Feature, output: Feature, model: LayerConfig, seed: u64) -> Result<Self> {
        if output == Feature::Cons {
            return Err(Error::InvalidConfig(
                "the constant feature is input-only, never a prediction target".into(),
            ));
        }
        Ok(PairTask {
            input,
            output,
            num_bins: DEFAULT_NUM_BINS,
            strategy: BinStrategy::default_for(output),
            model,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Trained { accuracy: f64 },
    /// The output column cannot be binned into two or more classes.
    Excluded { reason: String },
}

/// Train one pair task: bin the output column (fit on the training split
/// only), train the model on the input column, report test accuracy.
pub fn train_pair(task: &PairTask, data: &PreparedData, settings: &TrainSettings) -> Result<PairOutcome> {
    let input_col = data.features.column(task.input);
    let output_col = data.features.column(task.output);
    let train_idx = data.masks.train_indices();
    let train_vals: Vec<f64> = train_idx.iter().map(|&i| output_col[i]).collect();
    let spec = match fit_bins(&train_vals, task.num_bins, task.strategy) {
        Ok(spec) => spec,
        Err(Error::DegenerateColumn { reason }) => return Ok(PairOutcome::Excluded { reason }),
        Err(e) => return Err(e),
    };
    let labels = apply_bins(&output_col, &spec);
    let num_classes = spec.num_classes();

    let mut cfg = task.model.clone();
    cfg.in_dim = 1;
    cfg.out_dim = num_classes;
    let n = data.graph.num_nodes();
    let input = Tensor::matrix(n, 1, input_col)?;
    let model_seed = child_seed(task.seed, &[tags::PAIR_TASK, task.input.index() as u64, task.output.index() as u64]);
    let mut model = GnnModel::new(cfg, input, model_seed)?;
    let sup = Supervision {
        labels,
        num_classes,
        train_idx,
        val_idx: data.masks.val_indices(),
        test_idx: data.masks.test_indices(),
    };
    let report = fit(&mut model, &data.graph, &sup, settings)?;
    Ok(PairOutcome::Trained { accuracy: report.test_accuracy })
}

/// One matrix entry. Trained cells carry per-seed accuracies; the first
/// column mirrors the first row; the (constant, constant) corner is fixed at
/// 1 since a constant trivially identifies itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Cell {
    Trained { mean: f64, std: f64, runs: Vec<f64> },
    Mirrored,
    Constant,
    Excluded { reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixMetadata {
    pub dataset: String,
    pub model: LayerConfig,
    pub num_bins: usize,
    pub seeds: Vec<u64>,
    pub settings: TrainSettings,
}

/// The 5×5 matrix of pairwise prediction accuracies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub cells: Vec<Vec<Cell>>,
    pub metadata: MatrixMetadata,
}

impl CorrelationMatrix {
    /// Accuracy at (input i, output j); `None` when the cell is excluded.
    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        match &self.cells[i][j] {
            Cell::Trained { mean, .. } => Some(*mean),
            Cell::Mirrored => self.value(0, i),
            Cell::Constant => Some(1.0),
            Cell::Excluded { .. } => None,
        }
    }

    /// Per-seed standard deviation at (i, j); `None` when excluded.
    pub fn std(&self, i: usize, j: usize) -> Option<f64> {
        match &self.cells[i][j] {
            Cell::Trained { std, .. } => Some(*std),
            Cell::Mirrored => self.std(0, i),
            Cell::Constant => Some(0.0),
            Cell::Excluded { .. } => None,
        }
    }

    /// CSV with feature names on both axes; excluded cells print NA.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for f in ALL_FEATURES {
            out.push(',');
            out.push_str(f.name());
        }
        out.push('\n');
        for (i, f) in ALL_FEATURES.iter().enumerate() {
            out.push_str(f.name());
            for j in 0..NUM_FEATURES {
                match self.value(i, j) {
                    Some(v) => out.push_str(&format!(",{v:.6}")),
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: CorrelationMatrix =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("bad matrix JSON: {e}")))?;
        if m.cells.len() != NUM_FEATURES || m.cells.iter().any(|r| r.len() != NUM_FEATURES) {
            return Err(Error::InvalidConfig("correlation matrix must be 5×5".into()));
        }
        Ok(m)
    }
}

/// Fill every entry of the matrix: columns 1..5 are trained over the seed
/// set; column 0 mirrors row 0. Degenerate output columns mark their whole
/// column excluded rather than failing the run.
pub fn build_correlation_matrix(
    data: &PreparedData,
    base_cfg: &LayerConfig,
    num_bins: usize,
    seeds: &[u64],
    settings: &TrainSettings,
    dataset_name: &str,
) -> Result<CorrelationMatrix> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let mut tasks = Vec::new();
    for input in ALL_FEATURES {
        for output in ALL_FEATURES {
            if output == Feature::Cons {
                continue;
            }
            tasks.push((input, output));
        }
    }
    let outcomes = par::map_items(&tasks, |&(input, output)| -> Result<Cell> {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut task = PairTask::new(input, output, base_cfg.clone(), seed)?;
            task.num_bins = num_bins;
            match train_pair(&task, data, settings)? {
                PairOutcome::Trained { accuracy } => runs.push(accuracy),
                PairOutcome::Excluded { reason } => return Ok(Cell::Excluded { reason }),
            }
        }
        let (mean, std) = mean_std(&runs);
        Ok(Cell::Trained { mean, std, runs })
    });

    let mut cells = vec![vec![Cell::Mirrored; NUM_FEATURES]; NUM_FEATURES];
    cells[0][0] = Cell::Constant;
    for ((input, output), outcome) in tasks.into_iter().zip(outcomes) {
        cells[input.index()][output.index()] = outcome?;
    }
    Ok(CorrelationMatrix {
        cells,
        metadata: MatrixMetadata {
            dataset: dataset_name.to_string(),
            model: base_cfg.clone(),
            num_bins,
            seeds: seeds.to_vec(),
            settings: settings.clone(),
        },
    })
}

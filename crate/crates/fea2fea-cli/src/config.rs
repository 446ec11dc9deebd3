//! Flat run configuration: one JSON document whose keys mirror the CLI
//! flags. Flags beat file values; the merged result is echoed into every
//! run directory so a run can be repeated exactly.

use std::path::{Path, PathBuf};

use fea2fea::{Error, Result};
use serde::{Deserialize, Serialize};

/// Every field is optional; unset fields fall back to the documented
/// defaults at the point of use. Unknown keys in a config file are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // Dataset source (exactly one of edges / tudataset / synth_n).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    /// Node labels for edge-list node classification, one integer per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tudataset: Option<PathBuf>,
    /// File prefix inside the tudataset directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_name: Option<String>,
    /// Synthetic geometric graph node count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_n: Option<usize>,
    /// Synthetic collection size; 0 or unset means a single graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_graphs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,

    // Reproducibility.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Seed list is seed, seed+1, ... seed+num_seeds-1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_seeds: Option<usize>,

    // Model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batchnorm: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skip: Option<bool>,

    // Binning and pipeline selection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Feature names: cons, deg, clu, pr, avglen.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// simple | bilinear | ntn | all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    /// Comma-separated feature names for augmentation; empty string means
    /// no augmentation (the baseline model).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub members: Option<String>,
    /// mean | sum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readout: Option<String>,
    /// node | graph.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Path to a correlation matrix JSON from a `single` run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<PathBuf>,

    // Training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_ratio: Option<f64>,

    // Execution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, [$($field:ident),* $(,)?]) => {
        $(if $src.$field.is_some() {
            $dst.$field = $src.$field.clone();
        })*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Values set in `flags` replace values from this config.
    pub fn merged_with(&self, flags: &RunConfig) -> RunConfig {
        let mut out = self.clone();
        overlay!(out, flags, [
            edges, labels, tudataset, dataset_name, synth_n, synth_graphs, radius,
            seed, num_seeds,
            conv, hidden, depth, dropout, batchnorm, skip,
            bins, threshold, target, input, output, method, embed_dim, members,
            readout, mode, matrix,
            epochs, patience, lr, weight_decay, train_ratio, val_ratio, test_ratio,
            jobs,
        ]);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn seeds(&self) -> Vec<u64> {
        let root = self.seed.unwrap_or(7);
        let count = self.num_seeds.unwrap_or(3).max(1);
        (0..count as u64).map(|i| root + i).collect()
    }
}

//! Discretisation of feature columns into class labels.
//!
//! Training targets are bins, so prediction is |bins|-way classification.
//! Three strategies: equal-width, equal-frequency (quantiles), and
//! zero-inflated, which reserves bin 0 for a dominant spike value and splits
//! the remaining mass by quantiles. Fit on training values only; application
//! clamps out-of-range values into the outer bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Feature;

pub const DEFAULT_NUM_BINS: usize = 6;
pub const MAX_NUM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinStrategy {
    EqualWidth,
    EqualFrequency,
    /// Spike value (0 by construction for degree/clustering columns) owns
    /// bin 0; everything else is split into `num_bins − 1` quantile bins.
    ZeroInflated,
}

impl BinStrategy {
    /// Strategy used when the caller does not override one: zero-inflated
    /// for the spike-heavy degree and clustering columns, equal-frequency
    /// for the rest.
    pub fn default_for(feature: Feature) -> BinStrategy {
        match feature {
            Feature::Deg | Feature::Clu => BinStrategy::ZeroInflated,
            _ => BinStrategy::EqualFrequency,
        }
    }
}

impl std::str::FromStr for BinStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "equal-width" | "width" => Ok(BinStrategy::EqualWidth),
            "equal-frequency" | "frequency" | "quantile" => Ok(BinStrategy::EqualFrequency),
            "zero-inflated" | "zero" => Ok(BinStrategy::ZeroInflated),
            other => Err(Error::InvalidConfig(format!(
                "unknown binning strategy {other:?} (expected equal-width|equal-frequency|zero-inflated)"
            ))),
        }
    }
}

/// A fitted binning: `boundaries` are strictly ascending; value `v` maps to
/// the index of the first boundary ≥ v (right-closed intervals), or to the
/// last bin when every boundary is smaller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    pub num_bins: usize,
    pub strategy: BinStrategy,
    pub boundaries: Vec<f64>,
}

impl BinningSpec {
    /// Number of classes the fitted spec actually distinguishes. Quantile
    /// boundary deduplication can leave fewer than `num_bins`.
    pub fn num_classes(&self) -> usize {
        self.boundaries.len() + 1
    }
}

/// Fits bin boundaries on `values` (the training split of a column).
///
/// Errors with `DegenerateColumn` when the column cannot support more than
/// one class, signalling the caller to exclude the feature.
pub fn fit_bins(values: &[f64], num_bins: usize, strategy: BinStrategy) -> Result<BinningSpec> {
    if !(2..=MAX_NUM_BINS).contains(&num_bins) {
        return Err(Error::InvalidConfig(format!("num_bins {num_bins} outside 2..={MAX_NUM_BINS}")));
    }
    if values.is_empty() {
        return Err(Error::InvalidConfig("cannot fit bins on an empty column".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite value {bad} in binning column")));
    }

    let boundaries = match strategy {
        BinStrategy::EqualWidth => {
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if min == max {
                return Err(Error::DegenerateColumn { reason: "all values identical".into() });
            }
            let width = (max - min) / num_bins as f64;
            dedup_ascending((1..num_bins).map(|i| min + i as f64 * width).collect())
        }
        BinStrategy::EqualFrequency => quantile_boundaries(values, num_bins)?,
        BinStrategy::ZeroInflated => {
            const SPIKE: f64 = 0.0;
            if values.iter().any(|&v| v < SPIKE) {
                return Err(Error::InvalidConfig(
                    "zero-inflated binning requires non-negative values".into(),
                ));
            }
            let rest: Vec<f64> = values.iter().cloned().filter(|&v| v != SPIKE).collect();
            if rest.is_empty() {
                return Err(Error::DegenerateColumn {
                    reason: "every value sits in the zero spike".into(),
                });
            }
            // Bin 0 is right-closed at the spike itself; non-spike values are
            // strictly positive, so none of them lands there.
            let mut bounds = vec![SPIKE];
            let rest_constant = rest.iter().all(|&v| v == rest[0]);
            if rest_constant {
                if rest.len() == values.len() {
                    return Err(Error::DegenerateColumn { reason: "all values identical".into() });
                }
                // Spike plus one constant tail still separates two classes.
            } else if num_bins > 2 {
                bounds.extend(quantile_boundaries(&rest, num_bins - 1)?);
            }
            dedup_ascending(bounds)
        }
    };

    if boundaries.is_empty() {
        return Err(Error::DegenerateColumn { reason: "fewer than 2 distinct values".into() });
    }
    Ok(BinningSpec { num_bins, strategy, boundaries })
}

/// Quantile boundaries: the i-th boundary is the ceil(i·n/B)-th smallest
/// value, deduplicated to stay strictly ascending.
fn quantile_boundaries(values: &[f64], num_bins: usize) -> Result<Vec<f64>> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateColumn { reason: "all values identical".into() });
    }
    let n = sorted.len();
    let bounds = (1..num_bins)
        .map(|i| {
            let rank = (i * n + num_bins - 1) / num_bins; // ceil(i·n/B)
            sorted[rank - 1]
        })
        .collect();
    Ok(dedup_ascending(bounds))
}

fn dedup_ascending(mut bounds: Vec<f64>) -> Vec<f64> {
    bounds.dedup();
    // The last quantile can equal the column max; keep it, apply_bins clamps.
    bounds
}

/// Maps each value to its bin: index of the first boundary ≥ value, with
/// values above every boundary clamped into the last bin.
pub fn apply_bins(values: &[f64], spec: &BinningSpec) -> Vec<usize> {
    values
        .iter()
        .map(|&v| spec.boundaries.partition_point(|&b| b < v))
        .collect()
}

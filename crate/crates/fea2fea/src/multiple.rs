//! Multi-feature prediction: enumerate feature combinations, drop the ones
//! whose members predict each other too well, and train one predictor per
//! surviving combination with simple, bilinear or tensor-network
//! concatenation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::{apply_bins, fit_bins, BinStrategy};
use crate::error::{Error, Result};
use crate::features::Feature;
use crate::nn::{
    fit, glorot_uniform, Binder, ConvStack, Fwd, LayerConfig, Mlp2, ParamId, ParamStore,
    Supervision, Tape, TrainSettings, Var,
};
use crate::par;
use crate::report::mean_std;
use crate::seeds::{child_seed, tags};
use crate::single::{CorrelationMatrix, PreparedData};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.85;
pub const DEFAULT_EMBED_DIM: usize = 64;
pub const MIN_COMBINATION: usize = 2;
pub const MAX_COMBINATION: usize = 4;

/// An ascending set of input feature indices and the excluded target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCombination {
    pub members: Vec<usize>,
    pub target: usize,
}

impl FeatureCombination {
    pub fn k(&self) -> usize {
        self.members.len()
    }

    /// Stable bit-set encoding for seed derivation.
    pub fn member_mask(&self) -> u64 {
        self.members.iter().fold(0u64, |m, &i| m | (1 << i))
    }
}

impl std::fmt::Display for FeatureCombination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<String> = self
            .members
            .iter()
            .map(|&i| Feature::from_index(i).map(|f| f.name().to_string()).unwrap_or_else(|_| i.to_string()))
            .collect();
        write!(f, "({})", names.join("+"))
    }
}

/// All subsets of the non-target features with 2 to 4 members, ordered by
/// size then lexicographically. The enumeration is exponential in the
/// feature count, hence the hard cap.
pub fn enumerate_combinations(num_features: usize, target: usize) -> Result<Vec<FeatureCombination>> {
    if num_features > 16 {
        return Err(Error::InvalidConfig(format!(
            "refusing to enumerate subsets of {num_features} features (max 16)"
        )));
    }
    if target >= num_features {
        return Err(Error::InvalidConfig(format!(
            "target index {target} outside {num_features} features"
        )));
    }
    let pool: Vec<usize> = (0..num_features).filter(|&i| i != target).collect();
    let mut by_size: Vec<Vec<Vec<usize>>> = vec![Vec::new(); MAX_COMBINATION + 1];
    for mask in 1u32..(1 << pool.len()) {
        let members: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|(b, _)| mask & (1 << b) != 0)
            .map(|(_, &f)| f)
            .collect();
        let k = members.len();
        if (MIN_COMBINATION..=MAX_COMBINATION).contains(&k) {
            by_size[k].push(members);
        }
    }
    let mut out = Vec::new();
    for bucket in by_size.iter_mut() {
        bucket.sort();
        for members in bucket.drain(..) {
            out.push(FeatureCombination { members, target });
        }
    }
    Ok(out)
}

/// Keeps a combination iff every internal pair predicts each other strictly
/// below the threshold in both directions. Excluded matrix entries count as
/// redundant, which drops the pair.
pub fn filter_combinations(
    combs: &[FeatureCombination],
    r: &CorrelationMatrix,
    threshold: f64,
) -> Vec<FeatureCombination> {
    combs
        .iter()
        .filter(|c| {
            c.members.iter().enumerate().all(|(a, &i)| {
                c.members[a + 1..].iter().all(|&j| {
                    let fwd = r.value(i, j).map(|v| v < threshold).unwrap_or(false);
                    let rev = r.value(j, i).map(|v| v < threshold).unwrap_or(false);
                    fwd && rev
                })
            })
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcatMethod {
    Simple,
    Bilinear,
    Ntn,
}

impl ConcatMethod {
    pub const ALL: [ConcatMethod; 3] = [ConcatMethod::Simple, ConcatMethod::Bilinear, ConcatMethod::Ntn];

    pub fn name(self) -> &'static str {
        match self {
            ConcatMethod::Simple => "simple",
            ConcatMethod::Bilinear => "bilinear",
            ConcatMethod::Ntn => "ntn",
        }
    }
}

impl std::fmt::Display for ConcatMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ConcatMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(ConcatMethod::Simple),
            "bilinear" => Ok(ConcatMethod::Bilinear),
            "ntn" => Ok(ConcatMethod::Ntn),
            other => Err(Error::InvalidConfig(format!(
                "unknown concatenation method '{other}' (expected simple, bilinear or ntn)"
            ))),
        }
    }
}

/// Parameters for one recurrence step t: the output of step t has length
/// t·d, produced from the running (t−1)·d vector and the next d-dim input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NtnStep {
    /// Bilinear tensor, laid out as t·d slices of shape (t−1)·d × d.
    pub w: Tensor,
    /// Bias, length t·d.
    pub b: Tensor,
    /// Post-activation linear map, t·d × t·d.
    pub u: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NtnParams {
    pub d: usize,
    /// steps[t − 2] holds the parameters consuming embedding t, t = 2..=k.
    pub steps: Vec<NtnStep>,
}

impl NtnParams {
    /// Zero bilinear tensors and biases with identity u: the NTN recurrence
    /// then reduces to tanh of plain concatenation at each step.
    pub fn reducing(d: usize, k: usize) -> Self {
        let steps = (2..=k)
            .map(|t| {
                let td = t * d;
                let mut u = Tensor::zeros(vec![td, td]);
                for i in 0..td {
                    u.data_mut()[i * td + i] = 1.0;
                }
                NtnStep {
                    w: Tensor::zeros(vec![td, (t - 1) * d, d]),
                    b: Tensor::zeros(vec![td]),
                    u,
                }
            })
            .collect();
        NtnParams { d, steps }
    }

    pub fn seeded(d: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = (2..=k)
            .map(|t| {
                let td = t * d;
                let prev = (t - 1) * d;
                NtnStep {
                    w: glorot_uniform(&mut rng, vec![td, prev, d], prev, td),
                    b: Tensor::zeros(vec![td]),
                    u: glorot_uniform(&mut rng, vec![td, td], td, td),
                }
            })
            .collect();
        NtnParams { d, steps }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if k >= 2 && self.steps.len() < k - 1 {
            return Err(Error::InvalidConfig(format!(
                "{} recurrence steps cannot combine {k} embeddings",
                self.steps.len()
            )));
        }
        Ok(())
    }
}

/// Per-step parameter handles when the recurrence is trainable.
pub(crate) struct NtnStepVars {
    pub(crate) w: Var,
    pub(crate) b: Var,
    pub(crate) u: Var,
}

/// The shared recurrence. Starts from the first embedding and folds each
/// next one in; `steps` is empty for the simple method.
pub(crate) fn combine_on_tape(
    tape: &mut Tape,
    embeds: &[Var],
    steps: &[NtnStepVars],
    method: ConcatMethod,
) -> Result<Var> {
    if embeds.is_empty() {
        return Err(Error::InvalidConfig("cannot combine zero embeddings".into()));
    }
    if method == ConcatMethod::Simple {
        if embeds.len() == 1 {
            return Ok(embeds[0]);
        }
        return tape.concat_cols(embeds);
    }
    let mut g = embeds[0];
    for (i, &e) in embeds.iter().enumerate().skip(1) {
        let step = &steps[i - 1];
        let bil = tape.bilinear(g, step.w, e)?;
        let pre = match method {
            ConcatMethod::Bilinear => bil,
            ConcatMethod::Ntn => {
                let cat = tape.concat_cols(&[g, e])?;
                tape.add(bil, cat)?
            }
            ConcatMethod::Simple => unreachable!(),
        };
        let biased = tape.add_bias(pre, step.b)?;
        let act = tape.tanh(biased);
        g = match method {
            ConcatMethod::Ntn => tape.matmul(act, step.u)?,
            _ => act,
        };
    }
    Ok(g)
}

fn combine_pure(embeddings: &[Vec<f64>], params: &NtnParams, method: ConcatMethod) -> Result<Vec<f64>> {
    params.validate(embeddings.len())?;
    let mut tape = Tape::new();
    let embeds: Vec<Var> = embeddings
        .iter()
        .map(|e| tape.leaf(Tensor::matrix(1, e.len(), e.clone()).unwrap()))
        .collect();
    let steps: Vec<NtnStepVars> = params
        .steps
        .iter()
        .map(|s| NtnStepVars {
            w: tape.leaf(s.w.clone()),
            b: tape.leaf(s.b.clone()),
            u: tape.leaf(s.u.clone()),
        })
        .collect();
    let out = combine_on_tape(&mut tape, &embeds, &steps, method)?;
    Ok(tape.value(out).data().to_vec())
}

/// Direct concatenation in member order.
pub fn concat_simple(embeddings: &[Vec<f64>]) -> Vec<f64> {
    embeddings.iter().flat_map(|e| e.iter().copied()).collect()
}

/// The recurrence with only the bilinear term: g ← tanh(gᵀW e + b).
pub fn concat_bilinear(embeddings: &[Vec<f64>], params: &NtnParams) -> Result<Vec<f64>> {
    combine_pure(embeddings, params, ConcatMethod::Bilinear)
}

/// The full recurrence: g ← u·tanh(gᵀW e + (g ⊕ e) + b).
pub fn concat_ntn(embeddings: &[Vec<f64>], params: &NtnParams) -> Result<Vec<f64>> {
    combine_pure(embeddings, params, ConcatMethod::Ntn)
}

/// Multi-input node predictor: per-feature encoder MLPs, concatenation,
/// conv stack, classifier head.
pub struct MultiModel {
    store: ParamStore,
    encoders: Vec<Mlp2>,
    ntn_steps: Vec<(ParamId, ParamId, ParamId)>,
    stack: ConvStack,
    head: Mlp2,
    method: ConcatMethod,
    inputs: Vec<Tensor>,
    dropout_rng: ChaCha8Rng,
}

impl MultiModel {
    /// `columns` are the raw input feature columns, one [n, 1] tensor per
    /// combination member. `cfg.in_dim`/`out_dim` are overwritten from the
    /// combination size and class count.
    pub fn new(
        columns: Vec<Tensor>,
        num_classes: usize,
        method: ConcatMethod,
        mut cfg: LayerConfig,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let k = columns.len();
        if k == 0 {
            return Err(Error::InvalidConfig("no input features".into()));
        }
        if embed_dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        for c in &columns {
            if c.cols() != 1 || c.rows() != columns[0].rows() {
                return Err(Error::ShapeMismatch {
                    op: "multi input",
                    lhs: c.shape().to_vec(),
                    rhs: vec![columns[0].rows(), 1],
                });
            }
        }
        cfg.in_dim = k * embed_dim;
        cfg.out_dim = num_classes;
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[tags::MODEL_INIT]));
        let encoders: Vec<Mlp2> = (0..k)
            .map(|i| Mlp2::new(&mut store, &mut rng, &format!("enc{i}"), 1, embed_dim, embed_dim))
            .collect();
        let mut ntn_steps = Vec::new();
        if method != ConcatMethod::Simple {
            for t in 2..=k {
                let td = t * embed_dim;
                let prev = (t - 1) * embed_dim;
                let w = store.add(
                    format!("ntn{t}.w"),
                    glorot_uniform(&mut rng, vec![td, prev, embed_dim], prev, td),
                );
                let b = store.add(format!("ntn{t}.b"), Tensor::zeros(vec![td]));
                let u = store.add(format!("ntn{t}.u"), glorot_uniform(&mut rng, vec![td, td], td, td));
                ntn_steps.push((w, b, u));
            }
        }
        let stack = ConvStack::new(&mut store, &mut rng, &cfg, "stack");
        let head = Mlp2::new(&mut store, &mut rng, "head", cfg.hidden_dim, cfg.hidden_dim, cfg.out_dim);
        let dropout_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[tags::DROPOUT]));
        Ok(MultiModel { store, encoders, ntn_steps, stack, head, method, inputs: columns, dropout_rng })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward<'g>(&mut self, tape: &mut Tape<'g>, train: bool) -> Result<(Var, Binder)> {
        let mut binder = Binder::new();
        let inputs: Vec<Var> = self.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let mut fwd = Fwd {
            tape,
            store: &self.store,
            binder: &mut binder,
            rng: &mut self.dropout_rng,
            train,
        };
        let mut embeds = Vec::with_capacity(inputs.len());
        for (enc, &x) in self.encoders.iter().zip(&inputs) {
            embeds.push(enc.forward(&mut fwd, x)?);
        }
        let steps: Vec<NtnStepVars> = self
            .ntn_steps
            .iter()
            .map(|&(w, b, u)| NtnStepVars {
                w: fwd.binder.bind(fwd.tape, fwd.store, w),
                b: fwd.binder.bind(fwd.tape, fwd.store, b),
                u: fwd.binder.bind(fwd.tape, fwd.store, u),
            })
            .collect();
        let combined = combine_on_tape(fwd.tape, &embeds, &steps, self.method)?;
        let h = self.stack.forward(&mut fwd, combined)?;
        let logits = self.head.forward(&mut fwd, h)?;
        let logp = fwd.tape.log_softmax_rows(logits);
        Ok((logp, binder))
    }
}

impl crate::nn::ForwardModel for MultiModel {
    fn forward<'g>(&mut self, tape: &mut Tape<'g>, train: bool) -> Result<(Var, Binder)> {
        MultiModel::forward(self, tape, train)
    }

    fn store(&self) -> &ParamStore {
        MultiModel::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        MultiModel::store_mut(self)
    }

    fn norm_stats(&self) -> Vec<f64> {
        self.stack.norm_stats()
    }

    fn set_norm_stats(&mut self, stats: &[f64]) {
        self.stack.set_norm_stats(stats)
    }
}

/// Accuracy of one trained combination, averaged over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinationResult {
    pub combination: FeatureCombination,
    pub concat_method: ConcatMethod,
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Train one combination with one concatenation method over the seed set.
pub fn train_multi(
    comb: &FeatureCombination,
    method: ConcatMethod,
    data: &PreparedData,
    base_cfg: &LayerConfig,
    embed_dim: usize,
    num_bins: usize,
    seeds: &[u64],
    settings: &TrainSettings,
) -> Result<CombinationResult> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let target = Feature::from_index(comb.target)?;
    let output_col = data.features.column(target);
    let train_idx = data.masks.train_indices();
    let train_vals: Vec<f64> = train_idx.iter().map(|&i| output_col[i]).collect();
    let spec = fit_bins(&train_vals, num_bins, BinStrategy::default_for(target))?;
    let labels = apply_bins(&output_col, &spec);
    let sup = Supervision {
        labels,
        num_classes: spec.num_classes(),
        train_idx,
        val_idx: data.masks.val_indices(),
        test_idx: data.masks.test_indices(),
    };
    let n = data.graph.num_nodes();
    let columns: Result<Vec<Tensor>> = comb
        .members
        .iter()
        .map(|&i| Tensor::matrix(n, 1, data.features.column(Feature::from_index(i)?)))
        .collect();
    let columns = columns?;

    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run_seed = child_seed(
            seed,
            &[tags::COMBINATION_TASK, comb.member_mask(), comb.target as u64, method as u64],
        );
        let mut model = MultiModel::new(
            columns.clone(),
            sup.num_classes,
            method,
            base_cfg.clone(),
            embed_dim,
            run_seed,
        )?;
        let report = fit(&mut model, &data.graph, &sup, settings)?;
        runs.push(report.test_accuracy);
    }
    let (mean, std) = mean_std(&runs);
    Ok(CombinationResult {
        combination: comb.clone(),
        concat_method: method,
        mean,
        std,
        runs,
        seeds: seeds.to_vec(),
    })
}

/// Enumerate, filter against the matrix, train every survivor with every
/// requested method. Combinations run in parallel.
#[allow(clippy::too_many_arguments)]
pub fn run_combinations(
    data: &PreparedData,
    r: &CorrelationMatrix,
    target: usize,
    threshold: f64,
    methods: &[ConcatMethod],
    base_cfg: &LayerConfig,
    embed_dim: usize,
    num_bins: usize,
    seeds: &[u64],
    settings: &TrainSettings,
) -> Result<Vec<CombinationResult>> {
    let all = enumerate_combinations(crate::features::NUM_FEATURES, target)?;
    let surviving = filter_combinations(&all, r, threshold);
    let jobs: Vec<(FeatureCombination, ConcatMethod)> = surviving
        .into_iter()
        .flat_map(|c| methods.iter().map(move |&m| (c.clone(), m)))
        .collect();
    par::map_items(&jobs, |(comb, method)| {
        train_multi(comb, *method, data, base_cfg, embed_dim, num_bins, seeds, settings)
    })
    .into_iter()
    .collect()
}

/// Mean/std of result accuracies grouped by combination size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn summarize(results: &[CombinationResult]) -> Vec<KSummary> {
    let mut ks: Vec<usize> = results.iter().map(|r| r.combination.k()).collect();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let accs: Vec<f64> = results
                .iter()
                .filter(|r| r.combination.k() == k)
                .map(|r| r.mean)
                .collect();
            let (mean, std) = mean_std(&accs);
            KSummary { k, mean, std, count: accs.len() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_random_geometric;
    use crate::nn::ConvType;
    use crate::single::{prepare_node_data, Cell, MatrixMetadata, DEFAULT_SPLIT_RATIOS};
    use approx::assert_relative_eq;

    fn matrix_with(values: [[f64; 5]; 5]) -> CorrelationMatrix {
        let cells = values
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| Cell::Trained { mean: v, std: 0.0, runs: vec![v] })
                    .collect()
            })
            .collect();
        CorrelationMatrix {
            cells,
            metadata: MatrixMetadata {
                dataset: "hand".into(),
                model: LayerConfig::new(ConvType::Mlp, 1, 2),
                num_bins: 6,
                seeds: vec![0],
                settings: TrainSettings::default(),
            },
        }
    }

    #[test]
    fn five_features_give_eleven_combinations() {
        let combs = enumerate_combinations(5, 1).unwrap();
        assert_eq!(combs.len(), 11);
        assert!(combs.iter().all(|c| !c.members.contains(&1)));
        assert!(combs.iter().all(|c| c.members.windows(2).all(|w| w[0] < w[1])));
        let sizes: Vec<usize> = combs.iter().map(|c| c.k()).collect();
        assert_eq!(sizes, [2, 2, 2, 2, 2, 2, 3, 3, 3, 3, 4]);
        // Size-2 block is lexicographic over the remaining features.
        assert_eq!(combs[0].members, [0, 2]);
        assert_eq!(combs[5].members, [3, 4]);
        assert_eq!(combs[10].members, [0, 2, 3, 4]);
    }

    #[test]
    fn three_features_give_one_combination() {
        let combs = enumerate_combinations(3, 2).unwrap();
        assert_eq!(combs.len(), 1);
        assert_eq!(combs[0].members, [0, 1]);
    }

    #[test]
    fn enumeration_guards() {
        assert!(enumerate_combinations(17, 0).is_err());
        assert!(enumerate_combinations(5, 5).is_err());
    }

    #[test]
    fn extreme_thresholds() {
        let combs = enumerate_combinations(5, 1).unwrap();
        let r = matrix_with([[0.5; 5]; 5]);
        assert!(filter_combinations(&combs, &r, 0.0).is_empty());
        assert_eq!(filter_combinations(&combs, &r, 1.0).len(), 11);
    }

    #[test]
    fn one_hot_pair_removes_every_containing_combination() {
        let combs = enumerate_combinations(5, 1).unwrap();
        let mut values = [[0.5; 5]; 5];
        values[2][3] = 0.9;
        let r = matrix_with(values);
        let kept = filter_combinations(&combs, &r, 0.85);
        assert!(kept.iter().all(|c| !(c.members.contains(&2) && c.members.contains(&3))));
        // Pairs without (2,3) together survive: (0,2),(0,3),(0,4),(2,4),(3,4) and (0,2,4),(0,3,4).
        assert_eq!(kept.len(), 7);
    }

    #[test]
    fn excluded_cells_count_as_redundant() {
        let combs = enumerate_combinations(5, 1).unwrap();
        let mut r = matrix_with([[0.5; 5]; 5]);
        r.cells[2][3] = Cell::Excluded { reason: "degenerate".into() };
        let kept = filter_combinations(&combs, &r, 0.85);
        assert!(kept.iter().all(|c| !(c.members.contains(&2) && c.members.contains(&3))));
    }

    #[test]
    fn simple_concatenation_examples() {
        assert_eq!(concat_simple(&[vec![1.0, 2.0]]), [1.0, 2.0]);
        assert_eq!(concat_simple(&[vec![1.0, 0.0], vec![0.0, 1.0]]), [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn bilinear_with_zero_params_collapses_to_zero() {
        let params = NtnParams {
            d: 2,
            steps: vec![NtnStep {
                w: Tensor::zeros(vec![4, 2, 2]),
                b: Tensor::zeros(vec![4]),
                u: Tensor::zeros(vec![4, 4]),
            }],
        };
        let out = concat_bilinear(&[vec![0.3, -0.4], vec![1.0, 2.0]], &params).unwrap();
        assert_eq!(out, [0.0; 4]);
    }

    #[test]
    fn single_embedding_passes_through() {
        let params = NtnParams { d: 3, steps: vec![] };
        let e = vec![0.1, 0.2, 0.3];
        assert_eq!(concat_bilinear(&[e.clone()], &params).unwrap(), e);
        assert_eq!(concat_ntn(&[e.clone()], &params).unwrap(), e);
    }

    #[test]
    fn reducing_ntn_is_tanh_of_simple_concat_at_k2() {
        let d = 4;
        let params = NtnParams::reducing(d, 2);
        let e1: Vec<f64> = (0..d).map(|i| 0.3 * i as f64 - 0.5).collect();
        let e2: Vec<f64> = (0..d).map(|i| 0.1 * i as f64 + 0.2).collect();
        let ntn = concat_ntn(&[e1.clone(), e2.clone()], &params).unwrap();
        let simple = concat_simple(&[e1, e2]);
        assert_eq!(ntn.len(), 2 * d);
        for (a, s) in ntn.iter().zip(simple) {
            assert!((a - s.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn ntn_output_lengths_scale_with_k() {
        let d = 5;
        for k in 2..=4 {
            let params = NtnParams::seeded(d, k, 7);
            let embeds: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..d).map(|j| ((i * d + j) as f64 * 0.17).sin()).collect())
                .collect();
            assert_eq!(concat_ntn(&embeds, &params).unwrap().len(), k * d);
            assert_eq!(concat_bilinear(&embeds, &params).unwrap().len(), k * d);
            assert_eq!(concat_simple(&embeds).len(), k * d);
        }
    }

    #[test]
    fn ntn_k2_matches_naive_contraction_oracle() {
        let d = 3;
        let params = NtnParams::seeded(d, 2, 42);
        let e1 = vec![0.7, -0.2, 0.5];
        let e2 = vec![-0.3, 0.9, 0.1];
        let out = concat_ntn(&[e1.clone(), e2.clone()], &params).unwrap();

        // Independent reimplementation with explicit loops.
        let td = 2 * d;
        let step = &params.steps[0];
        let mut act = vec![0.0; td];
        for s in 0..td {
            let mut bil = 0.0;
            for i in 0..d {
                for j in 0..d {
                    bil += e1[i] * step.w.data()[s * d * d + i * d + j] * e2[j];
                }
            }
            let cat = if s < d { e1[s] } else { e2[s - d] };
            act[s] = (bil + cat + step.b.data()[s]).tanh();
        }
        let mut expect = vec![0.0; td];
        for s in 0..td {
            for t in 0..td {
                // Row-vector convention: out = act · u.
                expect[t] += act[s] * step.u.data()[s * td + t];
            }
        }
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn ntn_k3_matches_recursive_reduction() {
        let d = 2;
        let params = NtnParams::seeded(d, 3, 9);
        let e1 = vec![0.4, -0.6];
        let e2 = vec![0.2, 0.8];
        let e3 = vec![-0.5, 0.3];
        let full = concat_ntn(&[e1.clone(), e2.clone(), e3.clone()], &params).unwrap();
        // Two explicit applications of the one-step recurrence.
        let g2 = concat_ntn(&[e1, e2], &NtnParams { d, steps: vec![params.steps[0].clone()] }).unwrap();
        let step2 = NtnStep {
            w: params.steps[1].w.clone(),
            b: params.steps[1].b.clone(),
            u: params.steps[1].u.clone(),
        };
        // Feed g2 as the running vector: one step of the t=3 recurrence.
        let mut tape = Tape::new();
        let g = tape.leaf(Tensor::matrix(1, g2.len(), g2).unwrap());
        let e = tape.leaf(Tensor::matrix(1, d, e3).unwrap());
        let sv = NtnStepVars {
            w: tape.leaf(step2.w),
            b: tape.leaf(step2.b),
            u: tape.leaf(step2.u),
        };
        let out = combine_on_tape(&mut tape, &[g, e], &[sv], ConcatMethod::Ntn).unwrap();
        for (a, b) in full.iter().zip(tape.value(out).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn summarize_groups_by_size() {
        let mk = |members: Vec<usize>, acc: f64| CombinationResult {
            combination: FeatureCombination { members, target: 1 },
            concat_method: ConcatMethod::Simple,
            mean: acc,
            std: 0.0,
            runs: vec![acc],
            seeds: vec![0],
        };
        let results = vec![mk(vec![0, 2], 0.6), mk(vec![0, 3], 0.8), mk(vec![0, 2, 3], 0.5)];
        let summary = summarize(&results);
        assert_eq!(summary.len(), 2);
        assert_eq!(summary[0].k, 2);
        assert_eq!(summary[0].count, 2);
        assert_relative_eq!(summary[0].mean, 0.7, epsilon = 1e-12);
        assert_relative_eq!(summary[0].std, 0.1, epsilon = 1e-12);
        assert_eq!(summary[1].k, 3);
        assert_eq!(summary[1].std, 0.0);
    }

    #[test]
    fn multi_training_runs_all_methods_deterministically() {
        let g = generate_random_geometric(80, 0.25, 3).unwrap();
        let data = prepare_node_data(&g, DEFAULT_SPLIT_RATIOS, 2).unwrap();
        let comb = FeatureCombination { members: vec![1, 3], target: 4 };
        let mut cfg = LayerConfig::new(ConvType::Sage, 1, 2);
        cfg.hidden_dim = 8;
        let settings = TrainSettings { max_epochs: 10, patience: 10, ..TrainSettings::default() };
        for method in ConcatMethod::ALL {
            let a = train_multi(&comb, method, &data, &cfg, 4, 4, &[1], &settings).unwrap();
            let b = train_multi(&comb, method, &data, &cfg, 4, 4, &[1], &settings).unwrap();
            assert_eq!(a.runs, b.runs, "{method} not deterministic");
            assert!((0.0..=1.0).contains(&a.mean));
            assert_eq!(a.seeds, [1]);
        }
    }

    #[test]
    fn run_combinations_counts_rows() {
        let g = generate_random_geometric(60, 0.3, 5).unwrap();
        let data = prepare_node_data(&g, DEFAULT_SPLIT_RATIOS, 2).unwrap();
        let r = matrix_with([[0.5; 5]; 5]);
        let mut cfg = LayerConfig::new(ConvType::Mlp, 1, 2);
        cfg.hidden_dim = 8;
        let settings = TrainSettings { max_epochs: 2, patience: 2, ..TrainSettings::default() };
        let results = run_combinations(
            &data,
            &r,
            3,
            0.85,
            &[ConcatMethod::Simple, ConcatMethod::Ntn],
            &cfg,
            4,
            4,
            &[1],
            &settings,
        )
        .unwrap();
        // 11 surviving combinations × 2 methods.
        assert_eq!(results.len(), 22);
    }
}

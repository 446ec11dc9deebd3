//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Each operation pushes one entry holding its forward value plus whatever
//! backward needs (op inputs by index, saved masks/attention weights). The
//! tape is rebuilt every training step; parameters live outside it (see
//! `nn::params`) and are bound as leaves per step. Entries are created in
//! topological order by construction, so backward is a single reverse scan.
//!
//! Graph-aware ops (`neighbor_sum`, `gcn_propagate`, ...) read the adjacency
//! from the tape's graph context, set once at construction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// Handle to a tape entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(usize, usize),
    /// [n,c] plus a length-c bias row.
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Matmul(usize, usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Tanh(usize),
    ConcatCols(Vec<usize>),
    SumAll(usize),
    MeanAll(usize),
    LogSoftmaxRows(usize),
    /// Mask entries are 0 or 1/(1−p), folded into one multiplier.
    Dropout { x: usize, mask: Vec<f64> },
    /// Train mode normalizes with batch statistics; eval mode treats the
    /// supplied running statistics as constants.
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    /// Mean of −logp[row, target] over the listed rows.
    NllLoss { logp: usize, targets: Vec<usize>, rows: Vec<usize> },
    NeighborSum(usize),
    NeighborMean(usize),
    /// Symmetric-normalized propagation with self-loops (the GCN operator).
    GcnPropagate(usize),
    /// Attention aggregation over {u} ∪ N(u). `alpha` and `z` (pre-leaky-relu
    /// scores) are saved per (u, v∈S(u)) in scan order: u first, then sorted
    /// neighbors.
    GatAggregate { h: usize, score_l: usize, score_r: usize, slope: f64, alpha: Vec<f64>, z: Vec<f64> },
    /// y[r,s] = Σ_{i,j} g[r,i]·w[s,i,j]·e[r,j] with w of shape [out, gd, ed].
    Bilinear { g: usize, w: usize, e: usize },
    /// Per-segment mean of rows; segment ids map each row to 0..num_segments.
    SegmentMean { x: usize, segments: Vec<usize> },
}

struct Entry {
    value: Tensor,
    op: Op,
}

pub struct Tape<'g> {
    graph: Option<&'g Graph>,
    entries: Vec<Entry>,
}

/// Gradients of one scalar output with respect to every tape entry.
pub struct Grads {
    grads: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, var: Var) -> &[f64] {
        &self.grads[var.0]
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Tape { graph: None, entries: Vec::new() }
    }

    pub fn with_graph(graph: &'g Graph) -> Self {
        Tape { graph: Some(graph), entries: Vec::new() }
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.entries[var.0].value
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.entries.push(Entry { value, op });
        Var(self.entries.len() - 1)
    }

    fn graph(&self, op: &'static str) -> Result<&'g Graph> {
        self.graph.ok_or_else(|| Error::InvalidConfig(format!("{op} needs a tape with a graph context")))
    }

    fn check_rows(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let g = self.graph(op)?;
        let t = self.value(x);
        if t.rows() != g.num_nodes() {
            return Err(shape_err(op, t.shape(), &[g.num_nodes(), t.cols()]));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let cols = tx.cols();
        if tb.len() != cols {
            return Err(shape_err("add_bias", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for r in 0..tx.rows() {
            for c in 0..cols {
                data[r * cols + c] += tb.data()[c];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddBias(x.0, bias.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| c * v).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, Op::Scale(x.0, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = (ta.rows(), ta.cols());
        let (k2, m) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(shape_err("matmul", ta.shape(), tb.shape()));
        }
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for kk in 0..k {
                let aik = ta.data()[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let brow = &tb.data()[kk * m..(kk + 1) * m];
                let drow = &mut data[i * m..(i + 1) * m];
                for j in 0..m {
                    drow[j] += aik * brow[j];
                }
            }
        }
        Ok(self.push(Tensor::matrix(n, m, data)?, Op::Matmul(a.0, b.0)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, Op::Relu(x.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, Op::LeakyRelu(x.0, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.tanh()).collect();
        let value = Tensor::new(t.shape().to_vec(), data).unwrap();
        self.push(value, Op::Tanh(x.0))
    }

    /// Concatenates matrices along columns; all inputs need equal row counts.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidConfig("concat_cols needs at least one input".into()));
        }
        let rows = self.value(xs[0]).rows();
        let mut total_cols = 0;
        for &x in xs {
            let t = self.value(x);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(xs[0]).shape(), t.shape()));
            }
            total_cols += t.cols();
        }
        let mut data = vec![0.0; rows * total_cols];
        let mut base = 0;
        for &x in xs {
            let t = self.value(x);
            let c = t.cols();
            for r in 0..rows {
                data[r * total_cols + base..r * total_cols + base + c]
                    .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
            base += c;
        }
        Ok(self.push(Tensor::matrix(rows, total_cols, data)?, Op::ConcatCols(xs.iter().map(|v| v.0).collect())))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::from_vec(vec![s]), Op::SumAll(x.0))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::from_vec(vec![s]), Op::MeanAll(x.0))
    }

    /// Row-wise log-softmax with max subtraction for stability.
    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (n, c) = (t.rows(), t.cols());
        let mut data = vec![0.0; n * c];
        for r in 0..n {
            let row = t.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                data[r * c + j] = row[j] - lse;
            }
        }
        let value = Tensor::matrix(n, c, data).unwrap();
        self.push(value, Op::LogSoftmaxRows(x.0))
    }

    /// Inverted dropout. Identity (no tape entry) when not training or p = 0.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..t.len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { x: x.0, mask }))
    }

    /// Batch normalization over rows, per column. Returns the output plus
    /// the batch mean/var so the caller can maintain running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let t = self.value(x);
        let (n, c) = (t.rows(), t.cols());
        self.check_bn_params("batchnorm", c, gamma, beta)?;
        if n == 0 {
            return Err(Error::InvalidConfig("batchnorm over zero rows".into()));
        }
        let t = self.value(x);
        let mut mean = vec![0.0; c];
        for r in 0..n {
            for j in 0..c {
                mean[j] += t.data()[r * c + j];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; c];
        for r in 0..n {
            for j in 0..c {
                let d = t.data()[r * c + j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * c];
        for r in 0..n {
            for j in 0..c {
                xhat[r * c + j] = (t.data()[r * c + j] - mean[j]) * inv_std[j];
            }
        }
        let gamma_t = self.value(gamma).data().to_vec();
        let beta_t = self.value(beta).data().to_vec();
        let mut data = vec![0.0; n * c];
        for r in 0..n {
            for j in 0..c {
                data[r * c + j] = xhat[r * c + j] * gamma_t[j] + beta_t[j];
            }
        }
        let value = Tensor::matrix(n, c, data)?;
        let out = self.push(
            value,
            Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std, train: true },
        );
        Ok((out, mean, var))
    }

    /// Eval-mode batch normalization with fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let t = self.value(x);
        let (n, c) = (t.rows(), t.cols());
        self.check_bn_params("batchnorm", c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(shape_err("batchnorm", &[running_mean.len()], &[c]));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let t = self.value(x);
        let mut xhat = vec![0.0; n * c];
        for r in 0..n {
            for j in 0..c {
                xhat[r * c + j] = (t.data()[r * c + j] - running_mean[j]) * inv_std[j];
            }
        }
        let gamma_t = self.value(gamma).data().to_vec();
        let beta_t = self.value(beta).data().to_vec();
        let mut data = vec![0.0; n * c];
        for r in 0..n {
            for j in 0..c {
                data[r * c + j] = xhat[r * c + j] * gamma_t[j] + beta_t[j];
            }
        }
        let value = Tensor::matrix(n, c, data)?;
        Ok(self.push(value, Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std, train: false }))
    }

    fn check_bn_params(&self, op: &'static str, c: usize, gamma: Var, beta: Var) -> Result<()> {
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err(op, self.value(gamma).shape(), &[c]));
        }
        Ok(())
    }

    /// Mean NLL over the listed rows: −(1/|rows|)·Σ logp[rows[k], targets[k]].
    pub fn nll_loss(&mut self, logp: Var, targets: &[usize], rows: &[usize]) -> Result<Var> {
        let t = self.value(logp);
        let c = t.cols();
        if targets.len() != rows.len() {
            return Err(shape_err("nll_loss", &[targets.len()], &[rows.len()]));
        }
        if rows.is_empty() {
            return Err(Error::InvalidConfig("nll_loss over zero rows".into()));
        }
        let mut total = 0.0;
        for (&r, &tgt) in rows.iter().zip(targets) {
            if r >= t.rows() || tgt >= c {
                return Err(Error::InvalidConfig(format!(
                    "nll_loss index (row {r}, class {tgt}) outside {}×{c}",
                    t.rows()
                )));
            }
            total -= t.at(r, tgt);
        }
        let value = Tensor::from_vec(vec![total / rows.len() as f64]);
        Ok(self.push(value, Op::NllLoss { logp: logp.0, targets: targets.to_vec(), rows: rows.to_vec() }))
    }

    /// y[u] = Σ_{v∈N(u)} x[v]. Self-adjoint on undirected graphs.
    pub fn neighbor_sum(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.check_rows("neighbor_sum", x)?;
        let g = self.graph("neighbor_sum")?;
        let t = self.value(x);
        let mut data = vec![0.0; n * c];
        for u in 0..n {
            for &v in g.neighbors(u) {
                for j in 0..c {
                    data[u * c + j] += t.data()[v * c + j];
                }
            }
        }
        Ok(self.push(Tensor::matrix(n, c, data)?, Op::NeighborSum(x.0)))
    }

    /// y[u] = mean_{v∈N(u)} x[v], with the empty mean defined as 0.
    pub fn neighbor_mean(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.check_rows("neighbor_mean", x)?;
        let g = self.graph("neighbor_mean")?;
        let t = self.value(x);
        let mut data = vec![0.0; n * c];
        for u in 0..n {
            let deg = g.degree(u);
            if deg == 0 {
                continue;
            }
            for &v in g.neighbors(u) {
                for j in 0..c {
                    data[u * c + j] += t.data()[v * c + j];
                }
            }
            for j in 0..c {
                data[u * c + j] /= deg as f64;
            }
        }
        Ok(self.push(Tensor::matrix(n, c, data)?, Op::NeighborMean(x.0)))
    }

    /// y = D̂^{−1/2}(A+I)D̂^{−1/2}·x with D̂ = deg+1 (GCN propagation).
    pub fn gcn_propagate(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.check_rows("gcn_propagate", x)?;
        let g = self.graph("gcn_propagate")?;
        let t = self.value(x);
        let data = gcn_apply(g, t.data(), n, c);
        Ok(self.push(Tensor::matrix(n, c, data)?, Op::GcnPropagate(x.0)))
    }

    /// Single-head attention aggregation over S(u) = {u} ∪ N(u), with raw
    /// scores sl[u] + sr[v] passed through leaky-relu then softmax.
    pub fn gat_aggregate(&mut self, h: Var, score_l: Var, score_r: Var, slope: f64) -> Result<Var> {
        let (n, c) = self.check_rows("gat_aggregate", h)?;
        let g = self.graph("gat_aggregate")?;
        for s in [score_l, score_r] {
            let t = self.value(s);
            if t.rows() != n || t.cols() != 1 {
                return Err(shape_err("gat_aggregate", t.shape(), &[n, 1]));
            }
        }
        let th = self.value(h).data();
        let sl = self.value(score_l).data();
        let sr = self.value(score_r).data();

        let total: usize = (0..n).map(|u| g.degree(u) + 1).sum();
        let mut alpha = Vec::with_capacity(total);
        let mut z = Vec::with_capacity(total);
        let mut data = vec![0.0; n * c];
        for u in 0..n {
            // Scan order: u itself, then sorted neighbors.
            let mut scores = Vec::with_capacity(g.degree(u) + 1);
            for v in std::iter::once(u).chain(g.neighbors(u).iter().copied()) {
                let zv = sl[u] + sr[v];
                z.push(zv);
                scores.push(if zv > 0.0 { zv } else { slope * zv });
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for s in &mut scores {
                *s = (*s - max).exp();
                denom += *s;
            }
            for (k, v) in std::iter::once(u).chain(g.neighbors(u).iter().copied()).enumerate() {
                let a = scores[k] / denom;
                alpha.push(a);
                for j in 0..c {
                    data[u * c + j] += a * th[v * c + j];
                }
            }
        }
        let value = Tensor::matrix(n, c, data)?;
        Ok(self.push(value, Op::GatAggregate { h: h.0, score_l: score_l.0, score_r: score_r.0, slope, alpha, z }))
    }

    /// Per-row bilinear form: y[r,s] = Σ_{i,j} g[r,i]·w[s,i,j]·e[r,j].
    pub fn bilinear(&mut self, g: Var, w: Var, e: Var) -> Result<Var> {
        let (tg, tw, te) = (self.value(g), self.value(w), self.value(e));
        if tw.shape().len() != 3 {
            return Err(shape_err("bilinear", tw.shape(), &[0, tg.cols(), te.cols()]));
        }
        let (out, gd, ed) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        let n = tg.rows();
        if tg.cols() != gd || te.cols() != ed || te.rows() != n {
            return Err(shape_err("bilinear", &[n, tg.cols(), te.cols()], &[te.rows(), gd, ed]));
        }
        let mut data = vec![0.0; n * out];
        for r in 0..n {
            let gr = &tg.data()[r * gd..(r + 1) * gd];
            let er = &te.data()[r * ed..(r + 1) * ed];
            for s in 0..out {
                let ws = &tw.data()[s * gd * ed..(s + 1) * gd * ed];
                let mut acc = 0.0;
                for i in 0..gd {
                    let gi = gr[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let wrow = &ws[i * ed..(i + 1) * ed];
                    let mut inner = 0.0;
                    for j in 0..ed {
                        inner += wrow[j] * er[j];
                    }
                    acc += gi * inner;
                }
                data[r * out + s] = acc;
            }
        }
        Ok(self.push(Tensor::matrix(n, out, data)?, Op::Bilinear { g: g.0, w: w.0, e: e.0 }))
    }

    /// Mean of rows per segment: y[s] = mean_{r: segments[r]=s} x[r].
    /// Every segment in 0..num_segments must own at least one row.
    pub fn segment_mean(&mut self, x: Var, segments: &[usize], num_segments: usize) -> Result<Var> {
        let t = self.value(x);
        let (n, c) = (t.rows(), t.cols());
        if segments.len() != n {
            return Err(shape_err("segment_mean", &[segments.len()], &[n]));
        }
        let mut counts = vec![0usize; num_segments];
        for &s in segments {
            if s >= num_segments {
                return Err(Error::InvalidConfig(format!("segment id {s} outside 0..{num_segments}")));
            }
            counts[s] += 1;
        }
        if let Some(s) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidConfig(format!("segment {s} has no rows")));
        }
        let mut data = vec![0.0; num_segments * c];
        for (r, &s) in segments.iter().enumerate() {
            for j in 0..c {
                data[s * c + j] += t.data()[r * c + j];
            }
        }
        for (s, &cnt) in counts.iter().enumerate() {
            for j in 0..c {
                data[s * c + j] /= cnt as f64;
            }
        }
        let value = Tensor::matrix(num_segments, c, data)?;
        Ok(self.push(value, Op::SegmentMean { x: x.0, segments: segments.to_vec() }))
    }

    /// Backpropagates from a scalar loss, returning gradients for every
    /// entry on the tape.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", self.value(loss).shape(), &[1]));
        }
        let mut grads: Vec<Vec<f64>> =
            self.entries.iter().map(|e| vec![0.0; e.value.len()]).collect();
        grads[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            // Split off the gradient of the current entry so inputs (always
            // earlier on the tape) can be mutated.
            let (head, tail) = grads.split_at_mut(idx);
            let gy = &tail[0];
            if gy.iter().all(|&g| g == 0.0) {
                continue;
            }
            let entry = &self.entries[idx];
            match &entry.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for (g, &u) in head[*a].iter_mut().zip(gy.iter()) {
                        *g += u;
                    }
                    for (g, &u) in head[*b].iter_mut().zip(gy.iter()) {
                        *g += u;
                    }
                }
                Op::AddBias(x, bias) => {
                    let cols = self.entries[*bias].value.len();
                    for (g, &u) in head[*x].iter_mut().zip(gy.iter()) {
                        *g += u;
                    }
                    for (k, &u) in gy.iter().enumerate() {
                        head[*bias][k % cols] += u;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.entries[*a].value.data(), self.entries[*b].value.data());
                    for k in 0..gy.len() {
                        head[*a][k] += gy[k] * vb[k];
                    }
                    for k in 0..gy.len() {
                        head[*b][k] += gy[k] * va[k];
                    }
                }
                Op::Scale(x, c) => {
                    for (g, &u) in head[*x].iter_mut().zip(gy.iter()) {
                        *g += c * u;
                    }
                }
                Op::Matmul(a, b) => {
                    let ta = &self.entries[*a].value;
                    let tb = &self.entries[*b].value;
                    let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                    // dA = dY·Bᵀ
                    for i in 0..n {
                        for j in 0..m {
                            let u = gy[i * m + j];
                            if u == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                head[*a][i * k + kk] += u * tb.data()[kk * m + j];
                            }
                        }
                    }
                    // dB = Aᵀ·dY
                    for kk in 0..k {
                        for i in 0..n {
                            let av = ta.data()[i * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                head[*b][kk * m + j] += av * gy[i * m + j];
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let vx = self.entries[*x].value.data();
                    for k in 0..gy.len() {
                        if vx[k] > 0.0 {
                            head[*x][k] += gy[k];
                        }
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let vx = self.entries[*x].value.data();
                    for k in 0..gy.len() {
                        head[*x][k] += gy[k] * if vx[k] > 0.0 { 1.0 } else { *slope };
                    }
                }
                Op::Tanh(x) => {
                    let vy = entry.value.data();
                    for k in 0..gy.len() {
                        head[*x][k] += gy[k] * (1.0 - vy[k] * vy[k]);
                    }
                }
                Op::ConcatCols(xs) => {
                    let rows = entry.value.rows();
                    let total = entry.value.cols();
                    let mut base = 0;
                    for &x in xs {
                        let c = self.entries[x].value.cols();
                        for r in 0..rows {
                            for j in 0..c {
                                head[x][r * c + j] += gy[r * total + base + j];
                            }
                        }
                        base += c;
                    }
                }
                Op::SumAll(x) => {
                    for g in head[*x].iter_mut() {
                        *g += gy[0];
                    }
                }
                Op::MeanAll(x) => {
                    let scale = 1.0 / self.entries[*x].value.len() as f64;
                    for g in head[*x].iter_mut() {
                        *g += gy[0] * scale;
                    }
                }
                Op::LogSoftmaxRows(x) => {
                    let vy = entry.value.data();
                    let c = entry.value.cols();
                    for r in 0..entry.value.rows() {
                        let row_sum: f64 = gy[r * c..(r + 1) * c].iter().sum();
                        for j in 0..c {
                            head[*x][r * c + j] += gy[r * c + j] - vy[r * c + j].exp() * row_sum;
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    for k in 0..gy.len() {
                        head[*x][k] += gy[k] * mask[k];
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                    let c = inv_std.len();
                    let n = entry.value.rows();
                    let gamma_v = self.entries[*gamma].value.data();
                    for j in 0..c {
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for r in 0..n {
                            sum_dy += gy[r * c + j];
                            sum_dy_xhat += gy[r * c + j] * xhat[r * c + j];
                        }
                        head[*beta][j] += sum_dy;
                        head[*gamma][j] += sum_dy_xhat;
                        if *train {
                            let coeff = gamma_v[j] * inv_std[j] / n as f64;
                            for r in 0..n {
                                head[*x][r * c + j] += coeff
                                    * (n as f64 * gy[r * c + j] - sum_dy - xhat[r * c + j] * sum_dy_xhat);
                            }
                        } else {
                            let coeff = gamma_v[j] * inv_std[j];
                            for r in 0..n {
                                head[*x][r * c + j] += coeff * gy[r * c + j];
                            }
                        }
                    }
                }
                Op::NllLoss { logp, targets, rows } => {
                    let c = self.entries[*logp].value.cols();
                    let scale = gy[0] / rows.len() as f64;
                    for (&r, &t) in rows.iter().zip(targets) {
                        head[*logp][r * c + t] -= scale;
                    }
                }
                Op::NeighborSum(x) => {
                    let g = self.graph("neighbor_sum")?;
                    let c = entry.value.cols();
                    for u in 0..g.num_nodes() {
                        for &v in g.neighbors(u) {
                            for j in 0..c {
                                head[*x][v * c + j] += gy[u * c + j];
                            }
                        }
                    }
                }
                Op::NeighborMean(x) => {
                    let g = self.graph("neighbor_mean")?;
                    let c = entry.value.cols();
                    for u in 0..g.num_nodes() {
                        let deg = g.degree(u);
                        if deg == 0 {
                            continue;
                        }
                        let inv = 1.0 / deg as f64;
                        for &v in g.neighbors(u) {
                            for j in 0..c {
                                head[*x][v * c + j] += gy[u * c + j] * inv;
                            }
                        }
                    }
                }
                Op::GcnPropagate(x) => {
                    // The propagation matrix is symmetric, so backward is the
                    // same operator applied to the upstream gradient.
                    let g = self.graph("gcn_propagate")?;
                    let c = entry.value.cols();
                    let back = gcn_apply(g, gy, g.num_nodes(), c);
                    for (gv, b) in head[*x].iter_mut().zip(back) {
                        *gv += b;
                    }
                }
                Op::GatAggregate { h, score_l, score_r, slope, alpha, z } => {
                    let g = self.graph("gat_aggregate")?;
                    let c = entry.value.cols();
                    let vh = self.entries[*h].value.data();
                    let mut pos = 0usize;
                    for u in 0..g.num_nodes() {
                        let span = g.degree(u) + 1;
                        let a = &alpha[pos..pos + span];
                        let zz = &z[pos..pos + span];
                        // dα_uv = dy[u]·h[v]; dh[v] += α_uv·dy[u]
                        let mut dalpha = vec![0.0; span];
                        for (k, v) in std::iter::once(u).chain(g.neighbors(u).iter().copied()).enumerate() {
                            let mut acc = 0.0;
                            for j in 0..c {
                                acc += gy[u * c + j] * vh[v * c + j];
                                head[*h][v * c + j] += a[k] * gy[u * c + j];
                            }
                            dalpha[k] = acc;
                        }
                        // Softmax then leaky-relu backward.
                        let dot: f64 = a.iter().zip(&dalpha).map(|(x, y)| x * y).sum();
                        for (k, v) in std::iter::once(u).chain(g.neighbors(u).iter().copied()).enumerate() {
                            let de = a[k] * (dalpha[k] - dot);
                            let dz = de * if zz[k] > 0.0 { 1.0 } else { *slope };
                            head[*score_l][u] += dz;
                            head[*score_r][v] += dz;
                        }
                        pos += span;
                    }
                }
                Op::Bilinear { g, w, e } => {
                    let tg = &self.entries[*g].value;
                    let tw = &self.entries[*w].value;
                    let te = &self.entries[*e].value;
                    let (out, gd, ed) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
                    for r in 0..tg.rows() {
                        let gr = &tg.data()[r * gd..(r + 1) * gd];
                        let er = &te.data()[r * ed..(r + 1) * ed];
                        for s in 0..out {
                            let u = gy[r * out + s];
                            if u == 0.0 {
                                continue;
                            }
                            let ws = &tw.data()[s * gd * ed..(s + 1) * gd * ed];
                            for i in 0..gd {
                                let wrow = &ws[i * ed..(i + 1) * ed];
                                let mut inner = 0.0;
                                for j in 0..ed {
                                    inner += wrow[j] * er[j];
                                    head[*w][s * gd * ed + i * ed + j] += u * gr[i] * er[j];
                                    head[*e][r * ed + j] += u * gr[i] * wrow[j];
                                }
                                head[*g][r * gd + i] += u * inner;
                            }
                        }
                    }
                }
                Op::SegmentMean { x, segments } => {
                    let c = entry.value.cols();
                    let num_segments = entry.value.rows();
                    let mut counts = vec![0usize; num_segments];
                    for &s in segments {
                        counts[s] += 1;
                    }
                    for (r, &s) in segments.iter().enumerate() {
                        let inv = 1.0 / counts[s] as f64;
                        for j in 0..c {
                            head[*x][r * c + j] += gy[s * c + j] * inv;
                        }
                    }
                }
            }
        }
        Ok(Grads { grads })
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Dense application of the symmetric-normalized GCN operator to a row-major
/// [n, c] buffer. Shared by forward and backward.
fn gcn_apply(g: &Graph, x: &[f64], n: usize, c: usize) -> Vec<f64> {
    let norm: Vec<f64> = (0..n).map(|u| 1.0 / ((g.degree(u) + 1) as f64).sqrt()).collect();
    let mut out = vec![0.0; n * c];
    for u in 0..n {
        for j in 0..c {
            out[u * c + j] = norm[u] * norm[u] * x[u * c + j];
        }
        for &v in g.neighbors(u) {
            let w = norm[u] * norm[v];
            for j in 0..c {
                out[u * c + j] += w * x[v * c + j];
            }
        }
    }
    out
}

//! Model assembly: a configurable stack of graph convolutions followed by an
//! MLP head with a log-softmax output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm, Fwd, GatConv, GcnConv, GinConv, Linear, Mlp2, SageConv};
use crate::nn::params::{Binder, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::seeds::{child_seed, tags};
use crate::tensor::Tensor;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_DEPTH: usize = 2;

/// Which message-passing operator each conv block uses. `Mlp` skips message
/// passing entirely and applies the same per-node linear map, which serves as
/// the structure-blind baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvType {
    Gcn,
    Gin,
    Sage,
    Gat,
    Mlp,
}

impl ConvType {
    pub const ALL: [ConvType; 5] = [ConvType::Gcn, ConvType::Gin, ConvType::Sage, ConvType::Gat, ConvType::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ConvType::Gcn => "gcn",
            ConvType::Gin => "gin",
            ConvType::Sage => "sage",
            ConvType::Gat => "gat",
            ConvType::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for ConvType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ConvType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(ConvType::Gcn),
            "gin" => Ok(ConvType::Gin),
            "sage" | "graphsage" => Ok(ConvType::Sage),
            "gat" => Ok(ConvType::Gat),
            "mlp" => Ok(ConvType::Mlp),
            other => Err(Error::InvalidConfig(format!(
                "unknown conv type '{other}' (expected gcn, gin, sage, gat or mlp)"
            ))),
        }
    }
}

/// Shape of one model: conv stack plus head. `depth` counts conv blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerConfig {
    pub conv_type: ConvType,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub depth: usize,
    pub dropout_p: f64,
    pub use_batchnorm: bool,
    pub use_skip: bool,
}

impl LayerConfig {
    pub fn new(conv_type: ConvType, in_dim: usize, out_dim: usize) -> Self {
        LayerConfig {
            conv_type,
            in_dim,
            hidden_dim: DEFAULT_HIDDEN,
            out_dim,
            depth: DEFAULT_DEPTH,
            dropout_p: 0.0,
            use_batchnorm: false,
            use_skip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::InvalidConfig("depth must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
enum ConvBlock {
    Gcn(GcnConv),
    Gin(GinConv),
    Sage(SageConv),
    Gat(GatConv),
    Mlp(Linear),
}

impl ConvBlock {
    fn forward(&self, fwd: &mut Fwd, x: Var) -> Result<Var> {
        match self {
            ConvBlock::Gcn(c) => c.forward(fwd, x),
            ConvBlock::Gin(c) => c.forward(fwd, x),
            ConvBlock::Sage(c) => c.forward(fwd, x),
            ConvBlock::Gat(c) => c.forward(fwd, x),
            ConvBlock::Mlp(c) => c.forward(fwd, x),
        }
    }
}

struct Block {
    conv: ConvBlock,
    bn: Option<BatchNorm>,
    in_dim: usize,
    out_dim: usize,
}

/// `depth` conv blocks mapping in_dim → hidden → … → hidden. Each block runs
/// conv, optional batchnorm, relu, dropout, then adds a residual connection
/// when enabled and the block preserves width.
pub struct ConvStack {
    blocks: Vec<Block>,
    dropout_p: f64,
    use_skip: bool,
}

impl ConvStack {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &LayerConfig, prefix: &str) -> Self {
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let in_dim = if i == 0 { cfg.in_dim } else { cfg.hidden_dim };
            let out_dim = cfg.hidden_dim;
            let name = format!("{prefix}.conv{i}");
            let conv = match cfg.conv_type {
                ConvType::Gcn => ConvBlock::Gcn(GcnConv::new(store, rng, &name, in_dim, out_dim)),
                ConvType::Gin => ConvBlock::Gin(GinConv::new(store, rng, &name, in_dim, out_dim)),
                ConvType::Sage => ConvBlock::Sage(SageConv::new(store, rng, &name, in_dim, out_dim)),
                ConvType::Gat => ConvBlock::Gat(GatConv::new(store, rng, &name, in_dim, out_dim)),
                ConvType::Mlp => ConvBlock::Mlp(Linear::new(store, rng, &name, in_dim, out_dim)),
            };
            let bn = cfg
                .use_batchnorm
                .then(|| BatchNorm::new(store, &format!("{prefix}.bn{i}"), out_dim));
            blocks.push(Block { conv, bn, in_dim, out_dim });
        }
        ConvStack { blocks, dropout_p: cfg.dropout_p, use_skip: cfg.use_skip }
    }

    pub fn forward(&mut self, fwd: &mut Fwd, x: Var) -> Result<Var> {
        let mut h = x;
        for block in &mut self.blocks {
            let input = h;
            let mut y = block.conv.forward(fwd, input)?;
            if let Some(bn) = block.bn.as_mut() {
                y = bn.forward(fwd, y)?;
            }
            y = fwd.tape.relu(y);
            y = fwd.tape.dropout(y, self.dropout_p, fwd.train, fwd.rng)?;
            if self.use_skip && block.in_dim == block.out_dim {
                y = fwd.tape.add(y, input)?;
            }
            h = y;
        }
        Ok(h)
    }

    /// Running batchnorm moments of every block, in layer order. Empty when
    /// batchnorm is off. Checkpoints must capture these alongside parameter
    /// snapshots: restoring weights under the statistics of a later epoch
    /// skews every normalized activation at eval time.
    pub fn norm_stats(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for block in &self.blocks {
            if let Some(bn) = &block.bn {
                bn.export_stats(&mut out);
            }
        }
        out
    }

    /// Restores moments captured by [`ConvStack::norm_stats`].
    pub fn set_norm_stats(&mut self, stats: &[f64]) {
        let mut offset = 0;
        for block in &mut self.blocks {
            if let Some(bn) = block.bn.as_mut() {
                offset += bn.import_stats(&stats[offset..]);
            }
        }
        debug_assert_eq!(offset, stats.len(), "norm stats length mismatch");
    }
}

/// Node classifier over a fixed input matrix: conv stack, two-layer head,
/// log-softmax rows. Owns its parameters and the dropout RNG stream.
pub struct GnnModel {
    pub cfg: LayerConfig,
    store: ParamStore,
    stack: ConvStack,
    head: Mlp2,
    dropout_rng: ChaCha8Rng,
    input: Tensor,
}

impl GnnModel {
    /// `seed` controls both weight init and the dropout stream, through
    /// separate child streams so adding dropout never shifts init.
    pub fn new(cfg: LayerConfig, input: Tensor, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if input.cols() != cfg.in_dim {
            return Err(Error::ShapeMismatch {
                op: "model input",
                lhs: input.shape().to_vec(),
                rhs: vec![input.rows(), cfg.in_dim],
            });
        }
        let mut store = ParamStore::new();
        let mut init_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[tags::MODEL_INIT]));
        let stack = ConvStack::new(&mut store, &mut init_rng, &cfg, "stack");
        let head = Mlp2::new(&mut store, &mut init_rng, "head", cfg.hidden_dim, cfg.hidden_dim, cfg.out_dim);
        let dropout_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, &[tags::DROPOUT]));
        Ok(GnnModel { cfg, store, stack, head, dropout_rng, input })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward<'g>(&mut self, tape: &mut Tape<'g>, train: bool) -> Result<(Var, Binder)> {
        let mut binder = Binder::new();
        let x = tape.leaf(self.input.clone());
        let mut fwd = Fwd {
            tape,
            store: &self.store,
            binder: &mut binder,
            rng: &mut self.dropout_rng,
            train,
        };
        let h = self.stack.forward(&mut fwd, x)?;
        let logits = self.head.forward(&mut fwd, h)?;
        let logp = fwd.tape.log_softmax_rows(logits);
        Ok((logp, binder))
    }
}

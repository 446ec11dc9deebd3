//! Neural network stack: a reverse-mode autodiff tape with graph-aware ops,
//! parameter storage with JSON checkpoints, layers, model assembly, Adam and
//! a training loop with early stopping.
//!
//! Parameters live outside the tape in a [`ParamStore`]; each forward pass
//! binds them onto a fresh tape through a [`Binder`], and [`Tape::backward`]
//! returns gradients addressed by tape variable.

mod layers;
mod model;
mod optim;
mod params;
mod tape;
mod train;

pub use layers::{
    BatchNorm, Fwd, GatConv, GcnConv, GinConv, Linear, Mlp2, SageConv, BATCHNORM_EPS,
    BATCHNORM_MOMENTUM, GAT_LEAKY_SLOPE, GIN_EPS,
};
pub use model::{ConvStack, ConvType, GnnModel, LayerConfig, DEFAULT_DEPTH, DEFAULT_HIDDEN};
pub use optim::{Adam, DEFAULT_LR};
pub use params::{glorot_uniform, Binder, ParamId, ParamStore, CHECKPOINT_VERSION};
pub use tape::{Grads, Tape, Var};
pub use train::{
    accuracy, fit, FitReport, ForwardModel, Supervision, TrainSettings, DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE, DEFAULT_WEIGHT_DECAY,
};

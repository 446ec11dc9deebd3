//! Named parameter storage, seeded initialization, and the per-step binding
//! of parameters onto a tape.
//!
//! Parameters outlive the tape: each training step binds every parameter it
//! touches as a fresh leaf, records the (parameter, leaf) pairs in a
//! [`Binder`], and after backward the optimizer pulls gradients through
//! those pairs. Checkpoints serialize to a versioned JSON document of named
//! arrays with shapes.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    params: Vec<CheckpointParam>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn index(&self, id: ParamId) -> usize {
        id.0
    }

    pub fn id_at(&self, index: usize) -> ParamId {
        assert!(index < self.tensors.len());
        ParamId(index)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.tensors.clone()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.tensors.len(), "snapshot/store size mismatch");
        self.tensors.clone_from_slice(snapshot);
    }

    /// Writes all parameters as a versioned JSON checkpoint.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(name, t)| CheckpointParam {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::BadArtifact { path: path.into(), message: e.to_string() })?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint previously written by [`save_json`].
    pub fn load_json(path: &Path) -> Result<ParamStore> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| Error::BadArtifact { path: path.into(), message: e.to_string() })?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(Error::BadArtifact {
                path: path.into(),
                message: format!(
                    "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                    file.format_version
                ),
            });
        }
        let mut store = ParamStore::new();
        for p in file.params {
            let tensor = Tensor::new(p.shape, p.data).map_err(|e| Error::BadArtifact {
                path: path.into(),
                message: format!("parameter {}: {e}", p.name),
            })?;
            store.add(p.name, tensor);
        }
        Ok(store)
    }
}

/// Uniform fan-based initialization: U(−s, s) with s = √(6/(fan_in+fan_out)).
pub fn glorot_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).unwrap()
}

/// (parameter, tape leaf) pairs recorded during one forward pass.
#[derive(Debug, Default)]
pub struct Binder {
    pairs: Vec<(ParamId, Var)>,
}

impl Binder {
    pub fn new() -> Self {
        Binder::default()
    }

    /// Binds a parameter onto the tape, reusing the leaf if this parameter
    /// was already bound during the current pass.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, var)) = self.pairs.iter().find(|(pid, _)| *pid == id) {
            return var;
        }
        let var = tape.leaf(store.get(id).clone());
        self.pairs.push((id, var));
        var
    }

    pub fn pairs(&self) -> &[(ParamId, Var)] {
        &self.pairs
    }
}

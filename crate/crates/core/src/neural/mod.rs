//! The seven neural forecasters over the autodiff tape.
//!
//! A [`NeuralModel`] owns a flat parameter vector split into named blocks.
//! Each batch binds the blocks to a fresh tape, runs the family forward
//! pass and reads gradients back into a flat vector with the same layout.
//! The affine head (`head.weight`, `head.bias`) is always the last pair of
//! blocks; freezing the body binds every other block as a constant.

mod arch;
mod checkpoint;
pub mod forward;
mod layout;
mod sizing;

use std::collections::HashMap;

use pif_autodiff::{AdError, Gradients, Shape, Tape, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{SeriesDataset, Split};
use crate::rng;

pub use arch::{Architecture, Family, CKAN_DEGREE, KAN_DEGREE, KAN_GRID, TRANSFORMER_HEADS};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use layout::{greville, ParamBlock, HEAD_BIAS, HEAD_WEIGHT};
pub use sizing::{size_architecture, SizeTier, DESK_TIERS, MAX_TOLERANCE};

pub const DEFAULT_LOOKBACK: usize = 50;
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("window length {got} does not match lookback {expected}")]
    WindowLength { expected: usize, got: usize },

    #[error("no {family} architecture within tolerance of {target} parameters (closest has {nearest})")]
    Infeasible { family: Family, target: usize, nearest: usize },

    #[error("size tolerance must lie in (0, 0.05], got {0}")]
    Tolerance(f64),

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("head expects {expected} weights, got {got}")]
    HeadDimension { expected: usize, got: usize },

    #[error("model lookback {model} does not match dataset lookback {dataset}")]
    Lookback { model: usize, dataset: usize },

    #[error("parameter vector has {got} entries, model needs {expected}")]
    ParamLength { expected: usize, got: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Autodiff(#[from] AdError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Replacement output layer for transfer learning.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineHead {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl AffineHead {
    pub fn zeros(width: usize) -> Self {
        Self {
            weight: vec![0.0; width],
            bias: 0.0,
        }
    }

    /// Fresh head with the standard uniform initialization.
    pub fn random(width: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut g = rng::seeded(seed);
        let bound = 1.0 / (width.max(1) as f64).sqrt();
        Self {
            weight: (0..width).map(|_| g.random_range(-bound..bound)).collect(),
            bias: g.random_range(-bound..bound),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    arch: Architecture,
    lookback: usize,
    params: Vec<f64>,
    blocks: Vec<ParamBlock>,
    index: HashMap<String, usize>,
    frozen_body: bool,
    tier: Option<SizeTier>,
    seed: u64,
}

/// Sizes `family` to `tier` and initializes it from `seed`.
pub fn build(family: Family, lookback: usize, tier: SizeTier, seed: u64) -> Result<NeuralModel, NeuralError> {
    let arch = size_architecture(family, lookback, tier)?;
    let mut model = NeuralModel::new(arch, lookback, seed)?;
    model.tier = Some(tier);
    Ok(model)
}

impl NeuralModel {
    pub fn new(arch: Architecture, lookback: usize, seed: u64) -> Result<Self, NeuralError> {
        arch.validate().map_err(NeuralError::Architecture)?;
        if lookback == 0 {
            return Err(NeuralError::Architecture("lookback must be positive".into()));
        }
        let (blocks, params) = layout::initialize(&arch, lookback, seed);
        Ok(Self::assemble(arch, lookback, params, blocks, false, None, seed))
    }

    fn assemble(
        arch: Architecture,
        lookback: usize,
        params: Vec<f64>,
        blocks: Vec<ParamBlock>,
        frozen_body: bool,
        tier: Option<SizeTier>,
        seed: u64,
    ) -> Self {
        let index = blocks.iter().enumerate().map(|(i, b)| (b.name.clone(), i)).collect();
        Self {
            arch,
            lookback,
            params,
            blocks,
            index,
            frozen_body,
            tier,
            seed,
        }
    }

    pub fn family(&self) -> Family {
        self.arch.family()
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tier(&self) -> Option<SizeTier> {
        self.tier
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NeuralError> {
        if params.len() != self.params.len() {
            return Err(NeuralError::ParamLength {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| &self.params[self.blocks[i].range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.blocks[*self.index.get(name)?].range();
        Some(&mut self.params[range])
    }

    pub fn is_body_frozen(&self) -> bool {
        self.frozen_body
    }

    /// Whether the optimizer may touch parameter `i`.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.params.len()];
        if self.frozen_body {
            for b in self.blocks.iter().filter(|b| !b.is_head()) {
                mask[b.range()].iter_mut().for_each(|m| *m = false);
            }
        }
        mask
    }

    pub fn freeze_body(&mut self) {
        self.frozen_body = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen_body = false;
    }

    /// Installs `head` and freezes the body; the body parameters are left
    /// bit-identical.
    pub fn replace_head(&self, head: &AffineHead) -> Result<Self, NeuralError> {
        let width = self.arch.head_width();
        if head.weight.len() != width {
            return Err(NeuralError::HeadDimension {
                expected: width,
                got: head.weight.len(),
            });
        }
        let mut out = self.clone();
        out.block_mut(HEAD_WEIGHT).expect("head block").copy_from_slice(&head.weight);
        out.block_mut(HEAD_BIAS).expect("head block")[0] = head.bias;
        out.frozen_body = true;
        Ok(out)
    }

    /// Hex SHA-256 of all parameters as little-endian bytes.
    pub fn checksum(&self) -> String {
        hash_params(self.params.iter())
    }

    /// Hex SHA-256 of every non-head parameter.
    pub fn body_checksum(&self) -> String {
        hash_params(
            self.blocks
                .iter()
                .filter(|b| !b.is_head())
                .flat_map(|b| self.params[b.range()].iter()),
        )
    }

    /// Puts every block on `tape`. Frozen blocks become constants, so their
    /// gradients are exactly zero.
    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Value>, NeuralError> {
        self.bind_with(tape, |b| !(self.frozen_body && !b.is_head()))
    }

    /// Binds every block as a constant, for inference.
    pub fn bind_constant(&self, tape: &mut Tape) -> Result<Vec<Value>, NeuralError> {
        self.bind_with(tape, |_| false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: impl Fn(&ParamBlock) -> bool) -> Result<Vec<Value>, NeuralError> {
        self.blocks
            .iter()
            .map(|b| {
                let vals = self.params[b.range()].to_vec();
                let v = if trainable(b) {
                    tape.param(b.shape(), vals)?
                } else {
                    tape.constant(b.shape(), vals)?
                };
                Ok(v)
            })
            .collect()
    }

    fn view<'a>(&'a self, bound: Vec<Value>) -> forward::Bound<'a> {
        forward::Bound {
            values: bound,
            index: &self.index,
        }
    }

    /// Batched forward pass: `inputs` is `(B, lookback)`, the result `(B, 1)`.
    pub fn forward_batch(&self, tape: &mut Tape, bound: &[Value], inputs: Value) -> Result<Value, NeuralError> {
        match inputs.shape() {
            Shape::Matrix(_, l) if l == self.lookback => {}
            Shape::Matrix(_, l) => {
                return Err(NeuralError::WindowLength {
                    expected: self.lookback,
                    got: l,
                })
            }
            other => {
                return Err(NeuralError::WindowLength {
                    expected: self.lookback,
                    got: other.len(),
                })
            }
        }
        let view = self.view(bound.to_vec());
        Ok(forward::forward_batch(&self.arch, tape, &view, inputs)?)
    }

    /// Scalar forecast for one normalized window.
    pub fn forward(&self, tape: &mut Tape, bound: &[Value], window: &[f64]) -> Result<Value, NeuralError> {
        if window.len() != self.lookback {
            return Err(NeuralError::WindowLength {
                expected: self.lookback,
                got: window.len(),
            });
        }
        let x = tape.matrix(1, self.lookback, window.to_vec())?;
        let out = self.forward_batch(tape, bound, x)?;
        Ok(tape.reshape(out, Shape::Scalar)?)
    }

    /// Transformer only: the head applied at every position of `window`.
    pub fn position_outputs(&self, window: &[f64]) -> Result<Vec<f64>, NeuralError> {
        if self.family() != Family::Transformer {
            return Err(NeuralError::Architecture("position outputs exist only for the Transformer".into()));
        }
        if window.len() != self.lookback {
            return Err(NeuralError::WindowLength {
                expected: self.lookback,
                got: window.len(),
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind_constant(&mut tape)?;
        let x = tape.matrix(1, self.lookback, window.to_vec())?;
        let view = self.view(bound);
        let out = forward::transformer_position_outputs(&self.arch, &mut tape, &view, x)?;
        Ok(tape.value(out).to_vec())
    }

    /// Gradient with respect to the flat parameter vector.
    pub fn flat_gradient(&self, grads: &Gradients, bound: &[Value]) -> Vec<f64> {
        let mut out = vec![0.0; self.params.len()];
        for (b, v) in self.blocks.iter().zip(bound) {
            if let Some(g) = grads.get_ref(*v) {
                out[b.range()].copy_from_slice(g);
            }
        }
        out
    }

    /// Normalized forecasts for a list of windows.
    pub fn predict_windows<'w>(&self, windows: impl IntoIterator<Item = &'w [f64]>) -> Result<Vec<f64>, NeuralError> {
        let windows: Vec<&[f64]> = windows.into_iter().collect();
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            let mut flat = Vec::with_capacity(chunk.len() * self.lookback);
            for w in chunk {
                if w.len() != self.lookback {
                    return Err(NeuralError::WindowLength {
                        expected: self.lookback,
                        got: w.len(),
                    });
                }
                flat.extend_from_slice(w);
            }
            let mut tape = Tape::new();
            let bound = self.bind_constant(&mut tape)?;
            let x = tape.matrix(chunk.len(), self.lookback, flat)?;
            let y = self.forward_batch(&mut tape, &bound, x)?;
            out.extend_from_slice(tape.value(y));
        }
        Ok(out)
    }

    /// Normalized one-step forecasts over a split.
    pub fn predict_normalized(&self, dataset: &SeriesDataset, split: Split) -> Result<Vec<f64>, NeuralError> {
        if dataset.lookback() != self.lookback {
            return Err(NeuralError::Lookback {
                model: self.lookback,
                dataset: dataset.lookback(),
            });
        }
        self.predict_windows(dataset.split(split).iter().map(|w| w.input.as_slice()))
    }

    /// One-step forecasts over a split in degrees Celsius.
    pub fn predict_series(&self, dataset: &SeriesDataset, split: Split) -> Result<Vec<f64>, NeuralError> {
        let norm = dataset.norm();
        Ok(self
            .predict_normalized(dataset, split)?
            .into_iter()
            .map(|z| norm.invert(z))
            .collect())
    }
}

pub(crate) fn hash_params<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

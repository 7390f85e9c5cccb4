//! Minimal deterministic neural-network engine: tensors, layers with cached
//! activations, backpropagation, binary cross-entropy and Adam.

mod adam;
pub mod checkpoint;
mod layer;
mod loss;
mod network;
mod tensor;

use std::path::PathBuf;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use layer::{Geometry, Layer, LayerKind, LayerSpec};
pub(crate) use layer::dot as layer_dot;
pub use loss::{binary_cross_entropy, sigmoid, LossOutput};
pub use network::{Architecture, LayerSlot, Network, ParameterIndex, ParameterVector};
pub use tensor::Tensor;

use crate::wire::WireError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("layer {layer} ({kind}): expected per-sample shape {expected:?}, got {got:?}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid architecture at layer {layer}: {msg}")]
    InvalidArchitecture { layer: usize, msg: String },
    #[error("layer {layer} has no cached forward activation; run forward with caching first")]
    MissingCache { layer: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("target at element {index} is not 0 or 1")]
    TargetNotBinary { index: usize },
    #[error("checkpoint: {0}")]
    Wire(#[from] WireError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

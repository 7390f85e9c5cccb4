//! One-time pruning mask construction from component relevance, mask
//! application, and the sparse exchange codec.

mod codec;
mod component;
mod mask;

use std::path::PathBuf;

use thiserror::Error;

pub use codec::{decode_sparse, encode_sparse, SparsePayload, PAYLOAD_HEADER_BYTES};
pub use component::{enumerate_components, Component};
pub use mask::{
    apply_mask, apply_mask_in_place, build_mask, build_mask_from_order, relevance_order, PruningMask,
    MASK_MAGIC, MASK_VERSION,
};

use crate::wire::WireError;

#[derive(Debug, Error)]
pub enum PruningError {
    #[error("pruning rate must lie in [0, 1), got {0}")]
    RateOutOfRange(f64),
    #[error("component mismatch: {0}")]
    Mismatch(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("masked coordinate {index} is nonzero")]
    Integrity { index: usize },
    #[error("mask digest mismatch: expected {expected:016x}, got {actual:016x}")]
    DigestMismatch { expected: u64, actual: u64 },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

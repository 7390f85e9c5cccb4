//! Sparse wire representation of masked parameter vectors.
//!
//! Layout: round u32, value count u32, mask digest u64, then the surviving
//! values as little-endian f32 in canonical order.

use crate::nn::ParameterVector;
use crate::pruning::{PruningError, PruningMask};
use crate::scalar::Scalar;
use crate::wire::{put_f32s, Reader};

pub const PAYLOAD_HEADER_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePayload {
    pub round: u32,
    pub values: Vec<f32>,
    pub mask_digest: u64,
}

impl SparsePayload {
    pub fn byte_count(&self) -> usize {
        PAYLOAD_HEADER_BYTES + 4 * self.values.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_count());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.mask_digest.to_le_bytes());
        put_f32s(&mut out, self.values.iter().copied());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PruningError> {
        let mut r = Reader::new(bytes);
        let round = r.u32()?;
        let count = r.u32()? as usize;
        let mask_digest = r.u64()?;
        let values = r.f32_vec(count)?;
        r.finish()?;
        Ok(Self {
            round,
            values,
            mask_digest,
        })
    }
}

/// Packs the kept coordinates of an already-masked vector.
pub fn encode_sparse<T: Scalar>(
    params: &ParameterVector<T>,
    mask: &PruningMask,
    round: u32,
) -> Result<SparsePayload, PruningError> {
    if params.len() != mask.len() {
        return Err(PruningError::LengthMismatch {
            expected: mask.len(),
            got: params.len(),
        });
    }
    let mut values = Vec::with_capacity(mask.kept_count());
    for (index, (&v, &keep)) in params.values().iter().zip(mask.keep()).enumerate() {
        if keep {
            values.push(v.as_f32());
        } else if v != T::zero() {
            return Err(PruningError::Integrity { index });
        }
    }
    Ok(SparsePayload {
        round,
        values,
        mask_digest: mask.digest(),
    })
}

/// Expands a payload back to a full vector with zeros at dropped positions.
pub fn decode_sparse<T: Scalar>(
    payload: &SparsePayload,
    mask: &PruningMask,
) -> Result<ParameterVector<T>, PruningError> {
    let digest = mask.digest();
    if payload.mask_digest != digest {
        return Err(PruningError::DigestMismatch {
            expected: digest,
            actual: payload.mask_digest,
        });
    }
    if payload.values.len() != mask.kept_count() {
        return Err(PruningError::LengthMismatch {
            expected: mask.kept_count(),
            got: payload.values.len(),
        });
    }
    let mut it = payload.values.iter();
    let out = mask
        .keep()
        .iter()
        .map(|&k| {
            if k {
                T::of(*it.next().expect("count checked") as f64)
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(ParameterVector::new(out))
}

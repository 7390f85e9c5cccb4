//! `FPDS` files: magic, version u16, N u32, C/H/W u16 each, L u16, images
//! as little-endian f32, then the N*L label bits packed LSB-first in
//! row-major order.

use std::path::Path;

use crate::data::{DataError, Dataset};
use crate::nn::Tensor;
use crate::scalar::Scalar;
use crate::wire::{pack_bits, put_f32s, unpack_bits, Reader, WireError};

pub const DATASET_MAGIC: [u8; 4] = *b"FPDS";
pub const DATASET_VERSION: u16 = 1;

pub fn encode_dataset<T: Scalar>(ds: &Dataset<T>) -> Result<Vec<u8>, DataError> {
    let [c, h, w] = <[usize; 3]>::try_from(ds.image_shape())
        .map_err(|_| DataError::InvalidDims("images must be [N, C, H, W]".into()))?;
    let n = ds.len();
    let l = ds.class_count();
    let fits16 = |v: usize| u16::try_from(v).map_err(|_| DataError::InvalidDims(format!("{v} exceeds u16")));
    let n32 = u32::try_from(n).map_err(|_| DataError::InvalidDims(format!("{n} samples exceed u32")))?;
    let mut out = Vec::with_capacity(18 + ds.images.len() * 4 + (n * l).div_ceil(8));
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&n32.to_le_bytes());
    for d in [c, h, w, l] {
        out.extend_from_slice(&fits16(d)?.to_le_bytes());
    }
    put_f32s(&mut out, ds.images.data().iter().map(|v| v.as_f32()));
    out.extend(pack_bits(ds.labels.data().iter().map(|&v| v > T::zero())));
    Ok(out)
}

pub fn decode_dataset<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>, DataError> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(WireError::Version(version).into());
    }
    let n = r.u32()? as usize;
    let (c, h, w, l) = (r.u16()? as usize, r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
    let pixels = n
        .checked_mul(c * h * w)
        .ok_or_else(|| DataError::InvalidDims("image buffer size overflows".into()))?;
    let images = r.f32_vec(pixels)?;
    let bits = unpack_bits(r.take((n * l).div_ceil(8))?, n * l);
    r.finish()?;
    let images = Tensor::from_external(vec![n, c, h, w], images.into_iter().map(|v| T::of(v as f64)).collect())?;
    let labels = Tensor::new(
        vec![n, l],
        bits.into_iter().map(|b| if b { T::one() } else { T::zero() }).collect(),
    )?;
    Dataset::new(images, labels)
}

pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_dataset(ds)?).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    #[test]
    fn header_layout() {
        let spec = SyntheticSpec {
            classes: 3,
            shape: [2, 5, 4],
            prototype_seed: 1,
            noise_std: 0.1,
        };
        let ds = generate::<f32>(&spec, 7, 2).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..4], b"FPDS");
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 7);
        assert_eq!(u16::from_le_bytes(bytes[10..12].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes(bytes[16..18].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 18 + 7 * 40 * 4 + (7 * 3usize).div_ceil(8));
    }

    #[test]
    fn truncated_file_rejected() {
        let spec = SyntheticSpec {
            classes: 2,
            shape: [1, 2, 2],
            prototype_seed: 1,
            noise_std: 0.0,
        };
        let ds = generate::<f32>(&spec, 3, 2).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        assert!(decode_dataset::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }
}

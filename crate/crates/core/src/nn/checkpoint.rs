//! `FPNN` model checkpoints: architecture descriptor plus the flat
//! parameter buffer as little-endian f32 in canonical order.

use std::path::Path;

use crate::nn::layer::{Geometry, LayerSpec};
use crate::nn::{Architecture, Network, NnError, ParameterVector};
use crate::scalar::Scalar;
use crate::wire::{put_f32s, Reader, WireError};

pub const MAGIC: [u8; 4] = *b"FPNN";
pub const VERSION: u16 = 1;

const TAG_DENSE: u8 = 0;
const TAG_CONV2D: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_MAXPOOL2D: u8 = 3;
const TAG_GLOBALAVGPOOL: u8 = 4;
const TAG_FLATTEN: u8 = 5;

/// Serializes the architecture and parameters of `net`.
pub fn encode_checkpoint<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let params = net.params();
    let mut out = Vec::with_capacity(64 + params.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let input = net.input_shape();
    out.push(input.len() as u8);
    for &d in input {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let fields: Vec<usize> = match *layer.geometry() {
            Geometry::Dense {
                in_features,
                out_features,
            } => {
                out.push(TAG_DENSE);
                vec![in_features, out_features]
            }
            Geometry::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                padding,
            } => {
                out.push(TAG_CONV2D);
                vec![in_channels, out_channels, kernel_h, kernel_w, padding]
            }
            Geometry::Relu => {
                out.push(TAG_RELU);
                vec![]
            }
            Geometry::MaxPool2d { size } => {
                out.push(TAG_MAXPOOL2D);
                vec![size]
            }
            Geometry::GlobalAvgPool => {
                out.push(TAG_GLOBALAVGPOOL);
                vec![]
            }
            Geometry::Flatten => {
                out.push(TAG_FLATTEN);
                vec![]
            }
        };
        for f in fields {
            out.extend_from_slice(&(f as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    put_f32s(&mut out, params.values().iter().map(|v| v.as_f32()));
    out
}

/// Rebuilds a network from checkpoint bytes, validating that the stored
/// layer geometry matches what the architecture resolves to.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Network<T>, NnError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(WireError::Version(version).into());
    }
    let rank = r.u8()? as usize;
    let input_shape = (0..rank)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let count = r.u32()? as usize;
    let mut geometries = Vec::with_capacity(count.min(1024));
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let g = match r.u8()? {
            TAG_DENSE => Geometry::Dense {
                in_features: r.u32()? as usize,
                out_features: r.u32()? as usize,
            },
            TAG_CONV2D => Geometry::Conv2d {
                in_channels: r.u32()? as usize,
                out_channels: r.u32()? as usize,
                kernel_h: r.u32()? as usize,
                kernel_w: r.u32()? as usize,
                padding: r.u32()? as usize,
            },
            TAG_RELU => Geometry::Relu,
            TAG_MAXPOOL2D => Geometry::MaxPool2d {
                size: r.u32()? as usize,
            },
            TAG_GLOBALAVGPOOL => Geometry::GlobalAvgPool,
            TAG_FLATTEN => Geometry::Flatten,
            tag => return Err(WireError::Malformed(format!("unknown layer tag {tag}")).into()),
        };
        if let Geometry::Conv2d {
            kernel_h,
            kernel_w,
            padding,
            ..
        } = g
        {
            if kernel_h != kernel_w || (padding != 0 && padding != kernel_h / 2) {
                return Err(WireError::Malformed("unsupported conv geometry".into()).into());
            }
        }
        layers.push(g.spec());
        geometries.push(g);
    }
    let arch = Architecture {
        input_shape,
        layers: layers.clone(),
    };
    let mut net = Network::<T>::new(&arch)?;
    for (i, (layer, g)) in net.layers().iter().zip(&geometries).enumerate() {
        if layer.geometry() != g {
            return Err(NnError::InvalidArchitecture {
                layer: i,
                msg: format!("stored geometry {g:?} does not match inferred {:?}", layer.geometry()),
            });
        }
    }
    let n = r.u64()? as usize;
    if n != net.param_count() {
        return Err(NnError::LengthMismatch {
            expected: net.param_count(),
            got: n,
        });
    }
    let values = r.f32_vec(n)?;
    r.finish()?;
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(NnError::NonFinite { index });
    }
    net.set_params(&ParameterVector::new(values.into_iter().map(|v| T::of(v as f64)).collect()))?;
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, encode_checkpoint(net)).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Network<T>, NnError> {
    let bytes = std::fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

/// Spec list of the stored architecture, without the parameters.
pub fn checkpoint_architecture(bytes: &[u8]) -> Result<Vec<LayerSpec>, NnError> {
    Ok(decode_checkpoint::<f32>(bytes)?.architecture().layers)
}

//! Seeded synthetic multi-label image data, label-skewed client
//! partitioning, and the `FPDS` dataset file format.

mod format;
mod partition;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use format::{decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use partition::{partition, partition_indices, PartitionSpec};
pub use synthetic::{generate, SyntheticSpec};

use crate::lrp::ReferenceSet;
use crate::nn::{NnError, Tensor};
use crate::scalar::Scalar;
use crate::wire::WireError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("cannot split {samples} samples across {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },
    #[error("Dirichlet concentration must be finite and > 0, got {0}")]
    InvalidAlpha(f64),
    #[error("sample {0} has no positive label")]
    NoPositive(usize),
    #[error("image value out of [0, 1] at element {0}")]
    OutOfRange(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("dataset file: {0}")]
    Wire(#[from] WireError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Multi-label image set: images `[N, C, H, W]` in `[0, 1]` and binary
/// labels `[N, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Tensor<T>,
}

impl<T: Scalar> Dataset<T> {
    /// Validates shapes, value range and the at-least-one-positive rule.
    pub fn new(images: Tensor<T>, labels: Tensor<T>) -> Result<Self, DataError> {
        if images.shape().len() != 4 || labels.shape().len() != 2 {
            return Err(DataError::InvalidDims(format!(
                "images {:?} must be [N, C, H, W] and labels {:?} must be [N, L]",
                images.shape(),
                labels.shape()
            )));
        }
        if images.batch() != labels.batch() || images.batch() == 0 || labels.shape()[1] == 0 {
            return Err(DataError::InvalidDims(format!(
                "images {:?} and labels {:?} disagree or are empty",
                images.shape(),
                labels.shape()
            )));
        }
        if let Some(i) = images
            .data()
            .iter()
            .position(|v| !(v.is_finite() && *v >= T::zero() && *v <= T::one()))
        {
            return Err(DataError::OutOfRange(i));
        }
        for n in 0..labels.batch() {
            let row = labels.sample(n);
            if let Some(k) = row.iter().position(|&v| v != T::zero() && v != T::one()) {
                return Err(NnError::TargetNotBinary { index: n * row.len() + k }.into());
            }
            if !row.iter().any(|&v| v == T::one()) {
                return Err(DataError::NoPositive(n));
            }
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.labels.shape()[1]
    }

    pub fn image_shape(&self) -> &[usize] {
        self.images.sample_shape()
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.gather_batch(indices),
            labels: self.labels.gather_batch(indices),
        }
    }

    /// Fraction of samples carrying each label.
    pub fn label_frequencies(&self) -> Vec<f64> {
        let l = self.class_count();
        let mut counts = vec![0.0; l];
        for n in 0..self.len() {
            for (c, &v) in self.labels.sample(n).iter().enumerate() {
                counts[c] += v.as_f64();
            }
        }
        counts.iter().map(|c| c / self.len() as f64).collect()
    }

    pub fn into_reference_set(self) -> ReferenceSet<T> {
        ReferenceSet {
            images: self.images,
            labels: self.labels,
        }
    }
}

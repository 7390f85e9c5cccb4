//! Layer-wise relevance propagation with the ε-rule, and per-component
//! relevance averaged over a reference set.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Geometry, Layer, Network, NnError, Tensor};
use crate::pruning::{enumerate_components, Component};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LrpError {
    #[error("layer {layer} has no cached activation; run forward with caching on the same input")]
    MissingCache { layer: usize },
    #[error("epsilon must be finite and >= 0, got {0}")]
    NegativeEpsilon(f64),
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("relevance/network mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// What happens to the share of relevance a bias would claim.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasRule {
    /// The bias enters the denominator and its share is dropped.
    #[default]
    Absorb,
    /// The bias is left out of the denominator, so inputs receive all of
    /// the relevance.
    Exclude,
}

/// Initial relevance at the network output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceInit {
    /// The full logit vector.
    #[default]
    Logits,
    /// Logits of the ground-truth positive classes only; others start at 0.
    PositiveLogits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrpConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub bias_rule: BiasRule,
    #[serde(default)]
    pub init: RelevanceInit,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            bias_rule: BiasRule::Absorb,
            init: RelevanceInit::Logits,
        }
    }
}

impl LrpConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

/// Relevance at every layer boundary of one propagation.
#[derive(Debug, Clone)]
pub struct RelevanceMap<T> {
    /// `inputs[l]` has the shape of layer `l`'s input batch.
    pub inputs: Vec<Tensor<T>>,
    /// Relevance the propagation started from (shape of the logits).
    pub output: Tensor<T>,
}

impl<T: Scalar> RelevanceMap<T> {
    /// Relevance at the output of layer `l`.
    pub fn at_output_of(&self, layer: usize) -> &Tensor<T> {
        self.inputs.get(layer + 1).unwrap_or(&self.output)
    }

    /// Per-sample sum of relevance at the input of layer `l`
    /// (`l == inputs.len()` addresses the output).
    pub fn boundary_sums(&self, boundary: usize) -> Vec<f64> {
        let t = self.inputs.get(boundary).unwrap_or(&self.output);
        (0..t.batch())
            .map(|b| t.sample(b).iter().map(|v| v.as_f64()).sum())
            .collect()
    }
}

/// Builds the starting relevance from logits and, for
/// [`RelevanceInit::PositiveLogits`], the binary labels.
pub fn initial_relevance<T: Scalar>(
    logits: &Tensor<T>,
    labels: Option<&Tensor<T>>,
    init: RelevanceInit,
) -> Result<Tensor<T>, LrpError> {
    match (init, labels) {
        (RelevanceInit::Logits, _) => Ok(logits.clone()),
        (RelevanceInit::PositiveLogits, Some(labels)) => {
            if labels.shape() != logits.shape() {
                return Err(LrpError::Mismatch(format!(
                    "labels {:?} vs logits {:?}",
                    labels.shape(),
                    logits.shape()
                )));
            }
            let data = logits
                .data()
                .iter()
                .zip(labels.data())
                .map(|(&z, &y)| if y > T::zero() { z } else { T::zero() })
                .collect();
            Ok(Tensor::new(logits.shape().to_vec(), data)?)
        }
        (RelevanceInit::PositiveLogits, None) => Err(LrpError::Mismatch(
            "positive-logit initialization needs labels".into(),
        )),
    }
}

/// Propagates `logits` back through a network whose caches hold the
/// forward pass that produced them.
pub fn propagate<T: Scalar>(
    net: &Network<T>,
    logits: &Tensor<T>,
    epsilon: f64,
) -> Result<RelevanceMap<T>, LrpError> {
    propagate_with(net, logits.clone(), &LrpConfig::with_epsilon(epsilon))
}

/// Propagates an arbitrary starting relevance (shape of the logits).
pub fn propagate_with<T: Scalar>(
    net: &Network<T>,
    start: Tensor<T>,
    cfg: &LrpConfig,
) -> Result<RelevanceMap<T>, LrpError> {
    if !(cfg.epsilon >= 0.0 && cfg.epsilon.is_finite()) {
        return Err(LrpError::NegativeEpsilon(cfg.epsilon));
    }
    if start.sample_shape() != net.output_shape() {
        return Err(LrpError::Mismatch(format!(
            "start relevance {:?} vs network output {:?}",
            start.shape(),
            net.output_shape()
        )));
    }
    let layers = net.layers();
    let mut inputs = vec![Tensor::empty(); layers.len()];
    let mut r = start.clone();
    for (i, layer) in layers.iter().enumerate().rev() {
        let a = layer
            .cached_input()
            .ok_or(LrpError::MissingCache { layer: i })?;
        if a.batch() != r.batch() {
            return Err(LrpError::Mismatch(format!(
                "layer {i} cached batch of {} but relevance has {}",
                a.batch(),
                r.batch()
            )));
        }
        r = layer_relevance(layer, i, a, &r, cfg)?;
        inputs[i] = r.clone();
    }
    Ok(RelevanceMap {
        inputs,
        output: start,
    })
}

fn stabilize<T: Scalar>(z: T, eps: T) -> T {
    if z >= T::zero() {
        z + eps
    } else {
        z - eps
    }
}

/// `R_out / stabilized(z)`; zero where the denominator vanishes.
fn ratios<T: Scalar>(r_out: &[T], z: &[T], eps: T) -> Vec<T> {
    r_out
        .iter()
        .zip(z)
        .map(|(&r, &z)| {
            let d = stabilize(z, eps);
            if d == T::zero() {
                T::zero()
            } else {
                r / d
            }
        })
        .collect()
}

fn layer_relevance<T: Scalar>(
    layer: &Layer<T>,
    index: usize,
    a: &Tensor<T>,
    r_out: &Tensor<T>,
    cfg: &LrpConfig,
) -> Result<Tensor<T>, LrpError> {
    let eps = T::of(cfg.epsilon);
    let batch = a.batch();
    let with_bias = cfg.bias_rule == BiasRule::Absorb;
    let out = match *layer.geometry() {
        Geometry::Dense {
            in_features,
            out_features,
        } => {
            let w = layer.weights().data();
            let bias = layer.bias().data();
            let mut r_in = vec![T::zero(); a.len()];
            for b in 0..batch {
                let x = a.sample(b);
                let z: Vec<T> = (0..out_features)
                    .map(|j| {
                        let s = crate::nn::layer_dot(&w[j * in_features..(j + 1) * in_features], x);
                        if with_bias {
                            s + bias[j]
                        } else {
                            s
                        }
                    })
                    .collect();
                let s = ratios(r_out.sample(b), &z, eps);
                let dst = &mut r_in[b * in_features..(b + 1) * in_features];
                for (j, &sj) in s.iter().enumerate() {
                    let row = &w[j * in_features..(j + 1) * in_features];
                    for (d, &wk) in dst.iter_mut().zip(row) {
                        *d += wk * sj;
                    }
                }
                for (d, &xk) in dst.iter_mut().zip(x) {
                    *d *= xk;
                }
            }
            r_in
        }
        Geometry::Conv2d { .. } => {
            let z = layer.conv_forward(a.data(), batch, with_bias);
            let s = ratios(r_out.data(), &z, eps);
            let mut c = layer.conv_transpose(&s, batch);
            for (ci, &ai) in c.iter_mut().zip(a.data()) {
                *ci *= ai;
            }
            c
        }
        Geometry::Relu => a
            .data()
            .iter()
            .zip(r_out.data())
            .map(|(&x, &r)| if x > T::zero() { r } else { T::zero() })
            .collect(),
        Geometry::MaxPool2d { .. } => {
            let arg = layer
                .cached_argmax
                .as_ref()
                .ok_or(LrpError::MissingCache { layer: index })?;
            layer.route_to_argmax(r_out.data(), arg, batch)
        }
        Geometry::GlobalAvgPool => {
            let plane = layer.input_shape()[1] * layer.input_shape()[2];
            let inv = T::of(1.0 / plane as f64);
            let mut r_in = Vec::with_capacity(a.len());
            for (cells, &r) in a.data().chunks_exact(plane).zip(r_out.data()) {
                let z = cells.iter().fold(T::zero(), |acc, &v| acc + v) * inv;
                let s = ratios(&[r], &[z], eps)[0];
                r_in.extend(cells.iter().map(|&v| v * inv * s));
            }
            r_in
        }
        Geometry::Flatten => r_out.data().to_vec(),
    };
    Ok(Tensor::new(a.shape().to_vec(), out)?)
}

/// Per-sample component scores: the relevance summed over each
/// component's output activation cells. Returned as `[sample][component]`.
pub fn component_relevance<T: Scalar>(
    rmap: &RelevanceMap<T>,
    net: &Network<T>,
    components: &[Component],
) -> Result<Vec<Vec<f64>>, LrpError> {
    if rmap.inputs.len() != net.layers().len() {
        return Err(LrpError::Mismatch(format!(
            "relevance map has {} boundaries, network has {} layers",
            rmap.inputs.len(),
            net.layers().len()
        )));
    }
    let batch = rmap.output.batch();
    let mut scores = vec![vec![0.0f64; components.len()]; batch];
    for (k, comp) in components.iter().enumerate() {
        let layer = net
            .layers()
            .get(comp.layer_index)
            .ok_or_else(|| LrpError::Mismatch(format!("component {} names missing layer", comp.id)))?;
        let out_shape = layer.output_shape();
        let channels = out_shape[0];
        if comp.channel_index >= channels || !layer.kind().has_params() {
            return Err(LrpError::Mismatch(format!(
                "component {} (layer {}, channel {}) does not match the network",
                comp.id, comp.layer_index, comp.channel_index
            )));
        }
        let cells: usize = out_shape[1..].iter().product();
        let r = rmap.at_output_of(comp.layer_index);
        if r.sample_shape() != out_shape {
            return Err(LrpError::Mismatch(format!(
                "relevance at layer {} has shape {:?}, expected {:?}",
                comp.layer_index,
                r.sample_shape(),
                out_shape
            )));
        }
        for (b, row) in scores.iter_mut().enumerate() {
            let sample = r.sample(b);
            let range = comp.channel_index * cells..(comp.channel_index + 1) * cells;
            row[k] = sample[range].iter().map(|v| v.as_f64()).sum();
        }
    }
    Ok(scores)
}

/// Server-held samples over which component relevance is averaged.
#[derive(Debug, Clone)]
pub struct ReferenceSet<T> {
    pub images: Tensor<T>,
    pub labels: Tensor<T>,
}

impl<T: Scalar> ReferenceSet<T> {
    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean relevance of every prunable component over a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceReport {
    pub components: Vec<Component>,
    /// Indexed by component id.
    pub mean_relevance: Vec<f64>,
    pub sample_count: usize,
}

impl RelevanceReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "component_id,layer_index,channel_index,mean_relevance")?;
        for (c, r) in self.components.iter().zip(&self.mean_relevance) {
            writeln!(w, "{},{},{},{:e}", c.id, c.layer_index, c.channel_index, r)?;
        }
        Ok(())
    }
}

/// Samples per propagation batch in [`component_relevance_report`].
const REPORT_CHUNK: usize = 16;

/// Averages per-sample component relevance over the reference set. Chunks
/// may be processed in parallel on clones of the frozen network; the sum
/// runs in sample order so the result does not depend on scheduling.
pub fn component_relevance_report<T: Scalar>(
    net: &Network<T>,
    reference: &ReferenceSet<T>,
    cfg: &LrpConfig,
) -> Result<RelevanceReport, LrpError> {
    if reference.is_empty() {
        return Err(LrpError::EmptyReferenceSet);
    }
    let components = enumerate_components(net);
    let m = reference.len();
    let starts: Vec<usize> = (0..m).step_by(REPORT_CHUNK).collect();
    let chunks = starts
        .par_iter()
        .map(|&start| {
            let end = (start + REPORT_CHUNK).min(m);
            let mut local = net.clone();
            let x = reference.images.slice_batch(start, end);
            let logits = local.forward(&x, true)?;
            let labels = reference.labels.slice_batch(start, end);
            let init = initial_relevance(&logits, Some(&labels), cfg.init)?;
            let rmap = propagate_with(&local, init, cfg)?;
            component_relevance(&rmap, &local, &components)
        })
        .collect::<Result<Vec<_>, LrpError>>()?;
    let mut sums = vec![0.0f64; components.len()];
    for per_sample in chunks.iter().flatten() {
        for (s, v) in sums.iter_mut().zip(per_sample) {
            *s += v;
        }
    }
    let mean_relevance = sums.into_iter().map(|s| s / m as f64).collect();
    Ok(RelevanceReport {
        components,
        mean_relevance,
        sample_count: m,
    })
}

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::layer::{Geometry, Layer, LayerKind, LayerSpec};
use crate::nn::{NnError, Tensor};
use crate::scalar::Scalar;

/// Flat view of all trainable parameters in canonical order: layer order,
/// then output channel, then fan-in, with each channel's bias last.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T>(Vec<T>);

impl<T: Scalar> ParameterVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterVector<U> {
        ParameterVector(self.0.iter().map(|v| U::of(v.as_f64())).collect())
    }

    /// Bitwise equality (distinguishes `0.0` from `-0.0`).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

/// Location of one parameterized layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub layer: usize,
    pub offset: usize,
    pub channels: usize,
    pub fan_in: usize,
}

impl LayerSlot {
    /// Parameters per output channel (fan-in weights plus the bias).
    pub fn channel_len(&self) -> usize {
        self.fan_in + 1
    }

    pub fn len(&self) -> usize {
        self.channels * self.channel_len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels == 0
    }

    pub fn channel_range(&self, channel: usize) -> Range<usize> {
        let start = self.offset + channel * self.channel_len();
        start..start + self.channel_len()
    }
}

/// Canonical map from (layer, channel) to contiguous parameter ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterIndex {
    slots: Vec<LayerSlot>,
    total: usize,
}

impl ParameterIndex {
    fn build(geometries: &[Geometry]) -> Self {
        let mut slots = Vec::new();
        let mut offset = 0;
        for (layer, g) in geometries.iter().enumerate() {
            if let Some((channels, fan_in)) = g.channels_and_fan_in() {
                let slot = LayerSlot {
                    layer,
                    offset,
                    channels,
                    fan_in,
                };
                offset += slot.len();
                slots.push(slot);
            }
        }
        Self {
            slots,
            total: offset,
        }
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn slot(&self, layer: usize) -> Option<&LayerSlot> {
        self.slots.iter().find(|s| s.layer == layer)
    }

    pub fn channel_range(&self, layer: usize, channel: usize) -> Option<Range<usize>> {
        let slot = self.slot(layer)?;
        (channel < slot.channels).then(|| slot.channel_range(channel))
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Architecture of a network: per-sample input shape and layer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Desk-scale CNN for 3x32x32 inputs.
    ///
    /// A 4x4 max-pool stem reduces the image to 8x8 before two
    /// conv-relu-pool blocks and a dense head. Every prunable channel holds
    /// under 2% of the parameters, so whole-channel pruning can approach
    /// the requested rate closely.
    pub fn default_cnn(input_shape: &[usize], classes: usize) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            layers: vec![
                LayerSpec::MaxPool2d { size: 4 },
                LayerSpec::Conv2d {
                    out_channels: 8,
                    kernel: 3,
                    same_padding: true,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { size: 2 },
                LayerSpec::Conv2d {
                    out_channels: 16,
                    kernel: 3,
                    same_padding: true,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { out_features: 32 },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out_features: classes,
                },
            ],
        }
    }

    /// Per-sample shape after each layer, checking that layers compose.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let g = Geometry::resolve(spec, &shape, i)?;
            shape = g.output_shape(&shape);
            if shape.contains(&0) {
                return Err(NnError::InvalidArchitecture {
                    layer: i,
                    msg: format!("layer produces an empty output {shape:?}"),
                });
            }
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }
}

/// Ordered layer stack with cached activations for backprop and relevance
/// propagation.
///
/// Single-writer: the caching forward pass and training steps take
/// `&mut self`. Clone the network to work on several batches concurrently.
#[derive(Debug, Clone)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    index: ParameterIndex,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with all parameters zero.
    pub fn new(arch: &Architecture) -> Result<Self, NnError> {
        if arch.input_shape.is_empty() || arch.input_shape.contains(&0) {
            return Err(NnError::InvalidArchitecture {
                layer: 0,
                msg: format!("invalid input shape {:?}", arch.input_shape),
            });
        }
        let mut shape = arch.input_shape.clone();
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            let g = Geometry::resolve(spec, &shape, i)?;
            let layer = Layer::new(g, shape.clone());
            shape = layer.output_shape.clone();
            layers.push(layer);
        }
        match layers.last() {
            Some(l) if l.output_shape.len() == 1 => {}
            _ => {
                return Err(NnError::InvalidArchitecture {
                    layer: arch.layers.len().saturating_sub(1),
                    msg: "network must end in a flat [num_classes] output".into(),
                })
            }
        }
        let geometries: Vec<_> = layers.iter().map(|l| l.geometry).collect();
        Ok(Self {
            input_shape: arch.input_shape.clone(),
            layers,
            index: ParameterIndex::build(&geometries),
        })
    }

    /// Builds a network with He-uniform weights and zero biases.
    pub fn with_he_init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self, NnError> {
        let mut net = Self::new(arch)?;
        net.he_uniform_init(rng);
        Ok(net)
    }

    pub fn he_uniform_init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            if let Some((_, fan_in)) = layer.geometry.channels_and_fan_in() {
                let limit = (6.0 / fan_in as f64).sqrt();
                for w in layer.weights.data_mut() {
                    *w = T::of(rng.random_range(-limit..limit));
                }
                layer.bias.data_mut().fill(T::zero());
            }
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(|l| l.geometry.spec()).collect(),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(|l| l.output_shape.as_slice())
            .unwrap_or(&self.input_shape)
    }

    pub fn num_classes(&self) -> usize {
        self.output_shape()[0]
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn parameter_index(&self) -> &ParameterIndex {
        &self.index
    }

    pub fn param_count(&self) -> usize {
        self.index.total()
    }

    /// Index of the final parameterized layer (the classifier), if any.
    pub fn classifier_layer(&self) -> Option<usize> {
        self.index.slots().last().map(|s| s.layer)
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<(), NnError> {
        if batch.shape().len() != self.input_shape.len() + 1 || batch.sample_shape() != self.input_shape.as_slice() {
            return Err(NnError::LayerShape {
                layer: 0,
                kind: self.layers.first().map(|l| l.kind().name()).unwrap_or("input"),
                expected: self.input_shape.clone(),
                got: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the batch through every layer and returns logits
    /// `[batch, num_classes]`. With `cache` set, each layer keeps its input
    /// for [`Network::backward`] and relevance propagation; otherwise any
    /// stale caches are dropped.
    pub fn forward(&mut self, batch: &Tensor<T>, cache: bool) -> Result<Tensor<T>, NnError> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &mut self.layers {
            let (y, arg) = layer.apply(&x);
            if cache {
                layer.cached_input = Some(x);
                layer.cached_argmax = arg;
            } else {
                layer.clear_cache();
            }
            x = y;
        }
        Ok(x)
    }

    /// Forward pass without touching caches.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer.apply(&x).0;
        }
        Ok(x)
    }

    /// Logits for a large set, evaluated in chunks of `chunk` samples.
    pub fn predict_chunked(&self, inputs: &Tensor<T>, chunk: usize) -> Result<Tensor<T>, NnError> {
        let n = inputs.batch();
        let classes = self.num_classes();
        let mut out = Vec::with_capacity(n * classes);
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            out.extend_from_slice(self.predict(&inputs.slice_batch(start, end))?.data());
            start = end;
        }
        Tensor::new(vec![n, classes], out)
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }

    /// Reverse-mode gradient of the loss with respect to every parameter,
    /// given the loss gradient at the logits. Requires a prior caching
    /// forward pass on the same batch.
    pub fn backward(&self, logit_grad: &Tensor<T>) -> Result<ParameterVector<T>, NnError> {
        let mut grads: Vec<Option<crate::nn::layer::LayerGrad<T>>> = vec![None; self.layers.len()];
        let first_param = self.index.slots().first().map(|s| s.layer).unwrap_or(0);
        let mut g = logit_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need_input = i > first_param;
            let (dx, lg) = layer.backward(i, &g, need_input)?;
            grads[i] = lg;
            match dx {
                Some(dx) => g = dx,
                None => break,
            }
        }
        let mut out = vec![T::zero(); self.index.total()];
        for slot in self.index.slots() {
            let lg = grads[slot.layer]
                .as_ref()
                .ok_or(NnError::MissingCache { layer: slot.layer })?;
            scatter_canonical(slot, &lg.weights, &lg.bias, &mut out);
        }
        Ok(ParameterVector(out))
    }

    /// Current parameters in canonical order.
    pub fn params(&self) -> ParameterVector<T> {
        let mut out = vec![T::zero(); self.index.total()];
        for slot in self.index.slots() {
            let layer = &self.layers[slot.layer];
            scatter_canonical(slot, layer.weights.data(), layer.bias.data(), &mut out);
        }
        ParameterVector(out)
    }

    pub fn set_params(&mut self, params: &ParameterVector<T>) -> Result<(), NnError> {
        if params.len() != self.index.total() {
            return Err(NnError::LengthMismatch {
                expected: self.index.total(),
                got: params.len(),
            });
        }
        let values = params.values();
        for slot in self.index.slots().to_vec() {
            let layer = &mut self.layers[slot.layer];
            for c in 0..slot.channels {
                let range = slot.channel_range(c);
                let (w, b) = values[range].split_at(slot.fan_in);
                layer.weights.data_mut()[c * slot.fan_in..(c + 1) * slot.fan_in].copy_from_slice(w);
                layer.bias.data_mut()[c] = b[0];
            }
        }
        Ok(())
    }

    /// Layers whose output channels can be pruned.
    pub fn parameterized_layers(&self) -> impl Iterator<Item = (usize, &Layer<T>)> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.kind().has_params())
    }

    pub fn layer_kind(&self, layer: usize) -> Option<LayerKind> {
        self.layers.get(layer).map(|l| l.kind())
    }
}

fn scatter_canonical<T: Scalar>(slot: &LayerSlot, weights: &[T], bias: &[T], out: &mut [T]) {
    for c in 0..slot.channels {
        let range = slot.channel_range(c);
        let dst = &mut out[range];
        dst[..slot.fan_in].copy_from_slice(&weights[c * slot.fan_in..(c + 1) * slot.fan_in]);
        dst[slot.fan_in] = bias[c];
    }
}

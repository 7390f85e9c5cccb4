use serde::{Deserialize, Serialize};

use crate::nn::{NnError, Tensor};
use crate::scalar::Scalar;

/// Architecture-level description of a layer. Input extents are inferred
/// from the preceding layer when a network is assembled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        out_features: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_true")]
        same_padding: bool,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        size: usize,
    },
    #[serde(rename = "globalavgpool")]
    GlobalAvgPool,
    Flatten,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    MaxPool2d,
    GlobalAvgPool,
    Flatten,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::GlobalAvgPool => "globalavgpool",
            LayerKind::Flatten => "flatten",
        }
    }

    pub fn has_params(self) -> bool {
        matches!(self, LayerKind::Dense | LayerKind::Conv2d)
    }
}

/// Resolved geometry of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        size: usize,
    },
    GlobalAvgPool,
    Flatten,
}

impl Geometry {
    pub fn kind(&self) -> LayerKind {
        match self {
            Geometry::Dense { .. } => LayerKind::Dense,
            Geometry::Conv2d { .. } => LayerKind::Conv2d,
            Geometry::Relu => LayerKind::Relu,
            Geometry::MaxPool2d { .. } => LayerKind::MaxPool2d,
            Geometry::GlobalAvgPool => LayerKind::GlobalAvgPool,
            Geometry::Flatten => LayerKind::Flatten,
        }
    }

    /// Resolves a spec against the per-sample shape flowing into it.
    pub fn resolve(spec: &LayerSpec, input: &[usize], layer: usize) -> Result<Self, NnError> {
        let bad = |msg: String| NnError::InvalidArchitecture { layer, msg };
        let geometry = match *spec {
            LayerSpec::Dense { out_features } => {
                if input.len() != 1 {
                    return Err(bad(format!(
                        "dense expects a flat input, got {input:?} (insert a flatten layer)"
                    )));
                }
                if out_features == 0 {
                    return Err(bad("dense needs out_features >= 1".into()));
                }
                Geometry::Dense {
                    in_features: input[0],
                    out_features,
                }
            }
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                same_padding,
            } => {
                if input.len() != 3 {
                    return Err(bad(format!("conv2d expects [C, H, W], got {input:?}")));
                }
                if kernel == 0 || out_channels == 0 {
                    return Err(bad("conv2d needs kernel >= 1 and out_channels >= 1".into()));
                }
                if same_padding && kernel % 2 == 0 {
                    return Err(bad("same padding requires an odd kernel".into()));
                }
                let padding = if same_padding { kernel / 2 } else { 0 };
                if input[1] + 2 * padding < kernel || input[2] + 2 * padding < kernel {
                    return Err(bad(format!("kernel {kernel} larger than input {input:?}")));
                }
                Geometry::Conv2d {
                    in_channels: input[0],
                    out_channels,
                    kernel_h: kernel,
                    kernel_w: kernel,
                    padding,
                }
            }
            LayerSpec::Relu => Geometry::Relu,
            LayerSpec::MaxPool2d { size } => {
                if input.len() != 3 {
                    return Err(bad(format!("maxpool2d expects [C, H, W], got {input:?}")));
                }
                if size == 0 || input[1] < size || input[2] < size {
                    return Err(bad(format!("pool size {size} invalid for input {input:?}")));
                }
                Geometry::MaxPool2d { size }
            }
            LayerSpec::GlobalAvgPool => {
                if input.len() != 3 {
                    return Err(bad(format!(
                        "globalavgpool expects [C, H, W], got {input:?}"
                    )));
                }
                Geometry::GlobalAvgPool
            }
            LayerSpec::Flatten => Geometry::Flatten,
        };
        Ok(geometry)
    }

    pub fn spec(&self) -> LayerSpec {
        match *self {
            Geometry::Dense { out_features, .. } => LayerSpec::Dense { out_features },
            Geometry::Conv2d {
                out_channels,
                kernel_h,
                padding,
                ..
            } => LayerSpec::Conv2d {
                out_channels,
                kernel: kernel_h,
                same_padding: padding > 0 || kernel_h == 1,
            },
            Geometry::Relu => LayerSpec::Relu,
            Geometry::MaxPool2d { size } => LayerSpec::MaxPool2d { size },
            Geometry::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Geometry::Flatten => LayerSpec::Flatten,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        match *self {
            Geometry::Dense { out_features, .. } => vec![out_features],
            Geometry::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                padding,
                ..
            } => vec![
                out_channels,
                input[1] + 2 * padding + 1 - kernel_h,
                input[2] + 2 * padding + 1 - kernel_w,
            ],
            Geometry::Relu => input.to_vec(),
            Geometry::MaxPool2d { size } => vec![input[0], input[1] / size, input[2] / size],
            Geometry::GlobalAvgPool => vec![input[0]],
            Geometry::Flatten => vec![input.iter().product()],
        }
    }

    /// (output channels, fan-in) for parameterized layers.
    pub fn channels_and_fan_in(&self) -> Option<(usize, usize)> {
        match *self {
            Geometry::Dense {
                in_features,
                out_features,
            } => Some((out_features, in_features)),
            Geometry::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some((out_channels, in_channels * kernel_h * kernel_w)),
            _ => None,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            Geometry::Dense {
                in_features,
                out_features,
            } => vec![out_features, in_features],
            Geometry::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => vec![out_channels, in_channels, kernel_h, kernel_w],
            _ => vec![0],
        }
    }
}

/// Gradients of one parameterized layer.
#[derive(Debug, Clone)]
pub struct LayerGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// One layer of a [`Network`](crate::nn::Network): geometry, parameters and
/// the input cached by the most recent caching forward pass.
#[derive(Debug, Clone)]
pub struct Layer<T> {
    pub(crate) geometry: Geometry,
    pub(crate) input_shape: Vec<usize>,
    pub(crate) output_shape: Vec<usize>,
    pub(crate) weights: Tensor<T>,
    pub(crate) bias: Tensor<T>,
    pub(crate) cached_input: Option<Tensor<T>>,
    /// Flat per-sample input index of each pooled output cell.
    pub(crate) cached_argmax: Option<Vec<usize>>,
}

impl<T: Scalar> Layer<T> {
    pub(crate) fn new(geometry: Geometry, input_shape: Vec<usize>) -> Self {
        let output_shape = geometry.output_shape(&input_shape);
        let (weights, bias) = match geometry.channels_and_fan_in() {
            Some((out, _)) => (
                Tensor::zeros(&geometry.weight_shape()),
                Tensor::zeros(&[out]),
            ),
            None => (Tensor::empty(), Tensor::empty()),
        };
        Self {
            geometry,
            input_shape,
            output_shape,
            weights,
            bias,
            cached_input: None,
            cached_argmax: None,
        }
    }

    pub fn kind(&self) -> LayerKind {
        self.geometry.kind()
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.bias
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn cached_input(&self) -> Option<&Tensor<T>> {
        self.cached_input.as_ref()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cached_input = None;
        self.cached_argmax = None;
    }

    /// Applies the layer to a batch. Returns the output and, for max
    /// pooling, the winning input index of every output cell.
    pub(crate) fn apply(&self, input: &Tensor<T>) -> (Tensor<T>, Option<Vec<usize>>) {
        let batch = input.batch();
        let mut out_shape = Vec::with_capacity(self.output_shape.len() + 1);
        out_shape.push(batch);
        out_shape.extend_from_slice(&self.output_shape);
        match self.geometry {
            Geometry::Dense {
                in_features,
                out_features,
            } => {
                let w = self.weights.data();
                let b = self.bias.data();
                let mut out = vec![T::zero(); batch * out_features];
                for (x, y) in input
                    .data()
                    .chunks_exact(in_features)
                    .zip(out.chunks_exact_mut(out_features))
                {
                    for (j, yj) in y.iter_mut().enumerate() {
                        let row = &w[j * in_features..(j + 1) * in_features];
                        *yj = b[j] + dot(row, x);
                    }
                }
                (tensor(out_shape, out), None)
            }
            Geometry::Conv2d { .. } => {
                let out = self.conv_forward(input.data(), batch, true);
                (tensor(out_shape, out), None)
            }
            Geometry::Relu => (
                input.map(|v| if v > T::zero() { v } else { T::zero() }),
                None,
            ),
            Geometry::MaxPool2d { size } => {
                let (c, h, w) = (self.input_shape[0], self.input_shape[1], self.input_shape[2]);
                let (oh, ow) = (h / size, w / size);
                let in_len = c * h * w;
                let out_len = c * oh * ow;
                let mut out = Vec::with_capacity(batch * out_len);
                let mut arg = Vec::with_capacity(batch * out_len);
                for x in input.data().chunks_exact(in_len) {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = ch * h * w + oy * size * w + ox * size;
                                for dy in 0..size {
                                    for dx in 0..size {
                                        let idx = ch * h * w + (oy * size + dy) * w + ox * size + dx;
                                        // strict comparison keeps the lowest flat index on ties
                                        if x[idx] > x[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                out.push(x[best]);
                                arg.push(best);
                            }
                        }
                    }
                }
                (tensor(out_shape, out), Some(arg))
            }
            Geometry::GlobalAvgPool => {
                let c = self.input_shape[0];
                let plane = self.input_shape[1] * self.input_shape[2];
                let scale = T::of(1.0 / plane as f64);
                let out = input
                    .data()
                    .chunks_exact(plane)
                    .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * scale)
                    .collect::<Vec<_>>();
                debug_assert_eq!(out.len(), batch * c);
                (tensor(out_shape, out), None)
            }
            Geometry::Flatten => (tensor(out_shape, input.data().to_vec()), None),
        }
    }

    /// Direct stride-1 convolution of a batch. `with_bias = false` yields the
    /// pure weighted sums.
    pub(crate) fn conv_forward(&self, input: &[T], batch: usize, with_bias: bool) -> Vec<T> {
        let Geometry::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            padding,
        } = self.geometry
        else {
            unreachable!("conv_forward on non-conv layer")
        };
        let (h, w) = (self.input_shape[1], self.input_shape[2]);
        let (oh, ow) = (self.output_shape[1], self.output_shape[2]);
        let in_len = in_channels * h * w;
        let out_plane = oh * ow;
        let weights = self.weights.data();
        let bias = self.bias.data();
        let mut out = vec![T::zero(); batch * out_channels * out_plane];
        for (x, y) in input
            .chunks_exact(in_len)
            .zip(out.chunks_exact_mut(out_channels * out_plane))
        {
            for o in 0..out_channels {
                let plane = &mut y[o * out_plane..(o + 1) * out_plane];
                if with_bias {
                    plane.fill(bias[o]);
                }
                for c in 0..in_channels {
                    let src = &x[c * h * w..(c + 1) * h * w];
                    for ky in 0..kernel_h {
                        for kx in 0..kernel_w {
                            let wv = weights[((o * in_channels + c) * kernel_h + ky) * kernel_w + kx];
                            let span = Span::new(ky, kx, padding, h, w, oh, ow);
                            for oy in span.y0..span.y1 {
                                let iy = oy + ky - padding;
                                let dst = &mut plane[oy * ow + span.x0..oy * ow + span.x1];
                                let s = &src[iy * w + span.x0 + kx - padding
                                    ..iy * w + span.x1 + kx - padding];
                                for (d, &v) in dst.iter_mut().zip(s) {
                                    *d += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Transposed convolution: scatters output-cell values `g` back onto the
    /// input grid through the weights. Shared by backprop and relevance
    /// redistribution.
    pub(crate) fn conv_transpose(&self, g: &[T], batch: usize) -> Vec<T> {
        let Geometry::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            padding,
        } = self.geometry
        else {
            unreachable!("conv_transpose on non-conv layer")
        };
        let (h, w) = (self.input_shape[1], self.input_shape[2]);
        let (oh, ow) = (self.output_shape[1], self.output_shape[2]);
        let in_len = in_channels * h * w;
        let out_plane = oh * ow;
        let weights = self.weights.data();
        let mut grad_in = vec![T::zero(); batch * in_len];
        for (gi, go) in grad_in
            .chunks_exact_mut(in_len)
            .zip(g.chunks_exact(out_channels * out_plane))
        {
            for o in 0..out_channels {
                let gplane = &go[o * out_plane..(o + 1) * out_plane];
                for c in 0..in_channels {
                    let dst_plane = &mut gi[c * h * w..(c + 1) * h * w];
                    for ky in 0..kernel_h {
                        for kx in 0..kernel_w {
                            let wv = weights[((o * in_channels + c) * kernel_h + ky) * kernel_w + kx];
                            let span = Span::new(ky, kx, padding, h, w, oh, ow);
                            for oy in span.y0..span.y1 {
                                let iy = oy + ky - padding;
                                let src = &gplane[oy * ow + span.x0..oy * ow + span.x1];
                                let dst = &mut dst_plane[iy * w + span.x0 + kx - padding
                                    ..iy * w + span.x1 + kx - padding];
                                for (d, &v) in dst.iter_mut().zip(src) {
                                    *d += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }

    /// Backpropagates `grad_out` through the layer using the cached input.
    /// Parameter gradients are returned for dense/conv layers; the input
    /// gradient is computed only when `need_input_grad` is set.
    pub(crate) fn backward(
        &self,
        layer_index: usize,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Option<LayerGrad<T>>), NnError> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or(NnError::MissingCache { layer: layer_index })?;
        let batch = input.batch();
        if grad_out.batch() != batch || grad_out.sample_shape() != self.output_shape.as_slice() {
            return Err(NnError::LayerShape {
                layer: layer_index,
                kind: self.kind().name(),
                expected: self.output_shape.clone(),
                got: grad_out.sample_shape().to_vec(),
            });
        }
        let in_shape = input.shape().to_vec();
        let g = grad_out.data();
        match self.geometry {
            Geometry::Dense {
                in_features,
                out_features,
            } => {
                let w = self.weights.data();
                let mut dw = vec![T::zero(); out_features * in_features];
                let mut db = vec![T::zero(); out_features];
                let mut dx = need_input_grad.then(|| vec![T::zero(); batch * in_features]);
                for b in 0..batch {
                    let x = &input.data()[b * in_features..(b + 1) * in_features];
                    let gb = &g[b * out_features..(b + 1) * out_features];
                    for (j, &gj) in gb.iter().enumerate() {
                        db[j] += gj;
                        let row = &mut dw[j * in_features..(j + 1) * in_features];
                        for (d, &xk) in row.iter_mut().zip(x) {
                            *d += gj * xk;
                        }
                        if let Some(dx) = dx.as_mut() {
                            let wrow = &w[j * in_features..(j + 1) * in_features];
                            let dxb = &mut dx[b * in_features..(b + 1) * in_features];
                            for (d, &wk) in dxb.iter_mut().zip(wrow) {
                                *d += gj * wk;
                            }
                        }
                    }
                }
                Ok((
                    dx.map(|d| tensor(in_shape, d)),
                    Some(LayerGrad {
                        weights: dw,
                        bias: db,
                    }),
                ))
            }
            Geometry::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                padding,
            } => {
                let (h, w) = (self.input_shape[1], self.input_shape[2]);
                let (oh, ow) = (self.output_shape[1], self.output_shape[2]);
                let in_len = in_channels * h * w;
                let out_plane = oh * ow;
                let mut dw = vec![T::zero(); self.weights.len()];
                let mut db = vec![T::zero(); out_channels];
                for b in 0..batch {
                    let x = &input.data()[b * in_len..(b + 1) * in_len];
                    let gb = &g[b * out_channels * out_plane..(b + 1) * out_channels * out_plane];
                    for o in 0..out_channels {
                        let gplane = &gb[o * out_plane..(o + 1) * out_plane];
                        db[o] += gplane.iter().fold(T::zero(), |a, &v| a + v);
                        for c in 0..in_channels {
                            let src = &x[c * h * w..(c + 1) * h * w];
                            for ky in 0..kernel_h {
                                for kx in 0..kernel_w {
                                    let span = Span::new(ky, kx, padding, h, w, oh, ow);
                                    let mut acc = T::zero();
                                    for oy in span.y0..span.y1 {
                                        let iy = oy + ky - padding;
                                        let gs = &gplane[oy * ow + span.x0..oy * ow + span.x1];
                                        let xs = &src[iy * w + span.x0 + kx - padding
                                            ..iy * w + span.x1 + kx - padding];
                                        acc += dot(gs, xs);
                                    }
                                    dw[((o * in_channels + c) * kernel_h + ky) * kernel_w + kx] += acc;
                                }
                            }
                        }
                    }
                }
                let dx = need_input_grad.then(|| tensor(in_shape, self.conv_transpose(g, batch)));
                Ok((
                    dx,
                    Some(LayerGrad {
                        weights: dw,
                        bias: db,
                    }),
                ))
            }
            Geometry::Relu => {
                let dx = need_input_grad.then(|| {
                    let d = input
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                        .collect();
                    tensor(in_shape, d)
                });
                Ok((dx, None))
            }
            Geometry::MaxPool2d { .. } => {
                let arg = self
                    .cached_argmax
                    .as_ref()
                    .ok_or(NnError::MissingCache { layer: layer_index })?;
                let dx = need_input_grad.then(|| tensor(in_shape, self.route_to_argmax(g, arg, batch)));
                Ok((dx, None))
            }
            Geometry::GlobalAvgPool => {
                let plane = self.input_shape[1] * self.input_shape[2];
                let scale = T::of(1.0 / plane as f64);
                let dx = need_input_grad.then(|| {
                    let mut d = Vec::with_capacity(input.len());
                    for &gv in g {
                        d.extend(std::iter::repeat_n(gv * scale, plane));
                    }
                    tensor(in_shape, d)
                });
                Ok((dx, None))
            }
            Geometry::Flatten => Ok((need_input_grad.then(|| tensor(in_shape, g.to_vec())), None)),
        }
    }

    /// Sends each pooled cell's value to its winning input cell.
    pub(crate) fn route_to_argmax(&self, g: &[T], arg: &[usize], batch: usize) -> Vec<T> {
        let in_len: usize = self.input_shape.iter().product();
        let out_len: usize = self.output_shape.iter().product();
        let mut dx = vec![T::zero(); batch * in_len];
        for b in 0..batch {
            for i in 0..out_len {
                dx[b * in_len + arg[b * out_len + i]] += g[b * out_len + i];
            }
        }
        dx
    }
}

/// Range of output rows/columns whose receptive-field tap (ky, kx) falls
/// inside the unpadded input.
struct Span {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

impl Span {
    #[inline]
    fn new(ky: usize, kx: usize, pad: usize, h: usize, w: usize, oh: usize, ow: usize) -> Self {
        // input row = out row + ky - pad must lie in [0, h)
        let y0 = pad.saturating_sub(ky);
        let y1 = oh.min((h + pad).saturating_sub(ky));
        let x0 = pad.saturating_sub(kx);
        let x1 = ow.min((w + pad).saturating_sub(kx));
        Span {
            y0,
            y1: y1.max(y0),
            x0,
            x1: x1.max(x0),
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn tensor<T: Scalar>(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("layer kernels produce consistent shapes")
}

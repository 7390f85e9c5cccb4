#![allow(dead_code)]

use fpsim::nn::{Architecture, Geometry, LayerSpec, Network, ParameterVector, Tensor};
use fpsim::Scalar;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type TestRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

fn conv(out: usize, kernel: usize, same: bool) -> LayerSpec {
    LayerSpec::Conv2d {
        out_channels: out,
        kernel,
        same_padding: same,
    }
}

/// A small random architecture drawn from a few families: plain MLP,
/// conv-pool-dense and conv with global average pooling.
pub fn random_arch(rng: &mut TestRng) -> Architecture {
    let classes = rng.random_range(2..=4);
    match rng.random_range(0..3) {
        0 => {
            let d = rng.random_range(3..=8);
            Architecture {
                input_shape: vec![d],
                layers: vec![
                    LayerSpec::Dense { out_features: rng.random_range(3..=10) },
                    LayerSpec::Relu,
                    LayerSpec::Dense { out_features: rng.random_range(3..=8) },
                    LayerSpec::Relu,
                    LayerSpec::Dense { out_features: classes },
                ],
            }
        }
        1 => {
            let c = rng.random_range(1..=2);
            let hw = rng.random_range(5..=7);
            Architecture {
                input_shape: vec![c, hw, hw],
                layers: vec![
                    conv(rng.random_range(2..=3), 3, rng.random_bool(0.5)),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2d { size: 2 },
                    LayerSpec::Flatten,
                    LayerSpec::Dense { out_features: rng.random_range(3..=6) },
                    LayerSpec::Relu,
                    LayerSpec::Dense { out_features: classes },
                ],
            }
        }
        _ => {
            let c = rng.random_range(1..=2);
            let hw = rng.random_range(4..=6);
            Architecture {
                input_shape: vec![c, hw, hw],
                layers: vec![
                    conv(rng.random_range(2..=4), 3, true),
                    LayerSpec::Relu,
                    conv(rng.random_range(2..=3), rng.random_range(0..2) * 2 + 1, true),
                    LayerSpec::Relu,
                    LayerSpec::GlobalAvgPool,
                    LayerSpec::Dense { out_features: classes },
                ],
            }
        }
    }
}

/// He-initialized network with either zero or uniform(-0.5, 0.5) biases.
pub fn random_net<T: Scalar>(arch: &Architecture, rng: &mut TestRng, zero_bias: bool) -> Network<T> {
    let mut net = Network::<T>::with_he_init(arch, rng).unwrap();
    if !zero_bias {
        for layer in net.layers_mut() {
            for b in layer.bias_mut().data_mut() {
                *b = T::of(rng.random_range(-0.5..0.5));
            }
        }
    }
    net
}

pub fn random_input<T: Scalar>(shape: &[usize], batch: usize, rng: &mut TestRng) -> Tensor<T> {
    let mut full = vec![batch];
    full.extend_from_slice(shape);
    let n = full.iter().product();
    Tensor::new(full, (0..n).map(|_| T::of(rng.random_range(-1.0..1.0))).collect()).unwrap()
}

/// ReLU sign bits and max-pool winners of the cached forward pass.
pub fn activation_pattern<T: Scalar>(net: &Network<T>) -> Vec<usize> {
    let mut out = Vec::new();
    for layer in net.layers() {
        let a = layer.cached_input().expect("forward ran with cache");
        match *layer.geometry() {
            Geometry::Relu => out.extend(a.data().iter().map(|&v| usize::from(v > T::zero()))),
            Geometry::MaxPool2d { size } => {
                let s = layer.input_shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                for b in 0..a.batch() {
                    let x = a.sample(b);
                    for ch in 0..c {
                        for oy in 0..h / size {
                            for ox in 0..w / size {
                                let mut best = (T::neg_infinity(), 0);
                                for dy in 0..size {
                                    for dx in 0..size {
                                        let i = ch * h * w + (oy * size + dy) * w + ox * size + dx;
                                        if x[i] > best.0 {
                                            best = (x[i], i);
                                        }
                                    }
                                }
                                out.push(best.1);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Independent dense forward: `y = W x + b` for a row-major `[out, in]` W.
pub fn matvec(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(j, &bj)| bj + (0..x.len()).map(|k| w[j * x.len() + k] * x[k]).sum::<f64>())
        .collect()
}

pub fn params_f64<T: Scalar>(p: &ParameterVector<T>) -> Vec<f64> {
    p.values().iter().map(|v| v.as_f64()).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

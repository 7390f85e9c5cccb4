use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{DataError, Dataset};
use crate::nn::Tensor;
use crate::rng::{stream_rng, SimRng, Stream};
use crate::scalar::Scalar;

/// Side length, in pixels, of the square blocks prototypes are built from.
const BLOCK: usize = 4;
/// Probability that a prototype block is lit.
const BLOCK_DENSITY: f64 = 0.2;
const MAX_POSITIVES: usize = 3;

/// Parameters of the synthetic multi-label generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// `[C, H, W]`
    pub shape: [usize; 3],
    /// Seeds the per-class prototypes; datasets that share it share classes.
    pub prototype_seed: u64,
    pub noise_std: f64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), DataError> {
        if self.classes == 0 || self.shape.contains(&0) {
            return Err(DataError::InvalidDims(format!(
                "classes {} and shape {:?} must be >= 1",
                self.classes, self.shape
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(DataError::InvalidDims(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        Ok(())
    }

    /// One fixed blocky pattern per class with values in `[0, 1]`.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let [c, h, w] = self.shape;
        let (gh, gw) = (h.div_ceil(BLOCK), w.div_ceil(BLOCK));
        let mut rng = stream_rng(self.prototype_seed, Stream::Prototypes, &[]);
        (0..self.classes)
            .map(|_| {
                let blocks: Vec<f64> = (0..c * gh * gw)
                    .map(|_| {
                        if rng.random_bool(BLOCK_DENSITY) {
                            rng.random_range(0.4..0.8)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mut img = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            img[(ch * h + y) * w + x] = blocks[(ch * gh + y / BLOCK) * gw + x / BLOCK];
                        }
                    }
                }
                img
            })
            .collect()
    }
}

/// Draws `n` samples. Each sample has 1 to 3 distinct positive classes; its
/// image is the sum of their prototypes plus Gaussian noise, clipped to
/// `[0, 1]`.
pub fn generate<T: Scalar>(spec: &SyntheticSpec, n: usize, sample_seed: u64) -> Result<Dataset<T>, DataError> {
    spec.validate()?;
    if n == 0 {
        return Err(DataError::InvalidDims("sample count must be >= 1".into()));
    }
    let protos = spec.prototypes();
    let [c, h, w] = spec.shape;
    let pixels = c * h * w;
    let l = spec.classes;
    let mut rng: SimRng = stream_rng(sample_seed, Stream::TrainData, &[spec.prototype_seed]);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut images = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n * l);
    for _ in 0..n {
        let k = rng.random_range(1..=MAX_POSITIVES.min(l));
        let positives = rand::seq::index::sample(&mut rng, l, k);
        let mut row = vec![T::zero(); l];
        let mut img = vec![0.0f64; pixels];
        for class in positives.iter() {
            row[class] = T::one();
            for (p, &v) in img.iter_mut().zip(&protos[class]) {
                *p += v;
            }
        }
        for p in img.iter_mut() {
            let e = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            images.push(T::of((*p + e).clamp(0.0, 1.0)));
        }
        labels.extend(row);
    }
    Dataset::new(Tensor::new(vec![n, c, h, w], images)?, Tensor::new(vec![n, l], labels)?)
}

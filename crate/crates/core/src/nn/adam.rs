use crate::nn::{NnError, ParameterVector};
use crate::scalar::Scalar;

/// Adam optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: ParameterVector<T>,
    pub second_moment: ParameterVector<T>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments with the usual defaults (β1 = 0.9, β2 = 0.999, ε = 1e-8).
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: ParameterVector::zeros(len),
            second_moment: ParameterVector::zeros(len),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterVector<T>,
    grad: &ParameterVector<T>,
    state: &mut AdamState<T>,
) -> Result<(), NnError> {
    let n = params.len();
    for len in [grad.len(), state.first_moment.len(), state.second_moment.len()] {
        if len != n {
            return Err(NnError::LengthMismatch { expected: n, got: len });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    let m = state.first_moment.values_mut();
    let v = state.second_moment.values_mut();
    for (i, (w, &g)) in params.values_mut().iter_mut().zip(grad.values()).enumerate() {
        let g = g.as_f64();
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let update = lr * (mi / correction1) / ((vi / correction2).sqrt() + eps);
        *w = T::of(w.as_f64() - update);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook scalar Adam, written independently of the vector version.
    fn scalar_adam(mut w: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut m, mut v) = (0.0, 0.0);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = ParameterVector::new(vec![0.5f32, -1.0, 2.0]);
        let before = p.clone();
        let mut s = AdamState::new(3, 1e-3);
        adam_step(&mut p, &ParameterVector::zeros(3), &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr_against_gradient_sign() {
        let g = [0.3, -2.0, 1e-3, -50.0];
        let mut p = ParameterVector::new(vec![0.0f64; 4]);
        let mut s = AdamState::new(4, 1e-3);
        adam_step(&mut p, &ParameterVector::new(g.to_vec()), &mut s).unwrap();
        for (w, gi) in p.values().iter().zip(g) {
            let expected = scalar_adam(0.0, &[gi], 1e-3);
            assert!((w - expected).abs() < 1e-15);
            // |update| = lr * |g| / (|g| + eps)
            assert!((w.abs() - 1e-3).abs() <= 1e-3 * 1e-8 / gi.abs() + 1e-15);
            assert_eq!(w.signum(), -gi.signum());
        }
    }

    #[test]
    fn two_constant_steps_match_scalar_reference() {
        let g = [0.7f32, -0.2, 3.0];
        // magnitudes below 0.5 keep f32 rounding under 3e-8
        let mut p = ParameterVector::new(vec![0.1f32, 0.2, -0.3]);
        let start = p.clone();
        let mut s = AdamState::new(3, 1e-3);
        let grad = ParameterVector::new(g.to_vec());
        adam_step(&mut p, &grad, &mut s).unwrap();
        adam_step(&mut p, &grad, &mut s).unwrap();
        for i in 0..3 {
            let expected = scalar_adam(start.values()[i] as f64, &[g[i] as f64; 2], 1e-3);
            assert!((p.values()[i] as f64 - expected).abs() < 1e-7);
        }
        assert_eq!(s.step_count, 2);

        let mut p64 = ParameterVector::new(vec![1.0f64, 2.0, -3.0]);
        let mut s64 = AdamState::new(3, 1e-3);
        let g64 = ParameterVector::new(g.iter().map(|&v| v as f64).collect());
        adam_step(&mut p64, &g64, &mut s64).unwrap();
        adam_step(&mut p64, &g64, &mut s64).unwrap();
        for i in 0..3 {
            let expected = scalar_adam([1.0, 2.0, -3.0][i], &[g[i] as f64; 2], 1e-3);
            assert!((p64.values()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut p = ParameterVector::new(vec![0.0f32; 3]);
        let mut s = AdamState::new(3, 1e-3);
        assert!(matches!(
            adam_step(&mut p, &ParameterVector::zeros(2), &mut s),
            Err(NnError::LengthMismatch { expected: 3, got: 2 })
        ));
    }
}

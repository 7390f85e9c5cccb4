use crate::nn::{NnError, Tensor};
use crate::scalar::Scalar;

/// Result of [`binary_cross_entropy`].
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub grad: Tensor<T>,
}

/// Mean binary cross-entropy over every (sample, class) cell, evaluated on
/// raw logits in the stable form `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
/// The gradient with respect to the logits is `(sigmoid(z) - y) / N` with
/// `N` the number of cells.
pub fn binary_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<LossOutput<T>, NnError> {
    if logits.shape() != targets.shape() {
        return Err(NnError::LengthMismatch {
            expected: logits.len(),
            got: targets.len(),
        });
    }
    let n = logits.len();
    if n == 0 {
        return Err(NnError::LengthMismatch { expected: 1, got: 0 });
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(n);
    for (index, (&z, &y)) in logits.data().iter().zip(targets.data()).enumerate() {
        let y = y.as_f64();
        if y != 0.0 && y != 1.0 {
            return Err(NnError::TargetNotBinary { index });
        }
        let z = z.as_f64();
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push(T::of((sigmoid(z) - y) * inv_n));
    }
    Ok(LossOutput {
        loss: total * inv_n,
        grad: Tensor::new(logits.shape().to_vec(), grad)?,
    })
}

/// Logistic function, evaluated without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_slice(shape, v).unwrap()
    }

    #[test]
    fn zero_logits_positive_targets_give_ln2() {
        let out = binary_cross_entropy(&t(&[2, 3], &[0.0; 6]), &t(&[2, 3], &[1.0; 6])).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn large_positive_logit() {
        // -ln(sigmoid(10)) = ln(1 + e^-10) = 4.539889921686464e-5 (evaluated with mpmath at 50 digits)
        let out = binary_cross_entropy(&t(&[1, 1], &[10.0]), &t(&[1, 1], &[1.0])).unwrap();
        assert!((out.loss - 4.539889921686464e-5).abs() < 1e-15);
    }

    #[test]
    fn gradient_at_zero_logit() {
        let out = binary_cross_entropy(&t(&[1, 1], &[0.0]), &t(&[1, 1], &[1.0])).unwrap();
        assert_eq!(out.grad.data(), &[-0.5]);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let out = binary_cross_entropy(&t(&[1, 2], &[1000.0, -1000.0]), &t(&[1, 2], &[0.0, 1.0])).unwrap();
        assert!((out.loss - 1000.0).abs() < 1e-9);
        assert!(out.grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn rejects_bad_targets_and_shapes() {
        assert!(matches!(
            binary_cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &t(&[1, 2], &[0.0, 0.5])),
            Err(NnError::TargetNotBinary { index: 1 })
        ));
        assert!(binary_cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &t(&[2, 1], &[0.0, 1.0])).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference_of_loss() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let y = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let out = binary_cross_entropy(&t(&[2, 2], &z), &y).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let fp = binary_cross_entropy(&t(&[2, 2], &zp), &y).unwrap().loss;
            let fm = binary_cross_entropy(&t(&[2, 2], &zm), &y).unwrap().loss;
            assert!(((fp - fm) / (2.0 * h) - out.grad.data()[i]).abs() < 1e-8);
        }
    }
}

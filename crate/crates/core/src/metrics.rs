//! Multi-label ranking metrics: per-class average precision and macro mAP.

use thiserror::Error;

use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no positive labels; average precision is undefined")]
    NoPositives,
    #[error("no class has a positive sample")]
    NoScorableClasses,
    #[error("score matrix {scores:?} and label matrix {labels:?} differ in shape")]
    ShapeMismatch { scores: Vec<usize>, labels: Vec<usize> },
}

/// Non-interpolated average precision: the mean of precision@r over the
/// ranks r of the positive samples, ranking by descending score with ties
/// broken by lower sample index.
pub fn average_precision<S: Scalar>(scores: &[S], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Per-class APs and their macro mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `None` for classes without positive samples, which do not enter the mean.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
}

/// Macro mAP over `[N, L]` score and label matrices. Logits can be passed
/// directly since AP only depends on the ranking.
pub fn mean_average_precision<S: Scalar>(scores: &Tensor<S>, labels: &Tensor<S>) -> Result<EvalResult, MetricsError> {
    if scores.shape() != labels.shape() || scores.shape().len() != 2 {
        return Err(MetricsError::ShapeMismatch {
            scores: scores.shape().to_vec(),
            labels: labels.shape().to_vec(),
        });
    }
    let (n, l) = (scores.shape()[0], scores.shape()[1]);
    let per_class_ap: Vec<Option<f64>> = (0..l)
        .map(|c| {
            let col: Vec<S> = (0..n).map(|i| scores.data()[i * l + c]).collect();
            let ys: Vec<bool> = (0..n).map(|i| labels.data()[i * l + c] > S::zero()).collect();
            match average_precision(&col, &ys) {
                Ok(ap) => Ok(Some(ap)),
                Err(MetricsError::NoPositives) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, _>>()?;
    let scored: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(MetricsError::NoScorableClasses);
    }
    let map = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(EvalResult { per_class_ap, map })
}

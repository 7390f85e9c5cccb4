use num_traits::{FromPrimitive, Num};

use crate::fedsim::FedError;
use crate::nn::ParameterVector;
use crate::scalar::Scalar;

/// One client's contribution to an aggregation round.
#[derive(Debug, Clone, Copy)]
pub struct ClientUpdate<'a, N> {
    pub client_id: usize,
    pub params: &'a [N],
    /// Local dataset size M_i.
    pub samples: usize,
}

/// `Σ (M_i / Σ_j M_j) · w_i`, summed in ascending client-id order.
///
/// Generic over any numeric type, so it can run on exact rationals as well
/// as floats.
pub fn weighted_average<N>(updates: &[ClientUpdate<'_, N>]) -> Result<Vec<N>, FedError>
where
    N: Num + Clone + FromPrimitive,
{
    let first = updates
        .first()
        .ok_or_else(|| FedError::Aggregate("no updates to aggregate".into()))?;
    let len = first.params.len();
    if let Some(u) = updates.iter().find(|u| u.params.len() != len) {
        return Err(FedError::Aggregate(format!(
            "client {} sent {} parameters, expected {len}",
            u.client_id,
            u.params.len()
        )));
    }
    let total: usize = updates.iter().map(|u| u.samples).sum();
    if total == 0 {
        return Err(FedError::Aggregate("total sample count is zero".into()));
    }
    let mut order: Vec<&ClientUpdate<'_, N>> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    if order.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(FedError::Aggregate("duplicate client id".into()));
    }
    let denom = N::from_usize(total).ok_or_else(|| FedError::Aggregate("sample count overflow".into()))?;
    let mut out = vec![N::zero(); len];
    for u in order {
        let alpha = N::from_usize(u.samples)
            .ok_or_else(|| FedError::Aggregate("sample count overflow".into()))?
            / denom.clone();
        for (acc, w) in out.iter_mut().zip(u.params) {
            *acc = acc.clone() + alpha.clone() * w.clone();
        }
    }
    Ok(out)
}

/// Size-weighted average of parameter vectors, accumulated in f64.
pub fn aggregate<T: Scalar>(updates: &[(usize, &ParameterVector<T>, usize)]) -> Result<ParameterVector<T>, FedError> {
    let widened: Vec<Vec<f64>> = updates
        .iter()
        .map(|(_, p, _)| p.values().iter().map(|v| v.as_f64()).collect())
        .collect();
    let views: Vec<ClientUpdate<'_, f64>> = updates
        .iter()
        .zip(&widened)
        .map(|(&(client_id, _, samples), params)| ClientUpdate {
            client_id,
            params,
            samples,
        })
        .collect();
    let avg = weighted_average(&views)?;
    Ok(ParameterVector::new(avg.into_iter().map(T::of).collect()))
}

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::{DataError, Dataset};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// Label-skewed split of a dataset across clients.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub clients: usize,
    /// Dirichlet concentration; small values give strongly skewed clients.
    pub alpha: f64,
    pub seed: u64,
}

fn dirichlet<R: Rng>(rng: &mut R, alpha: f64, dims: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let draws: Vec<f64> = (0..dims).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|d| d / total).collect()
    } else {
        vec![1.0 / dims as f64; dims]
    }
}

/// Client index sets (each sorted ascending).
///
/// Every client draws a class-prevalence vector from Dirichlet(alpha).
/// Clients then take turns drawing one remaining sample each, without
/// replacement, with probability proportional to the mean prevalence of
/// the sample's positive labels under that client's vector.
pub fn partition_indices<T: Scalar>(ds: &Dataset<T>, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>, DataError> {
    if spec.clients == 0 {
        return Err(DataError::TooFewSamples {
            samples: ds.len(),
            clients: 0,
        });
    }
    if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
        return Err(DataError::InvalidAlpha(spec.alpha));
    }
    if ds.len() < spec.clients {
        return Err(DataError::TooFewSamples {
            samples: ds.len(),
            clients: spec.clients,
        });
    }
    let l = ds.class_count();
    let mut rng = stream_rng(spec.seed, Stream::Partition, &[spec.clients as u64]);
    let prevalence: Vec<Vec<f64>> = (0..spec.clients).map(|_| dirichlet(&mut rng, spec.alpha, l)).collect();
    let positives: Vec<Vec<usize>> = (0..ds.len())
        .map(|n| {
            ds.labels
                .sample(n)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > T::zero())
                .map(|(c, _)| c)
                .collect()
        })
        .collect();
    let affinity: Vec<Vec<f64>> = prevalence
        .iter()
        .map(|p| {
            positives
                .iter()
                .map(|pos| pos.iter().map(|&c| p[c]).sum::<f64>() / pos.len() as f64)
                .collect()
        })
        .collect();

    let mut remaining: Vec<usize> = (0..ds.len()).collect();
    let mut parts = vec![Vec::new(); spec.clients];
    let mut turn = 0;
    while !remaining.is_empty() {
        let weights = &affinity[turn];
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let pick = if total > 0.0 && total.is_finite() {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = remaining.len() - 1;
            for (pos, &i) in remaining.iter().enumerate() {
                target -= weights[i];
                if target < 0.0 {
                    chosen = pos;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..remaining.len())
        };
        parts[turn].push(remaining.swap_remove(pick));
        turn = (turn + 1) % spec.clients;
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

pub fn partition<T: Scalar>(ds: &Dataset<T>, spec: &PartitionSpec) -> Result<Vec<Dataset<T>>, DataError> {
    Ok(partition_indices(ds, spec)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    fn dataset(n: usize) -> Dataset<f32> {
        let spec = SyntheticSpec {
            classes: 6,
            shape: [1, 4, 4],
            prototype_seed: 2,
            noise_std: 0.1,
        };
        generate(&spec, n, 17).unwrap()
    }

    #[test]
    fn single_client_gets_everything() {
        let ds = dataset(40);
        let parts = partition(&ds, &PartitionSpec { clients: 1, alpha: 0.5, seed: 1 }).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], ds);
    }

    #[test]
    fn skewed_split_is_disjoint_and_exhaustive() {
        let ds = dataset(200);
        let parts = partition_indices(&ds, &PartitionSpec { clients: 4, alpha: 0.1, seed: 3 }).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        assert!(parts.iter().all(|p| !p.is_empty()));
    }

    #[test]
    fn large_alpha_approaches_iid() {
        let ds = dataset(4000);
        let global = ds.label_frequencies();
        let parts = partition(&ds, &PartitionSpec { clients: 4, alpha: 1e6, seed: 5 }).unwrap();
        for p in parts {
            for (a, b) in p.label_frequencies().iter().zip(&global) {
                assert!((a - b).abs() < 0.05, "client freq {a} vs global {b}");
            }
        }
    }

    #[test]
    fn too_few_samples_or_bad_alpha() {
        let ds = dataset(3);
        assert!(matches!(
            partition_indices(&ds, &PartitionSpec { clients: 4, alpha: 1.0, seed: 0 }),
            Err(DataError::TooFewSamples { .. })
        ));
        assert!(matches!(
            partition_indices(&ds, &PartitionSpec { clients: 2, alpha: 0.0, seed: 0 }),
            Err(DataError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn every_client_gets_a_sample_when_n_equals_k() {
        let ds = dataset(5);
        let parts = partition_indices(&ds, &PartitionSpec { clients: 5, alpha: 0.05, seed: 8 }).unwrap();
        assert!(parts.iter().all(|p| p.len() == 1));
    }
}

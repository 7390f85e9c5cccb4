use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::fedsim::{ClientMasking, FedError};
use crate::nn::{adam_step, binary_cross_entropy, AdamState, Network, ParameterVector};
use crate::pruning::{apply_mask_in_place, PruningMask};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// A participating client: its private data, its latest local parameters
/// and optimizer state, and a model workspace.
#[derive(Debug, Clone)]
pub struct ClientState<T> {
    pub id: usize,
    pub data: Dataset<T>,
    pub params: ParameterVector<T>,
    pub optimizer: AdamState<T>,
    /// Base seed; each round's shuffling stream derives from (seed, id, round).
    pub seed: u64,
    net: Network<T>,
}

impl<T: Scalar> ClientState<T> {
    pub fn new(id: usize, data: Dataset<T>, net: Network<T>, learning_rate: f64, seed: u64) -> Result<Self, FedError> {
        if data.is_empty() {
            return Err(FedError::Config(format!("client {id} has no samples")));
        }
        if data.image_shape() != net.input_shape() {
            return Err(FedError::Config(format!(
                "client {id} images {:?} do not match network input {:?}",
                data.image_shape(),
                net.input_shape()
            )));
        }
        let n = net.param_count();
        Ok(Self {
            id,
            data,
            params: net.params(),
            optimizer: AdamState::new(n, learning_rate),
            seed,
            net,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.data.len()
    }
}

/// Result of one round of local training.
#[derive(Debug, Clone)]
pub struct LocalTrainOutcome {
    pub steps: usize,
    pub mean_loss: f64,
    /// Set when the configured batch size exceeded the local dataset and
    /// was clamped to this value.
    pub clamped_batch: Option<usize>,
}

/// Runs `epochs` of mini-batch Adam on binary cross-entropy starting from
/// `global`. The optimizer moments restart from zero every round. With a
/// mask, the parameters are re-masked after every step (or once before
/// upload, per `masking`), so masked coordinates of the result are exactly
/// zero. The trained vector is left in `client.params`.
pub fn local_train<T: Scalar>(
    client: &mut ClientState<T>,
    global: &ParameterVector<T>,
    mask: Option<&PruningMask>,
    masking: ClientMasking,
    epochs: usize,
    batch_size: usize,
    round: u32,
) -> Result<LocalTrainOutcome, FedError> {
    let n = client.data.len();
    if n == 0 {
        return Err(FedError::Config(format!("client {} has no samples", client.id)));
    }
    let clamped_batch = (batch_size > n).then_some(n);
    if clamped_batch.is_some() {
        log::warn!(
            "client {}: batch size {batch_size} exceeds {n} local samples; clamped",
            client.id
        );
    }
    let batch_size = batch_size.clamp(1, n);
    let lr = client.optimizer.learning_rate;
    client.optimizer = AdamState::new(global.len(), lr);
    client.params = global.clone();
    if let (Some(mask), ClientMasking::EveryStep) = (mask, masking) {
        apply_mask_in_place(&mut client.params, mask)?;
    }
    client.net.set_params(&client.params)?;

    let mut rng = stream_rng(client.seed, Stream::ClientShuffle, &[client.id as u64, round as u64]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut steps = 0;
    let mut loss_sum = 0.0;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let x = client.data.images.gather_batch(chunk);
            let y = client.data.labels.gather_batch(chunk);
            let logits = client.net.forward(&x, true)?;
            let loss = binary_cross_entropy(&logits, &y)?;
            let grad = client.net.backward(&loss.grad)?;
            adam_step(&mut client.params, &grad, &mut client.optimizer)?;
            if let (Some(mask), ClientMasking::EveryStep) = (mask, masking) {
                apply_mask_in_place(&mut client.params, mask)?;
            }
            client.net.set_params(&client.params)?;
            loss_sum += loss.loss;
            steps += 1;
        }
    }
    if let Some(mask) = mask {
        apply_mask_in_place(&mut client.params, mask)?;
    }
    client.net.clear_caches();
    Ok(LocalTrainOutcome {
        steps,
        mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
        clamped_batch,
    })
}

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::fedsim::{aggregate, local_train, ClientState, FedError, FederationConfig, Strategy};
use crate::lrp::{component_relevance_report, ReferenceSet};
use crate::metrics::mean_average_precision;
use crate::nn::{checkpoint, Network, ParameterVector};
use crate::pruning::{
    apply_mask_in_place, build_mask, build_mask_from_order, decode_sparse, encode_sparse, enumerate_components,
    PruningMask,
};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// Samples per forward pass during server-side evaluation.
const EVAL_CHUNK: usize = 128;

/// Server-side state: the global model, the reference set for relevance
/// estimation, and the mask once it exists.
#[derive(Debug, Clone)]
pub struct ServerState<T> {
    pub global: ParameterVector<T>,
    pub reference: ReferenceSet<T>,
    pub mask: Option<PruningMask>,
    /// Number of completed rounds.
    pub round: u32,
    pub strategy: Strategy,
    net: Network<T>,
}

impl<T: Scalar> ServerState<T> {
    pub fn new(net: Network<T>, reference: ReferenceSet<T>, strategy: Strategy) -> Self {
        Self {
            global: net.params(),
            reference,
            mask: None,
            round: 0,
            strategy,
            net,
        }
    }

    /// The global model with the current global parameters loaded.
    pub fn network(&self) -> Result<Network<T>, FedError> {
        let mut net = self.net.clone();
        net.set_params(&self.global)?;
        Ok(net)
    }

    /// `FPNN` checkpoint of the global model.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>, FedError> {
        Ok(checkpoint::encode_checkpoint(&self.network()?))
    }

    fn mask_or_dense(&self) -> PruningMask {
        self.mask
            .clone()
            .unwrap_or_else(|| PruningMask::keep_all(self.global.len()))
    }
}

/// Per-round telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    pub strategy: Strategy,
    pub q: f64,
    pub map: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub pruned_fraction: f64,
    pub wall_ms: u64,
}

/// A server with its clients and the held-out test set.
pub struct Federation<T> {
    pub config: FederationConfig,
    pub server: ServerState<T>,
    pub clients: Vec<ClientState<T>>,
    pub test: Dataset<T>,
}

impl<T: Scalar> Federation<T> {
    pub fn new(
        config: FederationConfig,
        server: ServerState<T>,
        clients: Vec<ClientState<T>>,
        test: Dataset<T>,
    ) -> Result<Self, FedError> {
        config.validate()?;
        if clients.len() != config.clients {
            return Err(FedError::Config(format!(
                "expected {} clients, got {}",
                config.clients,
                clients.len()
            )));
        }
        if server.strategy != config.strategy {
            return Err(FedError::Config("server strategy differs from config".into()));
        }
        Ok(Self {
            config,
            server,
            clients,
            test,
        })
    }

    /// Test-set mAP of the current global model.
    pub fn evaluate(&self) -> Result<f64, FedError> {
        let net = self.server.network()?;
        let logits = net.predict_chunked(&self.test.images, EVAL_CHUNK)?;
        Ok(mean_average_precision(&logits, &self.test.labels)?.map)
    }

    /// One communication round: distribute, train locally, upload,
    /// aggregate, build or re-apply the mask, evaluate.
    pub fn run_round(&mut self) -> Result<RoundRecord, FedError> {
        let cfg = &self.config;
        if self.server.round >= cfg.rounds {
            return Err(FedError::Config(format!("all {} rounds already ran", cfg.rounds)));
        }
        let started = Instant::now();
        let round = self.server.round + 1;
        let wire_mask = self.server.mask_or_dense();

        let down = encode_sparse(&self.server.global, &wire_mask, round)?;
        let down_bytes = down.to_bytes();
        let received: ParameterVector<T> =
            decode_sparse(&crate::pruning::SparsePayload::from_bytes(&down_bytes)?, &wire_mask)?;
        let mut downlink = (down_bytes.len() * self.clients.len()) as u64;

        let mask = self.server.mask.as_ref();
        let (masking, epochs, batch) = (cfg.client_masking, cfg.local_epochs, cfg.batch_size);
        self.clients
            .par_iter_mut()
            .map(|c| local_train(c, &received, mask, masking, epochs, batch, round).map(|_| ()))
            .collect::<Result<Vec<()>, FedError>>()?;

        let mut uplink = 0u64;
        let mut uploads = Vec::with_capacity(self.clients.len());
        for c in &self.clients {
            let bytes = encode_sparse(&c.params, &wire_mask, round)?.to_bytes();
            uplink += bytes.len() as u64;
            let payload = crate::pruning::SparsePayload::from_bytes(&bytes)?;
            uploads.push((c.id, decode_sparse::<T>(&payload, &wire_mask)?, c.sample_count()));
        }
        let views: Vec<_> = uploads.iter().map(|(id, p, m)| (*id, p, *m)).collect();
        self.server.global = aggregate(&views)?;

        if round == cfg.warmup && cfg.strategy.prunes() {
            let mask = self.construct_mask(round)?;
            downlink += (mask.encode_message().len() * self.clients.len()) as u64;
            apply_mask_in_place(&mut self.server.global, &mask)?;
            self.server.mask = Some(mask);
        } else if let Some(mask) = &self.server.mask {
            apply_mask_in_place(&mut self.server.global, mask)?;
        }
        self.server.round = round;

        let map = self.evaluate()?;
        Ok(RoundRecord {
            round,
            strategy: cfg.strategy,
            q: if cfg.strategy.prunes() { cfg.pruning_rate } else { 0.0 },
            map,
            uplink_bytes: uplink,
            downlink_bytes: downlink,
            pruned_fraction: self.server.mask.as_ref().map_or(0.0, |m| m.pruned_fraction()),
            wall_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn construct_mask(&self, round: u32) -> Result<PruningMask, FedError> {
        let cfg = &self.config;
        let net = self.server.network()?;
        let total = net.param_count();
        let mask = match cfg.strategy {
            Strategy::Proposed => {
                let report = component_relevance_report(&net, &self.server.reference, &cfg.lrp)?;
                build_mask(&report, &report.components, cfg.pruning_rate, total, round)?
            }
            Strategy::Random => {
                let components = enumerate_components(&net);
                let mut order: Vec<usize> = components.iter().map(|c| c.id).collect();
                order.shuffle(&mut stream_rng(cfg.seed, Stream::RandomPruning, &[round as u64]));
                build_mask_from_order(&order, &components, cfg.pruning_rate, total, round)?
            }
            Strategy::Standard => unreachable!("standard strategy never builds a mask"),
        };
        log::info!(
            "round {round}: {} mask prunes {} components ({:.2}% of parameters)",
            cfg.strategy,
            mask.pruned_component_ids().len(),
            100.0 * mask.pruned_fraction()
        );
        Ok(mask)
    }
}

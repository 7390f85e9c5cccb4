use std::io::Write;
use std::path::Path;

use crate::data::{generate, partition, PartitionSpec, SyntheticSpec};
use crate::fedsim::{ClientState, FedError, Federation, FederationConfig, RoundRecord, ServerState};
use crate::nn::{checkpoint, Architecture, Network};
use crate::pruning::PruningMask;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::scalar::Scalar;

pub const RECORDS_HEADER: &str = "round,strategy,q,map,uplink_bytes,downlink_bytes,pruned_fraction,wall_ms";

/// Synthetic data settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub reference_samples: usize,
    pub classes: usize,
    pub image_shape: [usize; 3],
    pub noise_std: f64,
    pub dirichlet_alpha: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_samples: 4096,
            test_samples: 512,
            reference_samples: 64,
            classes: 8,
            image_shape: [3, 32, 32],
            noise_std: 0.1,
            dirichlet_alpha: 0.5,
        }
    }
}

/// Everything needed to reproduce one federated run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub federation: FederationConfig,
    pub data: DataConfig,
    /// `None` selects [`Architecture::default_cnn`].
    pub architecture: Option<Architecture>,
    /// Write measured round durations into `wall_ms`. Off by default so
    /// that record files are reproducible byte for byte.
    pub record_wall_time: bool,
}

impl RunConfig {
    pub fn architecture(&self) -> Architecture {
        self.architecture
            .clone()
            .unwrap_or_else(|| Architecture::default_cnn(&self.data.image_shape, self.data.classes))
    }
}

/// Generates data, partitions it and initializes server and clients. All
/// randomness derives from `config.federation.seed`.
pub fn build_federation<T: Scalar>(config: &RunConfig) -> Result<Federation<T>, FedError> {
    let fed = &config.federation;
    fed.validate()?;
    let d = &config.data;
    if d.train_samples < fed.clients {
        return Err(FedError::Config(format!(
            "{} training samples cannot cover {} clients",
            d.train_samples, fed.clients
        )));
    }
    let seed = fed.seed;
    let spec = SyntheticSpec {
        classes: d.classes,
        shape: d.image_shape,
        prototype_seed: derive_seed(seed, Stream::Prototypes, &[]),
        noise_std: d.noise_std,
    };
    let train = generate::<T>(&spec, d.train_samples, derive_seed(seed, Stream::TrainData, &[]))?;
    let test = generate::<T>(&spec, d.test_samples, derive_seed(seed, Stream::TestData, &[]))?;
    let reference = generate::<T>(&spec, d.reference_samples, derive_seed(seed, Stream::ReferenceData, &[]))?;
    let shards = partition(
        &train,
        &PartitionSpec {
            clients: fed.clients,
            alpha: d.dirichlet_alpha,
            seed: derive_seed(seed, Stream::Partition, &[]),
        },
    )?;

    let arch = config.architecture();
    if arch.input_shape != d.image_shape {
        return Err(FedError::Config(format!(
            "architecture input {:?} differs from image shape {:?}",
            arch.input_shape, d.image_shape
        )));
    }
    if arch.infer_shapes()?.last().map(|s| s.as_slice()) != Some(&[d.classes][..]) {
        return Err(FedError::Config(format!("architecture must output {} classes", d.classes)));
    }
    let net = Network::<T>::with_he_init(&arch, &mut stream_rng(seed, Stream::Init, &[]))?;
    let clients = shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| ClientState::new(id, shard, net.clone(), fed.learning_rate, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let server = ServerState::new(net, reference.into_reference_set(), fed.strategy);
    Federation::new(fed.clone(), server, clients, test)
}

/// Outcome of a complete run.
#[derive(Debug, Clone)]
pub struct ExperimentOutput<T> {
    pub records: Vec<RoundRecord>,
    pub final_network: Network<T>,
    pub mask: Option<PruningMask>,
}

impl<T: Scalar> ExperimentOutput<T> {
    /// Writes `<stem>.csv` (round records) and `<stem>.fpnn` (final global
    /// model) into `dir`, plus `<stem>.fpmk` when a mask exists.
    pub fn persist(&self, dir: &Path, stem: &str) -> Result<(), FedError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| FedError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let csv = dir.join(format!("{stem}.csv"));
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &self.records, true).map_err(io(&csv))?;
        std::fs::write(&csv, buf).map_err(io(&csv))?;
        checkpoint::save_checkpoint(&self.final_network, &dir.join(format!("{stem}.fpnn")))?;
        if let Some(mask) = &self.mask {
            mask.save(&dir.join(format!("{stem}.fpmk")))?;
        }
        Ok(())
    }
}

pub fn run_experiment<T: Scalar>(config: &RunConfig) -> Result<ExperimentOutput<T>, FedError> {
    run_experiment_with(config, |_, _| {})
}

/// Runs every round, calling `observe` after each with the record and the
/// server state at round end.
pub fn run_experiment_with<T: Scalar, F>(config: &RunConfig, mut observe: F) -> Result<ExperimentOutput<T>, FedError>
where
    F: FnMut(&RoundRecord, &ServerState<T>),
{
    let mut fed = build_federation::<T>(config)?;
    let mut records = Vec::with_capacity(config.federation.rounds as usize);
    for _ in 0..config.federation.rounds {
        let mut record = fed.run_round()?;
        if !config.record_wall_time {
            record.wall_ms = 0;
        }
        log::info!(
            "{} q={} round {}: mAP {:.4}, up {} B, down {} B",
            record.strategy,
            record.q,
            record.round,
            record.map,
            record.uplink_bytes,
            record.downlink_bytes
        );
        observe(&record, &fed.server);
        records.push(record);
    }
    Ok(ExperimentOutput {
        records,
        final_network: fed.server.network()?,
        mask: fed.server.mask.clone(),
    })
}

pub fn write_records_csv<W: Write>(mut w: W, records: &[RoundRecord], header: bool) -> std::io::Result<()> {
    if header {
        writeln!(w, "{RECORDS_HEADER}")?;
    }
    for r in records {
        writeln!(
            w,
            "{},{},{},{:.6},{},{},{:.6},{}",
            r.round, r.strategy, r.q, r.map, r.uplink_bytes, r.downlink_bytes, r.pruned_fraction, r.wall_ms
        )?;
    }
    Ok(())
}

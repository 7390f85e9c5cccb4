//! JSON experiment configuration: every federation and data-generator
//! setting plus the strategy/pruning-rate sweep. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fedsim::{ClientMasking, DataConfig, FederationConfig, RunConfig, Strategy};
use crate::lrp::{BiasRule, LrpConfig, RelevanceInit};
use crate::nn::{Architecture, LayerSpec};

/// A configuration problem, with the 1-based line it refers to when known.
#[derive(Debug, Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub clients: usize,
    pub rounds: u32,
    pub local_epochs: usize,
    pub warmup: u32,
    pub pruning_rates: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub lrp_epsilon: f64,
    pub lrp_bias_rule: BiasRule,
    pub lrp_init: RelevanceInit,
    pub client_masking: ClientMasking,
    pub train_samples: usize,
    pub test_samples: usize,
    pub reference_samples: usize,
    pub classes: usize,
    pub image_shape: [usize; 3],
    pub noise_std: f64,
    pub dirichlet_alpha: f64,
    /// Layer list; `null` selects the built-in desk-scale CNN.
    pub architecture: Option<Vec<LayerSpec>>,
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fed = FederationConfig::default();
        let data = DataConfig::default();
        Self {
            clients: fed.clients,
            rounds: fed.rounds,
            local_epochs: fed.local_epochs,
            warmup: fed.warmup,
            pruning_rates: vec![fed.pruning_rate],
            strategies: vec![Strategy::Standard, Strategy::Proposed],
            batch_size: fed.batch_size,
            learning_rate: fed.learning_rate,
            seed: fed.seed,
            lrp_epsilon: fed.lrp.epsilon,
            lrp_bias_rule: fed.lrp.bias_rule,
            lrp_init: fed.lrp.init,
            client_masking: fed.client_masking,
            train_samples: data.train_samples,
            test_samples: data.test_samples,
            reference_samples: data.reference_samples,
            classes: data.classes,
            image_shape: data.image_shape,
            noise_std: data.noise_std,
            dirichlet_alpha: data.dirichlet_alpha,
            architecture: None,
            record_wall_time: false,
        }
    }
}

/// One (strategy, pruning rate) combination of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub strategy: Strategy,
    pub q: f64,
    pub run: RunConfig,
}

impl Cell {
    /// File-name stem, e.g. `proposed_q0.2`.
    pub fn stem(&self) -> String {
        match self.strategy {
            Strategy::Standard => "standard".to_string(),
            s => format!("{s}_q{}", self.q),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError {
            line: Some(e.line()).filter(|&l| l > 0),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|(key, message)| ConfigError {
            line: key_line(text, key),
            message,
        })?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Range checks. On failure returns the offending key and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let err = |k: &'static str, m: String| Err((k, m));
        if self.clients == 0 {
            return err("clients", "clients must be >= 1".into());
        }
        if self.rounds == 0 {
            return err("rounds", "rounds must be >= 1".into());
        }
        if self.warmup == 0 || self.warmup > self.rounds {
            return err(
                "warmup",
                format!("warmup must satisfy 1 <= warmup <= rounds, got {} with rounds {}", self.warmup, self.rounds),
            );
        }
        if self.local_epochs == 0 {
            return err("local_epochs", "local_epochs must be >= 1".into());
        }
        if self.strategies.is_empty() {
            return err("strategies", "at least one strategy is required".into());
        }
        if self.strategies.iter().any(|s| s.prunes()) && self.pruning_rates.is_empty() {
            return err("pruning_rates", "pruning strategies need at least one pruning rate".into());
        }
        if let Some(q) = self.pruning_rates.iter().find(|q| !(0.0..1.0).contains(*q)) {
            return err("pruning_rates", format!("pruning rate {q} must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return err("batch_size", "batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate", format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lrp_epsilon >= 0.0 && self.lrp_epsilon.is_finite()) {
            return err("lrp_epsilon", format!("lrp_epsilon must be >= 0, got {}", self.lrp_epsilon));
        }
        if self.train_samples < self.clients {
            return err(
                "train_samples",
                format!("train_samples ({}) must be >= clients ({})", self.train_samples, self.clients),
            );
        }
        if self.test_samples == 0 || self.reference_samples == 0 {
            return err("test_samples", "test_samples and reference_samples must be >= 1".into());
        }
        if self.classes == 0 || self.image_shape.contains(&0) {
            return err("image_shape", "classes and image dimensions must be >= 1".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return err("noise_std", format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return err("dirichlet_alpha", format!("dirichlet_alpha must be > 0, got {}", self.dirichlet_alpha));
        }
        let arch = self.architecture_spec();
        match arch.infer_shapes() {
            Ok(shapes) if shapes.last().map(|s| s.as_slice()) == Some(&[self.classes][..]) => {}
            Ok(shapes) => {
                return err(
                    "architecture",
                    format!("network output {:?} must be [{}]", shapes.last(), self.classes),
                )
            }
            Err(e) => return err("architecture", e.to_string()),
        }
        Ok(())
    }

    pub fn architecture_spec(&self) -> Architecture {
        match &self.architecture {
            Some(layers) => Architecture {
                input_shape: self.image_shape.to_vec(),
                layers: layers.clone(),
            },
            None => Architecture::default_cnn(&self.image_shape, self.classes),
        }
    }

    fn run_config(&self, strategy: Strategy, q: f64) -> RunConfig {
        RunConfig {
            federation: FederationConfig {
                clients: self.clients,
                rounds: self.rounds,
                local_epochs: self.local_epochs,
                warmup: self.warmup,
                pruning_rate: q,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                seed: self.seed,
                lrp: LrpConfig {
                    epsilon: self.lrp_epsilon,
                    bias_rule: self.lrp_bias_rule,
                    init: self.lrp_init,
                },
                strategy,
                client_masking: self.client_masking,
            },
            data: DataConfig {
                train_samples: self.train_samples,
                test_samples: self.test_samples,
                reference_samples: self.reference_samples,
                classes: self.classes,
                image_shape: self.image_shape,
                noise_std: self.noise_std,
                dirichlet_alpha: self.dirichlet_alpha,
            },
            architecture: Some(self.architecture_spec()),
            record_wall_time: self.record_wall_time,
        }
    }

    /// Sweep cells in strategy order, one per pruning rate for pruning
    /// strategies and a single q = 0 cell for the standard strategy. Every
    /// cell shares the base seed, so data and initialization coincide.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        let mut seen = Vec::new();
        for &s in &self.strategies {
            if seen.contains(&s) {
                continue;
            }
            seen.push(s);
            if s.prunes() {
                for &q in &self.pruning_rates {
                    out.push(Cell {
                        strategy: s,
                        q,
                        run: self.run_config(s, q),
                    });
                }
            } else {
                out.push(Cell {
                    strategy: s,
                    q: 0.0,
                    run: self.run_config(s, 0.0),
                });
            }
        }
        out
    }
}

/// 1-based line of the first occurrence of `"key"` in the document.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

//! Deterministic federated-learning simulator with relevance-guided
//! structured pruning of the shared model.
//!
//! The core is generic over the floating-point [`Scalar`] type; the aliases
//! at the crate root fix it to `f32`, the precision used on the wire and in
//! checkpoints.

pub mod config;
pub mod data;
pub mod fedsim;
pub mod lrp;
pub mod metrics;
pub mod nn;
pub mod pruning;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod wire;

pub use scalar::Scalar;

pub type Tensor = nn::Tensor<f32>;
pub type Network = nn::Network<f32>;
pub type ParameterVector = nn::ParameterVector<f32>;
pub type AdamState = nn::AdamState<f32>;
pub type Dataset = data::Dataset<f32>;
pub type RelevanceMap = lrp::RelevanceMap<f32>;
pub type ClientState = fedsim::ClientState<f32>;
pub type ServerState = fedsim::ServerState<f32>;

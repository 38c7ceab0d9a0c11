//! Causal what-if analysis for ABR video streaming sessions.
//!
//! Given a per-chunk session log (sizes, timings, TCP state at each chunk
//! start), an embedded HMM over quantized capacity states infers the latent
//! ground-truth bandwidth the network could have delivered. Sampled capacity
//! traces then drive counterfactual replays (different ABR, buffer, or
//! quality ladder) and interventional next-chunk download-time predictions.

pub mod core_model;
pub mod ehmm;
pub mod error;
pub mod harness;
pub mod inference;
pub mod metrics;
pub mod player_sim;
pub mod tcp_estimator;

pub use error::{Result, VeritasError};

//! Conditional and masked conditional neural networks over spectrogram frames.
//!
//! The crate covers the whole path from PCM audio to a clip-level decision:
//! log-mel + delta features ([`features`]), band masks ([`maskgen`]), the
//! conditional network and its gradients ([`netcore`]), ADAM training with
//! early stopping ([`optim`]), and fold-based evaluation ([`datasets`]).

pub mod config;
pub mod datasets;
pub mod error;
pub mod features;
pub mod maskgen;
pub mod netcore;
pub mod optim;
pub mod rng;

pub use config::{load_config, LayerConfig, ModelConfig};
pub use error::{Error, Result};

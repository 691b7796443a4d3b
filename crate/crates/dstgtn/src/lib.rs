//! Traffic forecasting with a dynamic spatio-temporal graph transformer:
//! learned periodic/time-varying embeddings, per-node temporal
//! self-attention, attention-generated per-slice graphs with learned
//! all-pass/low-pass filter splits, and an Adam/MAE training protocol with
//! chronological splits.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dstm;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod temporal;
pub mod train;

pub use config::{AppConfig, ModelConfig, TrainConfig};
pub use error::{DataError, Error, ModelError, TrainError};
pub use model::{expected_param_count, Model};

//! Music genre classification pipeline: audio ingest, log-mel features,
//! leakage-safe datasets, models, training, metrics, baselines and recommendation.

pub mod audio;
pub mod baselines;
mod colormap;
pub mod dataset;
pub mod dsp;
mod error;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod recommend;
pub mod synth;
pub mod trainer;

pub use error::{CoreError, Result};

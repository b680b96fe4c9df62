//! Bayesian fitting of an intervention-aware SEIRD model to cumulative case
//! counts by random-walk Metropolis-Hastings.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod dynamics;
pub mod fit;
pub mod model;
pub mod optimize;
pub mod output;
pub mod sampler;
pub mod stats;

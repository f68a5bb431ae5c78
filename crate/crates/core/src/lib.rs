//! Frequency-shift-keying MIMO radar depth imaging with optical depth priors.

pub mod config;
pub mod correlate;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod prior;
pub mod reconstruct;
pub mod scene;
pub mod signal;
pub mod sim;

pub use error::{Error, Result};

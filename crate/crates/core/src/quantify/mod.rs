//! Inference pipeline, physiological measures and agreement statistics.

pub mod physio;
mod pipeline;
mod report;
mod stats;

pub use physio::*;
pub use pipeline::*;
pub use report::*;
pub use stats::*;

//! Heterogeneous graph neural networks for phishing-account detection.

pub mod bundle;
pub mod cli;
pub mod error;
pub mod features;
pub mod hgraph;
pub mod ingest;
pub mod layers;
pub mod metapath;
pub mod metrics;
pub mod numcore;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

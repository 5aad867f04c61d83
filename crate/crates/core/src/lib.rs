//! Detection of statistically significant hot and cold spots of demographic
//! group presence in aggregated urban mobility data, and their
//! characterization by income and points of interest.
//!
//! The pipeline runs in five stages, each in its own module:
//! [`ingest`] → [`geometry`] → [`metrics`] → [`spatial`] → [`characterize`].
//! [`synth`] builds synthetic fixtures with known ground truth and
//! [`pipeline`] drives full runs from a configuration file.

pub mod characterize;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod spatial;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

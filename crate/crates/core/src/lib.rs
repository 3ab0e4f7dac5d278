//! Post-hoc out-of-distribution scoring on precomputed features and logits.
//!
//! The pipeline is: fit in-distribution statistics ([`fitstats`]), score
//! samples ([`scores`], every score oriented so that higher means more OOD),
//! then evaluate ([`metrics`], [`protocol`]) or calibrate a threshold and flag
//! outliers. [`io`] handles the on-disk formats and [`cli`] wraps each stage
//! in a verb of the `oodscore` binary.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod fitstats;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod protocol;
pub mod scores;

pub use error::{Error, ErrorClass, Result};

//! Toolkit for classifying malware from byte-level visualizations.
//!
//! The pipeline runs end to end on CPU: raw binaries become grayscale
//! rasters ([`visualize`]), labeled image trees become reproducible
//! manifests with cap-based undersampling and stratified splits
//! ([`corpus`]), VGG-style networks are built, partially frozen and
//! fine-tuned ([`models`], [`nn`], [`train`]), and results are scored
//! with micro/macro precision and recall ([`metrics`]). The two-stage
//! model-selection harness lives in [`strategy`].
//!
//! Everything is deterministic under fixed seeds: same inputs, same
//! seeds, same bytes out. The `parallel` feature (on by default) runs
//! batch work on rayon; disabling it swaps in sequential fallbacks with
//! identical results.

pub mod corpus;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub(crate) mod par;
pub mod rng;
pub mod strategy;
pub mod train;
pub mod visualize;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

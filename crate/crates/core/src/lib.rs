//! Desk-scale adversarial training laboratory.
//!
//! The crate bundles a small reverse-mode differentiation engine
//! ([`numcore`]), an MLP classifier with an optional operation-label head
//! ([`model`]), ℓ∞ gradient attacks ([`attacks`]), label augmentation
//! ([`labelaug`]), three training regimes ([`training`]), a synthetic
//! corruption suite ([`corruptions`]), the robustness metric battery
//! ([`metrics`]) and dataset ingestion/generation ([`dataio`]).
//!
//! Everything is 64-bit floating point and deterministic given the seeds
//! carried in the configuration types.

pub mod attacks;
pub mod cli;
pub mod corruptions;
pub mod dataio;
pub mod error;
pub mod labelaug;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod rng;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
pub use numcore::Tensor;

//! Misclassification detection with robust-radius confidence scores.
//!
//! The crate bundles a small reverse-mode autodiff engine, an MLP classifier,
//! FGSM/PGD attacks, robust-radius estimators, baseline confidence scores,
//! selective-classification metrics, and adversarial training objectives.

pub mod attack;
pub mod bench;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod radius;
pub mod rng;
pub mod scores;
pub mod tensor;
pub mod training;

pub use error::{MisdError, Result};

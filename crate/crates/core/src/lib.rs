//! Environment-aware, prerequisite-free explanations for graph classifiers.
//!
//! The crate trains a small message-passing classifier on synthetic motif
//! graphs with controllable distribution shifts, infers latent
//! environments without parameters, learns variational subgraph generators
//! that only ever query the classifier's predictions, and scores the
//! resulting explanations with fidelity and unfaithfulness metrics.

pub mod config;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod gvag;
pub mod metrics;
pub mod nodevae;
pub mod npaf;
pub mod pipeline;
pub mod recon;
pub mod stats;
pub mod target;
pub mod tensor;

pub use error::{Error, Result};

//! Mixed-supervision tumour segmentation with von-Mises-Fisher kernel
//! representations.
//!
//! The library decomposes image features into likelihoods under a bank of
//! learned vMF distributions on the unit sphere, then trains lightweight
//! task heads on those compositional activations. Supervision can mix
//! dense pixel masks on a small labeled fraction with weak slice-level
//! presence labels derived from two-point annotations.
//!
//! Entry points:
//! - [`vmf`] — kernel bank, activations, clustering loss, spherical
//!   k-means initialization
//! - [`nn`] — the small convolutional building blocks (explicit
//!   forward/backward, double precision)
//! - [`model`] — feature extractor, task head, weak classifier and the
//!   reconstruction pre-trainer
//! - [`supervision`] — loss terms, label handling and the training loop
//! - [`data`] — synthetic dataset generation and volume ingestion
//! - [`metrics`] — Dice and 95th-percentile Hausdorff evaluation
//! - [`checkpoint`] — versioned binary model/bank serialization
//! - [`viz`] — per-kernel activation image export
//! - [`config`] / [`cli`] — TOML run configuration and the command
//!   pipeline behind the `vmfbrain` binary
//!
//! The `examples/` directory demonstrates each capability end to end.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod supervision;
pub mod viz;
pub mod vmf;

pub use error::{Result, VmfError};
pub use vmf::{
    clustering_loss, normalize_features, renormalize_kernels, vmf_activations, FeatureMap,
    KernelBank, VmfActivations,
};

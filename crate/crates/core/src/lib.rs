//! Differentially private federated transfer learning for stress detection
//! from wearable PPG data.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small dense network engine (forward, backprop, Adam, dropout,
//!   gradient clipping) operating on flat [`nn::ParameterSet`]s.
//! - [`dp`]: the Laplace mechanism applied to clipped client updates.
//! - [`fed`]: a simulated FedAvg round engine over per-user clients.
//! - [`signal`]: PPG filtering, beat detection and HRV feature extraction.
//! - [`data`]: labelled feature datasets, chronological splits, client
//!   partitioning and a synthetic cohort generator.
//! - [`pipeline`]: pre-training, federated fine-tuning and the baseline modes.
//! - [`eval`]: confusion counts, classification metrics and ROC analysis.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dp;
pub mod error;
pub mod eval;
pub mod fed;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod signal;

pub use error::{Error, ErrorKind, Result};

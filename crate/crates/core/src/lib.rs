//! Federated training of a progressively grown pre-LN encoder/decoder
//! transformer on a synthetic sequence-to-sequence task.
//!
//! The crate is self-contained: a small define-by-run autodiff engine over
//! `f64` tensors, the growable model with equalized weight scaling, Adam,
//! a FedAvg simulator with per-round byte metering, the closed-form
//! communication cost model, and the experiment harness behind the `feddt`
//! binary.

pub mod autodiff;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod fed;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

//! Core kernels for training rare-category classifiers against a dominant
//! background class.
//!
//! The crate covers the full in-memory pipeline: a clamped-background softmax
//! and its cross-entropy gradients, a deterministic momentum-SGD trainer over
//! a small MLP trunk with main and auxiliary heads, pseudo-label generation
//! (random, mini-batch k-means, external predictions), long-tail dataset
//! construction, and precision/recall evaluation (per-class F1 and average
//! precision).
//!
//! Everything is deterministic: all randomness flows from explicit 64-bit
//! seeds through ChaCha8 streams, and reductions run in fixed index order.
//!
//! The crate is `no_std`-compatible (with `alloc`); disable default features
//! and enable `libm` for builds without the standard library.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("bgsplit-core requires either the `std` or the `libm` feature");

pub mod dataset;
pub mod error;
pub mod grad;
pub mod kmeans;
pub mod loss;
mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pseudo;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};

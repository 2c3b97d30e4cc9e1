//! Learning the arc length of sampled planar curves.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: exact (quadrature) and chord-sum lengths, isometries, splitting.
//! - [`datagen`]: transformed-sine datasets of `(s1, s2, s3)` triples with exact labels.
//! - [`autodiff`]: a small tape-based reverse-mode engine.
//! - [`models`]: the convolutional `ArcLengthNet` and an LSTM baseline.
//! - [`training`]: additive triple loss and SGD with momentum.
//! - [`eval`]: error metrics, axiom checks and robustness studies.

pub mod autodiff;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod models;
pub mod training;

pub use error::{Error, Result};

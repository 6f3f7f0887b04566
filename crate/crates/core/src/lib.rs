//! Dyadic models of Riesz transforms.
//!
//! Haar coefficient trees with the dyadic Hilbert and Riesz transforms, toss-driven
//! random walks in the upper half-space, discrete martingale transforms, spectral
//! oracles for the continuous Riesz transforms, and the experiments comparing them.

pub mod dyadic_core;
pub mod error;
pub mod experiments;
pub mod harmonic_oracle;
pub mod haar_ops;
pub mod martingale_engine;
pub mod stats;
pub mod stochastics;

pub use error::{Error, Result};

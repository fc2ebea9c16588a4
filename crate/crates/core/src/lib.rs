//! Link-level simulation toolkit for affine frequency division multiplexing
//! (AFDM) over doubly-dispersive channels.
//!
//! The crate is organised bottom-up:
//!
//! * [`constellation`] - unit-energy Gray-labelled QAM alphabets.
//! * [`daft`] - the discrete affine Fourier transform pair and the
//!   chirp-periodic prefix.
//! * [`channel`] - random integer-delay / integer-Doppler channels, the
//!   time-domain channel matrix, the effective DAFT-domain channel and a
//!   sample-level convolution reference.
//! * [`detectors`] - ZF, LMMSE, exhaustive MAP, Gaussian message passing and
//!   the variational Bayesian (mean-field coordinate ascent) detector.
//! * [`sim`] - seeded Monte-Carlo BER and residual experiments.
//! * [`config`] / [`cli`] - experiment files and the command-line front end.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod config;
pub mod constellation;
pub mod daft;
pub mod detectors;
pub mod error;
pub mod linalg;
pub mod sim;

pub use error::{Error, Result};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex64;

//! Radial neural networks.
//!
//! A radial network applies activations of the form `v ↦ h(|v|)·v/|v|` that
//! rescale whole layer vectors along their own direction. Because such
//! activations commute with orthogonal maps, every network can be rewritten
//! in a basis where most of its hidden coordinates carry no information, and
//! the narrower network obtained by dropping them computes the same function.
//!
//! Modules:
//!
//! * [`linalg`]: dense matrices and the complete Householder QR decomposition.
//! * [`activation`]: radial rescaling profiles, shifts, and Jacobians.
//! * [`network`]: parameters, feedforward evaluation, the orthogonal action, file formats.
//! * [`compress`]: lossless QR compression and the interpolating space.
//! * [`train`]: losses, backpropagation, plain and projected gradient descent.
//! * [`approx`]: explicit universal-approximation constructions and their certification.
//! * [`experiments`]: the reproducible experiment pipelines behind the CLI.

pub mod activation;
pub mod approx;
pub mod compress;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod network;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/compression.md")]
    mod compression {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/approximation.md")]
    mod approximation {}
}

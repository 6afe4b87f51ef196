//! Autoencoders with ordered latent variance (AEO) and their ResNet variant
//! (RAEO) for unsupervised identification of nonlinear relationships among
//! measured variables.
//!
//! The pipeline is: generate or load a [`dataset::Dataset`], normalize it,
//! [`training::train`] a model whose loss pushes latent variances into
//! decreasing order, read the [`training::LatentReport`] to find latents
//! with vanishing variance, then [`extraction`] turns those latents into
//! implicit (or, for RAEO with masked inputs, explicit) relations that can
//! be solved for the dependent variables. [`pca`] provides the linear
//! baseline.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numeric;
pub mod optimize;

pub use error::{Error, Result};
pub mod autoencoder;
pub mod dataset;
pub mod extraction;
pub mod pca;
pub mod training;

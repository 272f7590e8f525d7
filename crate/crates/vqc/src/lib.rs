//! VQ-VAE training library and experiment toolkit for studying discrete
//! representation collapse on synthetic Gaussian-mixture data.

pub mod artifact;
pub mod codebook;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod numcore;
pub mod report;
pub mod synthdata;
pub mod vqvae;

pub use error::{Result, VqcError};

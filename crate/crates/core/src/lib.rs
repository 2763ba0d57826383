//! Simulation and verification toolkit for the implicit bias of full-batch
//! gradient descent on shallow ReLU regression in high dimensions.
//!
//! The crate is organised bottom-up:
//!
//! - [`spectral_data`]: spectra, synthetic datasets and assumption checks.
//! - [`relu_model`]: the fixed-sign ReLU predictor, its risk and gradient.
//! - [`gd_engine`]: initialisations, gradient descent and primal/dual logging.
//! - [`min_norm`]: minimum-norm interpolators with KKT certificates.
//! - [`theory_monitor`]: concentration diagnostics, lemma-condition ledgers,
//!   implicit-bias verifiers and distance bounds.
//! - [`experiment`]: scenario presets, artifact emission and verification.

pub mod error;
pub mod experiment;
pub mod gd_engine;
pub mod linalg;
pub mod min_norm;
pub mod relu_model;
pub mod spectral_data;
pub mod theory_monitor;

pub use error::{Error, Result};

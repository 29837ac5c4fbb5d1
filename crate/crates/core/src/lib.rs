//! Model-based dictionaries of simulated magnetic nanoparticle (MNP) harmonic spectra.
//!
//! The crate covers the full pipeline:
//!
//! 1. [`magmodel`] simulates the magnetization response of a particle ensemble
//!    under a sinusoidal drive field (coupled Brown–Néel and simpler models).
//! 2. [`dictionary`] turns those responses into complex matrices whose columns hold
//!    odd-harmonic spectra, one per particle-parameter atom, per drive field and viscosity.
//! 3. [`estimator`] jointly fits non-negative dictionary weights and per-drive-field
//!    transfer functions to measured spectra by alternating minimization.
//! 4. [`predictor`] produces spanned, fitted and predicted spectra, including
//!    leave-one-viscosity-out prediction.
//! 5. [`metrics`] and [`signalio`] provide evaluation metrics, measurement ingestion,
//!    and synthetic measurement generation.
//! 6. [`cli`] drives the pipeline from a TOML run configuration (the `mnpdict` binary).
//!
//! See the `examples/` directory of this crate for one runnable program per capability.

pub mod cli;
pub mod dictionary;
pub mod error;
pub mod estimator;
pub mod magmodel;
pub mod metrics;
pub mod predictor;
pub mod signalio;
pub mod spectral;
pub mod types;

pub use error::{Error, Result};
pub use types::*;

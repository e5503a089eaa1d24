//! Measurement-based soft principal component analysis.
//!
//! A covariance model is diagonalized once; everything else is expressed in
//! its eigenbasis. Fermi-Dirac filters `m(lambda) = 1 / (1 + e^{(mu - lambda)/T})`
//! replace hard rank-`k` projectors, and a simulated thermal position
//! measurement realizes those filters as tail events whose thresholds are
//! calibrated from sampled quantiles.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod covariance;
pub mod error;
pub mod inference;
pub mod io;
pub mod measurement;
pub mod numeric;
pub mod rng;
pub mod soft_filter;

pub use nalgebra::Complex;

/// Complex amplitude type used throughout.
pub type C64 = nalgebra::Complex<f64>;

pub use covariance::{CenteredInput, CovarianceModel, FeatureDataset};
pub use error::{Error, Result};
pub use measurement::{MeasurementConfig, PositionSampleSet, ProbeState, Window};
pub use soft_filter::{DiagonalEffect, DualMethod, SoftFilter, SpectralEffect};

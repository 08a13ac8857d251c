//! Heat-stress risk classification from wearable physiological signals.
//!
//! The pipeline runs raw multi-channel samples through cleaning, smoothing,
//! windowing and labeling ([`preprocessing`]), assembles fixed-length window
//! sequences, trains a stacked LSTM or an attention-pooled LSTM
//! ([`model`], [`training`]) and scores the result ([`evaluation`]).
//! [`synthgen`] produces calibrated synthetic data with known ground truth.

pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod numeric;
pub mod preprocessing;
pub mod risk;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
pub use numeric::{Matrix, Rng};
pub use risk::RiskLevel;

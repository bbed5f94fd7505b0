//! Adaptive quantile tracking for non-stationary streams.
//!
//! Incremental quantile estimators ([`estimators`]) run with a step size that
//! is picked online from an estimate of their own tracking MSE
//! ([`mse_tracking`]). Two controllers choose the step size ([`controllers`]):
//! an oracle-style grid that follows the lowest estimated MSE, and a
//! three-member hill climber with constant cost per sample.

pub mod bench;
pub mod controllers;
pub mod error;
pub mod estimators;
pub mod mse_tracking;
pub mod special;
pub mod streams;

pub use controllers::{Controller, ControllerSpec, Hil, HilConfig, Oracle, OracleConfig, StepOutput, Target};
pub use error::{Error, Result};
pub use estimators::{Estimator, EstimatorKind, FrugalRule};
pub use mse_tracking::{rule_of_thumb, MseTracker, SmoothingParams, TrackedQuantile};
pub use streams::{DataStream, StreamSpec, SyntheticStream};

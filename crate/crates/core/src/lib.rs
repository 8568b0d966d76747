//! Adversarial invariance induction for multi-stream time-series state estimation.
//!
//! Learned per-frame features are split into a task code `e1` and a residual
//! code `e2`; an estimator labels frame states from windows of `e1` while
//! disentanglers and a technique discriminator are trained against the
//! encoder so that `e1` stays free of nuisance and technique information.
//! Technique labels come from DTW k-medoids clustering of trial kinematics.

pub mod clustering;
pub mod dataset;
pub mod encoders;
pub mod invariance;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` tensor used throughout training.
pub type Tensor = numerics::Tensor<f64>;
pub type ParamStore = numerics::ParamStore<f64>;
pub type ParamGroup = numerics::ParamGroup<f64>;
pub type Graph<'s> = numerics::Graph<'s, f64>;
pub type Gradients = numerics::Gradients<f64>;

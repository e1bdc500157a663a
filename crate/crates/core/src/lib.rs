//! Sequential estimation of linear-model parameters with optimal stopping.
//!
//! The crate covers the centralized conditional rule (stop when the
//! conditional-covariance statistic crosses a target), the unconditional
//! rules obtained by dynamic programming in one and two dimensions, and a
//! decentralized scheme in which sensors report level-triggered single-bit
//! events to a fusion center.

pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod ltsnet;
pub mod planar_dp;
pub mod quad;
pub mod scalar_dp;
pub mod seeding;
pub mod stopping;

pub use error::{Error, Result};
pub use estimator::{AccuracyFn, FisherState, NoiseModel, Observation};
pub use quad::Quadrature;

//! Minimum-distance confidence intervals for a smooth transformation `g(θ)`
//! whose gradient vanishes at `θ⋆`.
//!
//! The MD statistic for `H₀: g(θ) = τ` is the Mahalanobis distance from `θ̂`
//! to the level set `{g = τ}`. Confidence intervals invert it against several
//! critical values (BN1, BN2, projection) and the usual comparators.

pub mod critval;
pub mod dist;
pub mod error;
pub mod geometry;
pub mod gfunc;
pub mod input;
pub mod invert;
pub mod limitexp;
pub mod linalg;
pub mod mc;
pub mod mdstat;
pub mod quadric;
pub mod rng;
pub mod stats;

pub use critval::Method;
pub use error::{Error, Result};
pub use gfunc::GFunction;
pub use input::EstimateInput;
pub use invert::ConfidenceInterval;
pub use rng::RngStream;

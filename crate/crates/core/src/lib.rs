//! Unbiased Monte Carlo estimation of expectations under an unnormalized
//! density `exp(-U)`, using coupled Euler-discretized underdamped Langevin
//! chains and a randomized discretization level.
//!
//! The pieces, bottom-up:
//!
//! * [`dynamics`]: the Euler step and the unit-time kernel `K_l`;
//! * [`coupling`]: reflection maximal couplings of Gaussians;
//! * [`kernels`]: coupled single-level and two-level kernels;
//! * [`estimator`]: meeting-time estimators and the randomized-level debiasing;
//! * [`models`]: target potentials, selected by name;
//! * [`sfs`]: a fixed-setting Schrodinger-Follmer sampler used as a baseline;
//! * [`harness`]: experiment orchestration and file output.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod dynamics;
pub mod estimator;
pub mod harness;
pub mod error;
pub mod kernels;
pub mod models;
pub mod rng;
pub mod sfs;

pub use error::{Result, UldError};

//! Monte Carlo laboratory for the random differential equation
//!
//! ```text
//! dX/dt = -(a + zeta_t) X + phi_t
//! ```
//!
//! with stationary Gaussian multiplicative noise `zeta` and stationary,
//! reversible additive noise `phi`, plus a nonlinear variant whose forcing is
//! bounded by an envelope. The crate simulates path ensembles and measures
//! the quantities that govern their long-time behavior: the diffusion
//! constant `D`, the critical exponent `a / D`, the exponential rates of the
//! fractional moments, and the distribution of the stationary state.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod lp;
pub mod noise;
pub mod rde;
pub mod reduce;
pub mod rng;
pub mod tail;
pub mod weak;

pub use error::{Error, Result};
pub use lp::{QuasiNormEstimate, RateFit};
pub use noise::{NoisePath, NoiseSpec};
pub use rde::{LinearModel, NonlinearModel, PathEnsemble, TimeGrid};
pub use tail::ExponentReport;

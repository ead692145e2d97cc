//! Exact-Gaussian mode for the integrated noise.
//!
//! For Gaussian multiplicative noise `Y_t` is centered Gaussian with variance
//! `2 d(t)`, so single-time functionals of the propagator can be checked
//! without path integration: either in closed form or from direct draws of
//! the marginal.

use crate::error::Result;
use crate::lp::sigma_p;
use crate::noise::{y_variance_half, NoiseSpec};
use crate::reduce::mean_var;
use crate::rng::{RngStream, StreamRole};

/// `n` independent draws of `Y_t ~ N(0, 2 d(t))`.
pub fn sample_y_marginal(spec: &NoiseSpec, t: f64, n: usize, master_seed: u64) -> Result<Vec<f64>> {
    let sd = (2.0 * y_variance_half(spec, t)?).sqrt();
    Ok((0..n as u64)
        .map(|i| sd * RngStream::new(master_seed, i, StreamRole::GaussianY).normal())
        .collect())
}

/// `ln E[exp(-p Y_t)] = p^2 d(t)`.
pub fn log_mgf_exact(spec: &NoiseSpec, p: f64, t: f64) -> Result<f64> {
    Ok(p * p * y_variance_half(spec, t)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMgfEstimate {
    pub value: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Cumulant estimate `-p mean + p^2 var / 2` of `ln E[exp(-p Y)]` for
/// Gaussian samples. Unlike the sample mean of `exp(-p Y)` its error does
/// not blow up with `p^2 Var(Y)`.
pub fn log_mgf_gaussian_fit(samples: &[f64], p: f64) -> LogMgfEstimate {
    let n = samples.len();
    let (m, v) = mean_var(samples);
    let var_mean = p * p * v / n as f64;
    let var_var = p.powi(4) * v * v / (2.0 * (n.max(2) - 1) as f64);
    LogMgfEstimate {
        value: -p * m + 0.5 * p * p * v,
        std_err: (var_mean + var_var).sqrt(),
        n,
    }
}

/// `ln ||A_t||_p` from `ln E[exp(-p Y_t)]`.
pub fn log_quasi_norm_propagator(a: f64, p: f64, t: f64, log_mgf: f64) -> f64 {
    sigma_p(p) / p * (-a * p * t + log_mgf)
}

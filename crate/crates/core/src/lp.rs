//! Generalized `L^p` quasi-norms and moment-rate utilities.
//!
//! `||f||_p = (E|f|^p)^(sigma_p / p)` with `sigma_p = min(1, p)`; for
//! `p < 1` this is the `p`-th absolute moment itself, which satisfies the
//! triangle inequality even though its `1/p` root does not.
//!
//! Estimates are computed in log space so ensembles whose entries span
//! hundreds of e-folds (divergent moments, tilted ensembles) stay finite.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduce::{log_mean_exp, mean, mean_var, pairwise_sum_by};

/// Kurtosis of `|x|^p` above which a moment estimate is marked unstable.
pub const KURTOSIS_THRESHOLD: f64 = 100.0;

#[inline]
pub fn sigma_p(p: f64) -> f64 {
    p.min(1.0)
}

fn check_order(p: f64) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "p",
            value: p,
            constraint: "order must be positive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiNormEstimate {
    pub p: f64,
    pub sigma_p: f64,
    pub value: f64,
    /// `ln value`; authoritative when `value` under- or overflows.
    pub log_value: f64,
    pub n: usize,
    /// Delta-method standard error of `value`.
    pub std_err: f64,
    /// Standard error of `log_value`.
    pub log_std_err: f64,
    pub flagged_excluded: usize,
    /// Set when the empirical kurtosis of `|x|^p` exceeds
    /// [`KURTOSIS_THRESHOLD`]; the standard error is then unreliable.
    pub unstable: bool,
}

pub fn quasi_norm(samples: &[f64], p: f64) -> Result<QuasiNormEstimate> {
    quasi_norm_weighted(samples, None, p)
}

/// Quasi-norm of an importance-weighted sample: `E|x|^p` is estimated by the
/// mean of `w_i |x_i|^p` with `w_i = exp(log_weights[i])`.
pub fn quasi_norm_weighted(
    samples: &[f64],
    log_weights: Option<&[f64]>,
    p: f64,
) -> Result<QuasiNormEstimate> {
    check_order(p)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(w) = log_weights {
        if w.len() != samples.len() {
            return Err(Error::LengthMismatch {
                left: samples.len(),
                right: w.len(),
            });
        }
    }
    let n = samples.len();
    let terms: Vec<f64> = samples
        .iter()
        .enumerate()
        .map(|(i, x)| p * x.abs().ln() + log_weights.map_or(0.0, |w| w[i]))
        .collect();
    let log_m = log_mean_exp(&terms);
    let s = sigma_p(p);
    let scale = s / p;
    if log_m == f64::NEG_INFINITY {
        return Ok(QuasiNormEstimate {
            p,
            sigma_p: s,
            value: 0.0,
            log_value: f64::NEG_INFINITY,
            n,
            std_err: 0.0,
            log_std_err: 0.0,
            flagged_excluded: 0,
            unstable: false,
        });
    }
    // Normalized terms have mean one; their spread gives the relative error.
    let u: Vec<f64> = terms.iter().map(|v| (v - log_m).exp()).collect();
    let (_, var_u) = mean_var(&u);
    let rel = (var_u / n as f64).sqrt();
    let m4 = pairwise_sum_by(&u, &|x: &f64| (x - 1.0).powi(4)) / n as f64;
    let var_pop = var_u * (n - 1).max(1) as f64 / n as f64;
    let kurt = if var_pop > 0.0 {
        m4 / (var_pop * var_pop)
    } else {
        0.0
    };
    let log_value = scale * log_m;
    let value = log_value.exp();
    Ok(QuasiNormEstimate {
        p,
        sigma_p: s,
        value,
        log_value,
        n,
        std_err: value * scale * rel,
        log_std_err: scale * rel,
        flagged_excluded: 0,
        unstable: kurt > KURTOSIS_THRESHOLD,
    })
}

/// Raw moment `E|x + z|^p` with a complex shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalMoment {
    pub p: f64,
    pub z: Complex64,
    pub value: f64,
    pub std_err: f64,
    pub n: usize,
}

pub fn fractional_moment(samples: &[f64], p: f64, z: Complex64) -> Result<FractionalMoment> {
    check_order(p)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let vals: Vec<f64> = samples.iter().map(|&x| (z + x).norm().powf(p)).collect();
    let (m, v) = mean_var(&vals);
    Ok(FractionalMoment {
        p,
        z,
        value: m,
        std_err: (v / vals.len() as f64).sqrt(),
        n: vals.len(),
    })
}

/// `gamma_p = sigma_p D (p - a / D)`.
pub fn gamma_p(a: f64, d: f64, p: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::DNonpositive(d));
    }
    check_order(p)?;
    Ok(sigma_p(p) * d * (p - a / d))
}

/// One point of a moment curve, on the log scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub t: f64,
    pub log_value: f64,
    pub log_std_err: f64,
}

impl RatePoint {
    pub fn new(t: f64, value: f64, std_err: f64) -> Self {
        Self {
            t,
            log_value: value.ln(),
            log_std_err: if value > 0.0 { std_err / value } else { 0.0 },
        }
    }

    pub fn from_estimate(t: f64, e: &QuasiNormEstimate) -> Self {
        Self {
            t,
            log_value: e.log_value,
            log_std_err: e.log_std_err,
        }
    }
}

/// Exponential rate fitted to a moment curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub slope_std_err: f64,
    pub intercept: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub predicted: Option<f64>,
}

impl RateFit {
    pub fn with_prediction(mut self, predicted: f64) -> Self {
        self.predicted = Some(predicted);
        self
    }

    pub fn relative_error(&self) -> Option<f64> {
        self.predicted.map(|g| ((self.slope - g) / g).abs())
    }
}

pub const MIN_FIT_POINTS: usize = 5;

/// Least-squares slope of `ln value` against `t` over `window`; the default
/// window is the second half of the curve's time span.
///
/// The reported slope error is the larger of the residual-based error and
/// the one propagated from the per-point standard errors.
pub fn fit_rate(points: &[RatePoint], window: Option<(f64, f64)>) -> Result<RateFit> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (lo, hi) = window.unwrap_or_else(|| {
        let t_max = points.iter().map(|p| p.t).fold(f64::NEG_INFINITY, f64::max);
        let t_min = points.iter().map(|p| p.t).fold(f64::INFINITY, f64::min);
        (0.5 * (t_min + t_max), t_max)
    });
    let tol = 1e-9 * (1.0 + hi.abs());
    let sel: Vec<&RatePoint> = points
        .iter()
        .filter(|p| p.t >= lo - tol && p.t <= hi + tol)
        .collect();
    if sel.len() < MIN_FIT_POINTS {
        return Err(Error::WindowTooShort {
            found: sel.len(),
            required: MIN_FIT_POINTS,
        });
    }
    if let Some(bad) = sel.iter().find(|p| !p.log_value.is_finite()) {
        return Err(Error::NonpositiveValue {
            t: bad.t,
            value: bad.log_value.exp(),
        });
    }
    let ts: Vec<f64> = sel.iter().map(|p| p.t).collect();
    let ys: Vec<f64> = sel.iter().map(|p| p.log_value).collect();
    let tm = mean(&ts);
    let ym = mean(&ys);
    let sxx = pairwise_sum_by(&ts, &|t: &f64| (t - tm) * (t - tm));
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let rss: f64 = ts
        .iter()
        .zip(&ys)
        .map(|(t, y)| {
            let r = y - intercept - slope * t;
            r * r
        })
        .sum();
    let tss = pairwise_sum_by(&ys, &|y: &f64| (y - ym) * (y - ym));
    let m = sel.len() as f64;
    let resid_se = (rss / (m - 2.0) / sxx).sqrt();
    let prop_se = sel
        .iter()
        .map(|p| ((p.t - tm) * p.log_std_err).powi(2))
        .sum::<f64>()
        .sqrt()
        / sxx;
    Ok(RateFit {
        slope,
        slope_std_err: resid_se.max(prop_se),
        intercept,
        t_lo: ts[0],
        t_hi: *ts.last().unwrap(),
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
        n_points: sel.len(),
        predicted: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

fn inequality(lhs: f64, rhs: f64, n: usize) -> InequalityReport {
    // rounding slack only; the inequalities hold exactly for empirical measures
    let slack = f64::EPSILON * (n + 64) as f64;
    InequalityReport {
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + slack) + f64::MIN_POSITIVE,
    }
}

/// `E[U^p V] <= (E[UV])^p (E[V])^(1-p)` on the empirical measure.
pub fn jensen_check(u: &[f64], v: &[f64], p: f64) -> Result<InequalityReport> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if u.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            value: p,
            constraint: "must lie in (0, 1]",
        });
    }
    if u.iter().chain(v).any(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidParameter {
            name: "U, V",
            value: f64::NAN,
            constraint: "samples must be non-negative",
        });
    }
    let ev = mean(v);
    if !(ev > 0.0) {
        return Err(Error::InvalidParameter {
            name: "mean(V)",
            value: ev,
            constraint: "must be positive",
        });
    }
    let lhs_terms: Vec<f64> = u.iter().zip(v).map(|(a, b)| a.powf(p) * b).collect();
    let uv: Vec<f64> = u.iter().zip(v).map(|(a, b)| a * b).collect();
    let lhs = mean(&lhs_terms);
    let rhs = mean(&uv).powf(p) * ev.powf(1.0 - p);
    Ok(inequality(lhs, rhs, u.len()))
}

/// `||alpha f + g||_p <= |alpha|^sigma_p ||f||_p + ||g||_p` on the empirical measure.
pub fn quasi_triangle_check(f: &[f64], g: &[f64], alpha: f64, p: f64) -> Result<InequalityReport> {
    if f.len() != g.len() {
        return Err(Error::LengthMismatch {
            left: f.len(),
            right: g.len(),
        });
    }
    let combo: Vec<f64> = f.iter().zip(g).map(|(a, b)| alpha * a + b).collect();
    let lhs = quasi_norm(&combo, p)?.value;
    let rhs = alpha.abs().powf(sigma_p(p)) * quasi_norm(f, p)?.value + quasi_norm(g, p)?.value;
    Ok(inequality(lhs, rhs, f.len()))
}

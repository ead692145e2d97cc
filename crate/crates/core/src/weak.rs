//! Test functions for the weighted topologies and convergence of
//! `E[f(X_t)]` to its stationary value.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{fit_rate, gamma_p, sigma_p, RateFit, RatePoint};
use crate::rde::PathEnsemble;
use crate::reduce::{mean_var, pairwise_sum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// `|x + z|^alpha`.
    AbsPower { z: Complex64, alpha: f64 },
    /// Piecewise linear through the breakpoints, extended linearly.
    LipschitzTable { xs: Vec<f64>, ys: Vec<f64> },
    /// Piecewise linear through the breakpoints, constant outside.
    BoundedContinuous { xs: Vec<f64>, ys: Vec<f64> },
}

/// Smallest `gamma` with `f` in `C_gamma`. Bounded functions lie in every
/// `C_gamma` with `gamma > 0`; they get `value = 0` with `open = true`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaClass {
    pub value: f64,
    pub open: bool,
}

fn interp(xs: &[f64], ys: &[f64], x: f64, extrapolate: bool) -> f64 {
    let n = xs.len();
    if n == 1 {
        return ys[0];
    }
    let j = match xs.partition_point(|&b| b <= x) {
        0 if !extrapolate => return ys[0],
        0 => 1,
        j if j == n && !extrapolate => return ys[n - 1],
        j => j.min(n - 1),
    };
    let s = (ys[j] - ys[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] + s * (x - xs[j - 1])
}

impl TestFunction {
    pub fn abs_power(z: Complex64, alpha: f64) -> Self {
        TestFunction::AbsPower { z, alpha }
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::BoundedContinuous {
            xs: vec![0.0],
            ys: vec![c],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let table = |xs: &[f64], ys: &[f64], min_len: usize| -> Result<()> {
            if xs.len() != ys.len() {
                return Err(Error::LengthMismatch {
                    left: xs.len(),
                    right: ys.len(),
                });
            }
            if xs.len() < min_len {
                return Err(Error::InvalidParameter {
                    name: "xs",
                    value: xs.len() as f64,
                    constraint: "too few breakpoints",
                });
            }
            if xs.iter().chain(ys).any(|v| !v.is_finite()) || xs.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidParameter {
                    name: "xs",
                    value: f64::NAN,
                    constraint: "breakpoints must be finite and strictly increasing",
                });
            }
            Ok(())
        };
        match self {
            TestFunction::AbsPower { z, alpha } => {
                if !(*alpha > 0.0 && alpha.is_finite()) || !z.re.is_finite() || !z.im.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "alpha",
                        value: *alpha,
                        constraint: "must be positive and finite with a finite shift",
                    });
                }
                Ok(())
            }
            TestFunction::LipschitzTable { xs, ys } => table(xs, ys, 2),
            TestFunction::BoundedContinuous { xs, ys } => table(xs, ys, 1),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::AbsPower { z, alpha } => (Complex64::new(x, 0.0) + z).norm().powf(*alpha),
            TestFunction::LipschitzTable { xs, ys } => interp(xs, ys, x, true),
            TestFunction::BoundedContinuous { xs, ys } => interp(xs, ys, x, false),
        }
    }

    pub fn gamma_class(&self) -> GammaClass {
        match self {
            TestFunction::AbsPower { alpha, .. } => GammaClass {
                value: *alpha,
                open: false,
            },
            TestFunction::LipschitzTable { xs, ys } => {
                let n = xs.len();
                let s0 = (ys[1] - ys[0]) / (xs[1] - xs[0]);
                let s1 = (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2]);
                if s0 == 0.0 && s1 == 0.0 {
                    GammaClass {
                        value: 0.0,
                        open: true,
                    }
                } else {
                    GammaClass {
                        value: 1.0,
                        open: false,
                    }
                }
            }
            TestFunction::BoundedContinuous { .. } => GammaClass {
                value: 0.0,
                open: true,
            },
        }
    }

    /// Largest slope of a table; `None` for `AbsPower`.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        match self {
            TestFunction::AbsPower { .. } => None,
            TestFunction::LipschitzTable { xs, ys }
            | TestFunction::BoundedContinuous { xs, ys } => Some(
                xs.windows(2)
                    .zip(ys.windows(2))
                    .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
                    .fold(0.0, f64::max),
            ),
        }
    }
}

/// `0` and `±|x|` for 200 log-spaced `|x|` in `[1e-3, 1e6]`.
pub fn default_eval_grid() -> Vec<f64> {
    let m = 200;
    let (lo, hi) = (-3.0f64, 6.0f64);
    let pos: Vec<f64> = (0..m)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (m - 1) as f64))
        .collect();
    let mut g: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    g.push(0.0);
    g.extend(pos);
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PGammaNorm {
    /// Grid supremum; a lower bound of the true one.
    pub value: f64,
    pub argmax: f64,
    /// The supremum sits at the grid edge and the weighted function is
    /// still growing there.
    pub not_in_class: bool,
}

/// Relative growth per decade above which an edge supremum counts as
/// unbounded.
pub const EDGE_GROWTH_TOL: f64 = 1e-3;

/// `sup |f(x)| / (1 + |x|)^gamma` over `grid`.
pub fn p_gamma_norm_fn(f: impl Fn(f64) -> f64, gamma: f64, grid: &[f64]) -> Result<PGammaNorm> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            value: gamma,
            constraint: "must be positive",
        });
    }
    if grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    let w = |x: f64| f(x).abs() / (1.0 + x.abs()).powf(gamma);
    let (mut value, mut argmax) = (f64::NEG_INFINITY, grid[0]);
    for &x in grid {
        let v = w(x);
        if v > value {
            value = v;
            argmax = x;
        }
    }
    let edge = grid.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mut not_in_class = false;
    if value > 0.0 && argmax.abs() == edge {
        // compare with the point one decade in, or the nearest one inside
        let inside: Vec<f64> = grid
            .iter()
            .filter(|x| x.signum() == argmax.signum() && x.abs() < edge && x.abs() > 0.0)
            .map(|x| x.abs())
            .collect();
        let decade_in = inside
            .iter()
            .copied()
            .filter(|&x| x <= edge / 10.0)
            .fold(0.0, f64::max);
        let inner = if decade_in > 0.0 {
            decade_in
        } else {
            inside.iter().copied().fold(0.0, f64::max)
        };
        if inner > 0.0 {
            let inner_x = argmax.signum() * inner;
            let decades = (edge / inner).log10();
            let growth = (w(argmax) / w(inner_x)).powf(1.0 / decades) - 1.0;
            not_in_class = growth > EDGE_GROWTH_TOL;
        }
    }
    Ok(PGammaNorm {
        value,
        argmax,
        not_in_class,
    })
}

pub fn p_gamma_norm(f: &TestFunction, gamma: f64, grid: &[f64]) -> Result<PGammaNorm> {
    f.validate()?;
    p_gamma_norm_fn(|x| f.eval(x), gamma, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub value: f64,
    pub std_err: f64,
    pub n: usize,
}

pub fn expectation_of(samples: &[f64], f: impl Fn(f64) -> f64) -> Result<Expectation> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let v: Vec<f64> = samples.iter().map(|&x| f(x)).collect();
    let (m, var) = mean_var(&v);
    Ok(Expectation {
        value: m,
        std_err: (var / v.len() as f64).sqrt(),
        n: v.len(),
    })
}

/// Empirical mean of `f` with its standard error.
pub fn expectation_functional(samples: &[f64], f: &TestFunction) -> Result<Expectation> {
    f.validate()?;
    expectation_of(samples, |x| f.eval(x))
}

/// Mean of `w_i f(x_i)` for importance weights `w_i = exp(log_weights[i])`.
pub fn expectation_weighted(
    samples: &[f64],
    log_weights: &[f64],
    f: &TestFunction,
) -> Result<Expectation> {
    if samples.len() != log_weights.len() {
        return Err(Error::LengthMismatch {
            left: samples.len(),
            right: log_weights.len(),
        });
    }
    f.validate()?;
    let terms: Vec<f64> = samples
        .iter()
        .zip(log_weights)
        .map(|(&x, &lw)| {
            let fx = f.eval(x);
            if fx == 0.0 {
                0.0
            } else {
                lw.exp() * fx
            }
        })
        .collect();
    if terms.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (m, var) = mean_var(&terms);
    Ok(Expectation {
        value: m,
        std_err: (var / terms.len() as f64).sqrt(),
        n: terms.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConvergenceMode {
    /// `gamma_class < beta_c`: fit the decay of `|E f(X_t) - E f(X_inf)|`.
    Convergence,
    /// `gamma_class >= beta_c`: fit the growth of `E f(X_t)`.
    Divergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub t: f64,
    pub e_f: f64,
    pub std_err: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub mode: ConvergenceMode,
    pub gamma_class: GammaClass,
    pub beta_c: f64,
    /// `E f(X_inf)`.
    pub stationary: Expectation,
    pub curve: Vec<ConvergencePoint>,
    /// Fit of the raw curve (`delta` or `E f`), slope per unit time.
    pub raw_fit: Option<RateFit>,
    /// Fitted rate on the quasi-norm scale, `raw slope * sigma_p / p` at
    /// `p = gamma_class`; comparable with `gamma_p`.
    pub fitted_rate: Option<f64>,
    pub predicted_rate: Option<f64>,
}

impl ConvergenceReport {
    pub fn relative_error(&self) -> Option<f64> {
        match (self.fitted_rate, self.predicted_rate) {
            (Some(f), Some(g)) => Some(((f - g) / g).abs()),
            _ => None,
        }
    }

    /// Rows `t, E_f_Xt, std_err, delta, fitted_rate, predicted_rate`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record([
            "t",
            "E_f_Xt",
            "std_err",
            "delta",
            "fitted_rate",
            "predicted_rate",
        ])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for q in &self.curve {
            out.write_record([
                q.t.to_string(),
                q.e_f.to_string(),
                q.std_err.to_string(),
                q.delta.to_string(),
                opt(self.fitted_rate),
                opt(self.predicted_rate),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Curve of `E f(X_t)` over the nodes of `ensemble` against the stationary
/// value, with an exponential rate fitted over `window`.
///
/// `stationary = None` stands for `X_inf = 0` (no additive forcing). The mode
/// follows from `gamma_class` against `beta_c = a / d` unless one is
/// requested; a request inconsistent with the class is an error.
pub fn convergence_diagnostic(
    ensemble: &PathEnsemble,
    stationary: Option<&[f64]>,
    f: &TestFunction,
    a: f64,
    d: f64,
    requested: Option<ConvergenceMode>,
    window: Option<(f64, f64)>,
) -> Result<ConvergenceReport> {
    f.validate()?;
    if !(d > 0.0) {
        return Err(Error::DNonpositive(d));
    }
    let beta_c = a / d;
    let class = f.gamma_class();
    let natural = if class.value < beta_c {
        ConvergenceMode::Convergence
    } else {
        ConvergenceMode::Divergence
    };
    if let Some(m) = requested {
        if m != natural {
            return Err(Error::ClassMismatch {
                gamma_class: class.value,
                beta_c,
            });
        }
    }
    let stationary = match stationary {
        Some(s) => expectation_functional(s, f)?,
        None => Expectation {
            value: f.eval(0.0),
            std_err: 0.0,
            n: 0,
        },
    };
    let mut curve = Vec::with_capacity(ensemble.n_nodes());
    for k in 0..ensemble.n_nodes() {
        let col = ensemble.column(k);
        let e = match &col.log_weights {
            Some(lw) => expectation_weighted(&col.values, lw, f)?,
            None => expectation_functional(&col.values, f)?,
        };
        curve.push(ConvergencePoint {
            t: ensemble.grid.t(k),
            e_f: e.value,
            std_err: e.std_err.hypot(stationary.std_err),
            delta: (e.value - stationary.value).abs(),
        });
    }
    let fit_on = |pick: &dyn Fn(&ConvergencePoint) -> f64| -> Option<RateFit> {
        let pts: Vec<RatePoint> = curve
            .iter()
            .map(|q| RatePoint::new(q.t, pick(q), q.std_err))
            .collect();
        fit_rate(&pts, window).ok()
    };
    let raw_fit = match natural {
        ConvergenceMode::Convergence => fit_on(&|q| q.delta),
        ConvergenceMode::Divergence => fit_on(&|q| q.e_f),
    };
    let p = class.value;
    let scale = if p > 0.0 { sigma_p(p) / p } else { 1.0 };
    let fitted_rate = raw_fit.map(|r| r.slope * scale);
    let predicted_rate = if p > 0.0 {
        Some(gamma_p(a, d, p)?)
    } else {
        None
    };
    Ok(ConvergenceReport {
        mode: natural,
        gamma_class: class,
        beta_c,
        stationary,
        curve,
        raw_fit,
        fitted_rate,
        predicted_rate,
    })
}

/// `sum_i c_i f_i(x)` for the finite combinations used in the linearity checks.
pub fn combination(terms: &[(f64, &TestFunction)], x: f64) -> f64 {
    let v: Vec<f64> = terms.iter().map(|(c, f)| c * f.eval(x)).collect();
    pairwise_sum(&v)
}

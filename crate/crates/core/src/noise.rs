//! Stationary driving noise.
//!
//! Multiplicative noise must be centered stationary Gaussian with an
//! integrable correlation; the Ornstein-Uhlenbeck family and finite sums of
//! independent OU components satisfy this exactly and can be sampled without
//! discretization bias. The additive noise only needs stationarity,
//! reversibility and finite moments below some order `beta_1`; the
//! Pareto-transformed OU supplies a heavy-tailed example of that.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ensure_positive, Error, Result};
use crate::rde::TimeGrid;
use crate::rng::RngStream;

/// One OU component with stationary variance `sigma^2` and correlation time `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuTerm {
    pub sigma: f64,
    pub tau: f64,
}

impl OuTerm {
    pub fn new(sigma: f64, tau: f64) -> Self {
        Self { sigma, tau }
    }
}

/// Declarative description of a stationary driving process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Ou {
        sigma: f64,
        tau_c: f64,
    },
    OuSuperposition {
        terms: Vec<OuTerm>,
    },
    Zero,
    Constant {
        level: f64,
    },
    /// `x_m * (1 - Phi(g))^(-1/beta_1)` of a unit-variance OU path `g`.
    /// Additive use only.
    ParetoTransformedOu {
        tau_c: f64,
        beta_1: f64,
        x_m: f64,
    },
}

impl NoiseSpec {
    pub fn ou(sigma: f64, tau_c: f64) -> Self {
        NoiseSpec::Ou { sigma, tau_c }
    }

    pub fn superposition(terms: &[(f64, f64)]) -> Self {
        NoiseSpec::OuSuperposition {
            terms: terms.iter().map(|&(s, t)| OuTerm::new(s, t)).collect(),
        }
    }

    /// OU components whose correlation times are geometrically spaced
    /// between `tau_min` and `tau_max`, with weights chosen so the summed
    /// correlation falls off roughly like `t^-(2 + eps)` across that range.
    pub fn geometric_superposition(
        tau_min: f64,
        tau_max: f64,
        n_terms: usize,
        eps: f64,
        d_total: f64,
    ) -> Result<Self> {
        ensure_positive("tau_min", tau_min)?;
        ensure_positive("d_total", d_total)?;
        if !(tau_max > tau_min) || n_terms < 2 {
            return Err(Error::InvalidParameter {
                name: "tau_max",
                value: tau_max,
                constraint: "must exceed tau_min with at least two terms",
            });
        }
        let ratio = (tau_max / tau_min).powf(1.0 / (n_terms - 1) as f64);
        // A mixture of exponentials with weight density tau^-(3+eps) has a
        // t^-(2+eps) tail; w_i = tau_i^-(2+eps) approximates it on a log grid.
        let taus: Vec<f64> = (0..n_terms)
            .map(|i| tau_min * ratio.powi(i as i32))
            .collect();
        let weights: Vec<f64> = taus.iter().map(|t| t.powf(-(2.0 + eps))).collect();
        let d_raw: f64 = weights.iter().zip(&taus).map(|(w, t)| w * t).sum();
        let scale = d_total / d_raw;
        Ok(NoiseSpec::OuSuperposition {
            terms: taus
                .iter()
                .zip(&weights)
                .map(|(&tau, &w)| OuTerm::new((w * scale).sqrt(), tau))
                .collect(),
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseSpec::Ou { .. } => "ou",
            NoiseSpec::OuSuperposition { .. } => "ou_superposition",
            NoiseSpec::Zero => "zero",
            NoiseSpec::Constant { .. } => "constant",
            NoiseSpec::ParetoTransformedOu { .. } => "pareto_transformed_ou",
        }
    }

    /// Structural invariants, independent of the role the noise plays.
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Ou { sigma, tau_c } => {
                ensure_positive("sigma", *sigma)?;
                ensure_positive("tau_c", *tau_c)
            }
            NoiseSpec::OuSuperposition { terms } => {
                if terms.is_empty() {
                    return Err(Error::InvalidParameter {
                        name: "terms",
                        value: 0.0,
                        constraint: "superposition needs at least one term",
                    });
                }
                for t in terms {
                    ensure_positive("sigma", t.sigma)?;
                    ensure_positive("tau", t.tau)?;
                }
                Ok(())
            }
            NoiseSpec::Zero => Ok(()),
            NoiseSpec::Constant { level } => {
                if level.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "level",
                        value: *level,
                        constraint: "must be finite",
                    })
                }
            }
            NoiseSpec::ParetoTransformedOu { tau_c, beta_1, x_m } => {
                ensure_positive("tau_c", *tau_c)?;
                ensure_positive("x_m", *x_m)?;
                if !(*beta_1 > 1.0) || !beta_1.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "beta_1",
                        value: *beta_1,
                        constraint: "must exceed 1",
                    });
                }
                Ok(())
            }
        }
    }

    /// OU components of a centered Gaussian spec; `None` otherwise.
    pub fn gaussian_terms(&self) -> Option<Vec<OuTerm>> {
        match self {
            NoiseSpec::Ou { sigma, tau_c } => Some(vec![OuTerm::new(*sigma, *tau_c)]),
            NoiseSpec::OuSuperposition { terms } => Some(terms.clone()),
            NoiseSpec::Zero => Some(Vec::new()),
            _ => None,
        }
    }

    fn require_gaussian(&self, what: &'static str) -> Result<Vec<OuTerm>> {
        self.gaussian_terms().ok_or(Error::Unsupported {
            kind: self.kind_name(),
            what,
        })
    }

    /// Tail index of the additive marginal, if it is heavy tailed.
    pub fn tail_index(&self) -> Option<f64> {
        match self {
            NoiseSpec::ParetoTransformedOu { beta_1, .. } => Some(*beta_1),
            _ => None,
        }
    }

    /// Largest correlation time, or `None` for deterministic specs.
    pub fn max_tau(&self) -> Option<f64> {
        match self {
            NoiseSpec::Ou { tau_c, .. } | NoiseSpec::ParetoTransformedOu { tau_c, .. } => {
                Some(*tau_c)
            }
            NoiseSpec::OuSuperposition { terms } => terms
                .iter()
                .map(|t| t.tau)
                .fold(None, |m, t| Some(m.map_or(t, |m: f64| m.max(t)))),
            _ => None,
        }
    }

    pub fn min_tau(&self) -> Option<f64> {
        match self {
            NoiseSpec::Ou { tau_c, .. } | NoiseSpec::ParetoTransformedOu { tau_c, .. } => {
                Some(*tau_c)
            }
            NoiseSpec::OuSuperposition { terms } => terms
                .iter()
                .map(|t| t.tau)
                .fold(None, |m, t| Some(m.map_or(t, |m: f64| m.min(t)))),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationResult {
    pub warnings: Vec<String>,
}

/// Accepts exactly the centered stationary Gaussian kinds.
pub fn validate_multiplicative(spec: &NoiseSpec) -> Result<ValidationResult> {
    match spec {
        NoiseSpec::Constant { .. } => Err(Error::Rejected {
            kind: spec.kind_name(),
            reason: "a constant is not a centered process; fold its level into `a`".into(),
        }),
        NoiseSpec::ParetoTransformedOu { .. } => Err(Error::Rejected {
            kind: spec.kind_name(),
            reason: "not a centered Gaussian process".into(),
        }),
        NoiseSpec::Zero => Ok(ValidationResult {
            warnings: vec![
                "zero multiplicative noise: D = 0 and the critical exponent is undefined".into(),
            ],
        }),
        _ => {
            spec.validate()?;
            Ok(ValidationResult {
                warnings: Vec::new(),
            })
        }
    }
}

/// `C(t) = sum_i sigma_i^2 exp(-t / tau_i)`.
pub fn correlation(spec: &NoiseSpec, t: f64) -> Result<f64> {
    let terms = spec.require_gaussian("correlation")?;
    let t = t.abs();
    Ok(terms
        .iter()
        .map(|c| c.sigma * c.sigma * (-t / c.tau).exp())
        .sum())
}

/// `D = int_0^inf C(t) dt = sum_i sigma_i^2 tau_i`.
pub fn diffusion_constant(spec: &NoiseSpec) -> Result<f64> {
    let terms = spec.require_gaussian("diffusion constant")?;
    Ok(terms.iter().map(|c| c.sigma * c.sigma * c.tau).sum())
}

/// Half the variance of the integrated noise,
/// `d(t) = int_0^t (t - x) C(x) dx`.
///
/// Per component: `sigma^2 tau t - sigma^2 tau^2 (1 - exp(-t / tau))`.
pub fn y_variance_half(spec: &NoiseSpec, t: f64) -> Result<f64> {
    let terms = spec.require_gaussian("integrated variance")?;
    if t < 0.0 {
        return Err(Error::InvalidParameter {
            name: "t",
            value: t,
            constraint: "must be non-negative",
        });
    }
    Ok(terms
        .iter()
        .map(|c| {
            let s2 = c.sigma * c.sigma;
            // -expm1 keeps precision for t << tau
            s2 * c.tau * t + s2 * c.tau * c.tau * (-t / c.tau).exp_m1()
        })
        .sum())
}

/// Limit of `d(t) - D t` as `t -> inf`, i.e. `-sum_i sigma_i^2 tau_i^2`.
pub fn y_variance_offset(spec: &NoiseSpec) -> Result<f64> {
    let terms = spec.require_gaussian("integrated variance")?;
    Ok(-terms
        .iter()
        .map(|c| c.sigma * c.sigma * c.tau * c.tau)
        .sum::<f64>())
}

/// One realization of a noise process on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl NoisePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self::new(grid, vec![0.0; grid.len()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Exponential change of measure for the multiplicative noise.
///
/// Under the tilted law each OU component `i` has its mean shifted by
/// `-2 theta sigma_i^2 tau_i`, which is the interior mean of the noise when
/// paths are reweighted by `exp(-theta Y_t)`. Paths drawn under either law
/// carry the running log likelihood ratio `ln dQ/dP` of their prefix,
/// computed from the discrete OU innovations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    pub theta: f64,
    /// Draw the path from the tilted law (`true`) or the original one.
    pub draw_tilted: bool,
}

/// A noise path together with `ln dQ/dP` of its prefix at every node.
#[derive(Debug, Clone)]
pub struct TiltedPath {
    pub path: NoisePath,
    pub log_lr: Vec<f64>,
}

struct OuStep {
    sigma: f64,
    decay: f64,
    kick: f64,
}

impl OuStep {
    fn new(term: &OuTerm, dt: f64) -> Self {
        let decay = (-dt / term.tau).exp();
        let kick = term.sigma * (-(-2.0 * dt / term.tau).exp_m1()).sqrt();
        Self {
            sigma: term.sigma,
            decay,
            kick,
        }
    }
}

fn sample_ou_sum(
    terms: &[OuTerm],
    grid: &TimeGrid,
    stream: &mut RngStream,
    tilt: Option<Tilt>,
) -> TiltedPath {
    let n = grid.len();
    let mut values = vec![0.0; n];
    let mut log_lr = vec![0.0; n];
    let steps: Vec<OuStep> = terms.iter().map(|t| OuStep::new(t, grid.dt())).collect();
    let shifts: Vec<f64> = match tilt {
        Some(t) => terms
            .iter()
            .map(|c| -2.0 * t.theta * c.sigma * c.sigma * c.tau)
            .collect(),
        None => vec![0.0; terms.len()],
    };
    let applied = tilt.is_some_and(|t| t.draw_tilted);
    let mut state: Vec<f64> = steps.iter().map(|s| s.sigma * stream.normal()).collect();

    let mut lr = 0.0;
    for (j, s) in steps.iter().enumerate() {
        let x = state[j] + if applied { shifts[j] } else { 0.0 };
        let delta = shifts[j] / s.sigma;
        lr += delta * (x / s.sigma) - 0.5 * delta * delta;
    }
    values[0] = state
        .iter()
        .zip(&shifts)
        .map(|(g, m)| g + if applied { *m } else { 0.0 })
        .sum();
    log_lr[0] = lr;

    for k in 1..n {
        let mut total = 0.0;
        for (j, s) in steps.iter().enumerate() {
            let xi = stream.normal();
            state[j] = s.decay * state[j] + s.kick * xi;
            total += state[j];
            // Innovation of the observed path under P is xi + shift(1-r)/q
            // when the path is drawn tilted, plain xi otherwise.
            let delta = shifts[j] * (1.0 - s.decay) / s.kick;
            let xi_p = if applied { xi + delta } else { xi };
            lr += delta * xi_p - 0.5 * delta * delta;
        }
        values[k] = total
            + if applied {
                shifts.iter().sum::<f64>()
            } else {
                0.0
            };
        log_lr[k] = lr;
    }
    TiltedPath {
        path: NoisePath::new(*grid, values),
        log_lr,
    }
}

/// Standard normal survival function.
fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Samples one stationary realization; OU kinds start from the stationary
/// marginal and use the exact one-step update.
pub fn sample_path(spec: &NoiseSpec, grid: &TimeGrid, stream: &mut RngStream) -> NoisePath {
    match spec {
        NoiseSpec::Zero => NoisePath::zeros(*grid),
        NoiseSpec::Constant { level } => NoisePath::new(*grid, vec![*level; grid.len()]),
        NoiseSpec::Ou { .. } | NoiseSpec::OuSuperposition { .. } => {
            let terms = spec.gaussian_terms().expect("gaussian kind");
            sample_ou_sum(&terms, grid, stream, None).path
        }
        NoiseSpec::ParetoTransformedOu { tau_c, beta_1, x_m } => {
            let unit = [OuTerm::new(1.0, *tau_c)];
            let mut p = sample_ou_sum(&unit, grid, stream, None).path;
            let inv = -1.0 / beta_1;
            for v in &mut p.values {
                *v = x_m * normal_sf(*v).powf(inv);
            }
            p
        }
    }
}

/// Like [`sample_path`] but optionally tilted. Non-Gaussian specs ignore the
/// tilt and report a zero likelihood ratio.
pub fn sample_path_tilted(
    spec: &NoiseSpec,
    grid: &TimeGrid,
    stream: &mut RngStream,
    tilt: Option<Tilt>,
) -> TiltedPath {
    match (spec, tilt) {
        (NoiseSpec::Ou { .. } | NoiseSpec::OuSuperposition { .. }, Some(_)) => {
            let terms = spec.gaussian_terms().expect("gaussian kind");
            sample_ou_sum(&terms, grid, stream, tilt)
        }
        _ => TiltedPath {
            path: sample_path(spec, grid, stream),
            log_lr: vec![0.0; grid.len()],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRole;

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            s += f(lo + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn multiplicative_validation() {
        assert!(validate_multiplicative(&NoiseSpec::ou(1.0, 0.5))
            .unwrap()
            .warnings
            .is_empty());
        assert!(
            validate_multiplicative(&NoiseSpec::superposition(&[(1.0, 1.0), (0.5, 4.0)])).is_ok()
        );
        let pareto = NoiseSpec::ParetoTransformedOu {
            tau_c: 1.0,
            beta_1: 3.0,
            x_m: 1.0,
        };
        assert!(matches!(
            validate_multiplicative(&pareto),
            Err(Error::Rejected { .. })
        ));
        assert!(matches!(
            validate_multiplicative(&NoiseSpec::Constant { level: 1.0 }),
            Err(Error::Rejected { .. })
        ));
        assert_eq!(
            validate_multiplicative(&NoiseSpec::Zero)
                .unwrap()
                .warnings
                .len(),
            1
        );
        assert!(validate_multiplicative(&NoiseSpec::ou(-1.0, 0.5)).is_err());
        assert!(NoiseSpec::OuSuperposition { terms: vec![] }
            .validate()
            .is_err());
        assert!(NoiseSpec::ParetoTransformedOu {
            tau_c: 1.0,
            beta_1: 1.0,
            x_m: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn correlation_values() {
        let ou = NoiseSpec::ou(1.0, 0.5);
        assert_eq!(correlation(&ou, 0.0).unwrap(), 1.0);
        assert!((correlation(&ou, 0.5).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(correlation(&NoiseSpec::Zero, 3.0).unwrap(), 0.0);
        let pareto = NoiseSpec::ParetoTransformedOu {
            tau_c: 1.0,
            beta_1: 3.0,
            x_m: 1.0,
        };
        assert!(matches!(
            correlation(&pareto, 0.0),
            Err(Error::Unsupported { .. })
        ));
    }

    #[test]
    fn diffusion_constant_values() {
        assert!((diffusion_constant(&NoiseSpec::ou(1.0, 0.5)).unwrap() - 0.5).abs() < 1e-15);
        let sup = NoiseSpec::superposition(&[(1.0, 1.0), (2.0, 0.25)]);
        assert!((diffusion_constant(&sup).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(diffusion_constant(&NoiseSpec::Zero).unwrap(), 0.0);
    }

    #[test]
    fn diffusion_constant_matches_quadrature() {
        for spec in [
            NoiseSpec::ou(1.0, 0.5),
            NoiseSpec::superposition(&[(1.0, 1.0), (2.0, 0.25)]),
            NoiseSpec::superposition(&[(1.0, 1.0), (0.5, 4.0)]),
        ] {
            let tmax = 50.0 * spec.max_tau().unwrap();
            let q = trapezoid(|t| correlation(&spec, t).unwrap(), 0.0, tmax, 400_000);
            let d = diffusion_constant(&spec).unwrap();
            assert!(((q - d) / d).abs() < 1e-6, "{q} vs {d}");
        }
    }

    #[test]
    fn y_variance_half_matches_quadrature() {
        let spec = NoiseSpec::superposition(&[(1.0, 0.5), (0.7, 3.0)]);
        for t in [0.1, 1.0, 4.0, 10.0] {
            let q = trapezoid(
                |x| (t - x) * correlation(&spec, x).unwrap(),
                0.0,
                t,
                200_000,
            );
            let d = y_variance_half(&spec, t).unwrap();
            assert!(((q - d) / d).abs() < 1e-8, "t={t}: {q} vs {d}");
        }
        let ou = NoiseSpec::ou(1.0, 0.5);
        assert_eq!(y_variance_half(&ou, 0.0).unwrap(), 0.0);
        let d10 = y_variance_half(&ou, 10.0).unwrap();
        assert!((d10 - (5.0 - 0.25 * (1.0 - (-20f64).exp()))).abs() < 1e-12);
    }

    #[test]
    fn d_minus_dt_is_bounded() {
        let spec = NoiseSpec::superposition(&[(1.0, 1.0), (0.5, 4.0)]);
        let dc = diffusion_constant(&spec).unwrap();
        let off = y_variance_offset(&spec).unwrap();
        for t in [10.0, 100.0, 1e3, 1e5] {
            let gap = y_variance_half(&spec, t).unwrap() - dc * t;
            assert!(gap.abs() <= off.abs() + 1e-9 * t);
        }
        let big = y_variance_half(&spec, 1e4).unwrap() - dc * 1e4;
        assert!((big - off).abs() < 1e-8);
    }

    #[test]
    fn zero_and_constant_paths() {
        let g = TimeGrid::new(0.1, 10).unwrap();
        let mut s = RngStream::new(1, 0, StreamRole::Multiplicative);
        assert!(sample_path(&NoiseSpec::Zero, &g, &mut s)
            .values
            .iter()
            .all(|&v| v == 0.0));
        assert!(sample_path(&NoiseSpec::Constant { level: 2.5 }, &g, &mut s)
            .values
            .iter()
            .all(|&v| v == 2.5));
    }

    #[test]
    fn pareto_paths_are_bounded_below() {
        let g = TimeGrid::new(0.1, 200).unwrap();
        let spec = NoiseSpec::ParetoTransformedOu {
            tau_c: 1.0,
            beta_1: 3.0,
            x_m: 0.5,
        };
        let mut s = RngStream::new(9, 0, StreamRole::Additive);
        let p = sample_path(&spec, &g, &mut s);
        assert!(p.is_finite());
        assert!(p.values.iter().all(|&v| v >= 0.5));
    }

    #[test]
    fn untilted_draw_has_consistent_likelihood_ratio() {
        // theta = 0 must give an identically zero log ratio and the plain path.
        let g = TimeGrid::new(0.05, 100).unwrap();
        let spec = NoiseSpec::ou(1.0, 0.5);
        let plain = sample_path(
            &spec,
            &g,
            &mut RngStream::new(3, 5, StreamRole::Multiplicative),
        );
        let t = sample_path_tilted(
            &spec,
            &g,
            &mut RngStream::new(3, 5, StreamRole::Multiplicative),
            Some(Tilt {
                theta: 0.0,
                draw_tilted: true,
            }),
        );
        assert_eq!(plain.values, t.path.values);
        assert!(t.log_lr.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn tilted_path_is_shifted_copy() {
        let g = TimeGrid::new(0.05, 100).unwrap();
        let spec = NoiseSpec::superposition(&[(1.0, 0.5), (0.5, 2.0)]);
        let tilt = |draw| {
            Some(Tilt {
                theta: 1.5,
                draw_tilted: draw,
            })
        };
        let p = sample_path_tilted(
            &spec,
            &g,
            &mut RngStream::new(3, 5, StreamRole::Multiplicative),
            tilt(false),
        );
        let q = sample_path_tilted(
            &spec,
            &g,
            &mut RngStream::new(3, 5, StreamRole::Multiplicative),
            tilt(true),
        );
        let shift = -2.0 * 1.5 * (0.5 + 0.25 * 2.0);
        for (a, b) in p.path.values.iter().zip(&q.path.values) {
            assert!((b - a - shift).abs() < 1e-12);
        }
        // ln dQ/dP is larger on the path drawn from Q.
        assert!(q.log_lr.last().unwrap() > p.log_lr.last().unwrap());
    }
}

//! Estimators of the critical exponent and the diffusion constant, and the
//! distributional checks built on them.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::noise::{diffusion_constant, sample_path, NoiseSpec};
use crate::rde::gaussian::{log_mgf_exact, sample_y_marginal};
use crate::rde::{
    integrate_y, par_map, pick_stride, simulate_linear, EnsembleSpec, Label, LinearModel,
    PathEnsemble, PathKey, Sampling, TimeGrid,
};
use crate::reduce::{mean, mean_var, pairwise_sum};
use crate::rng::StreamRole;

const Z_975: f64 = 1.959963984540054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Hill,
    MomentTransition,
    GreenKuboD,
    DtFitD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReportFlag {
    /// Hill estimates over the k scan disagree beyond sampling error.
    Nonstable,
}

/// Secondary estimate from a parameter scan (`k` for Hill, `p` for the
/// moment transition).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub x: f64,
    pub estimate: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub method: Method,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub analytic: Option<f64>,
    pub n_effective: usize,
    pub flags: Vec<ReportFlag>,
    pub scan: Vec<ScanPoint>,
}

impl ExponentReport {
    fn new(method: Method, estimate: f64, ci: (f64, f64), n_effective: usize) -> Self {
        Self {
            method,
            estimate,
            ci_low: ci.0.min(estimate),
            ci_high: ci.1.max(estimate),
            analytic: None,
            n_effective,
            flags: Vec::new(),
            scan: Vec::new(),
        }
    }

    pub fn with_analytic(mut self, value: f64) -> Self {
        self.analytic = Some(value);
        self
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    /// Each estimate lies inside the other's interval.
    pub fn agrees_with(&self, other: &ExponentReport) -> bool {
        self.contains(other.estimate) && other.contains(self.estimate)
    }

    pub fn relative_error(&self) -> Option<f64> {
        self.analytic.map(|a| ((self.estimate - a) / a).abs())
    }

    pub fn is_stable(&self) -> bool {
        !self.flags.contains(&ReportFlag::Nonstable)
    }
}

/// `ceil(n^0.6)`.
pub fn default_hill_k(n: usize) -> usize {
    (n as f64).powf(0.6).ceil() as usize
}

fn hill_at(sorted_desc: &[f64], k: usize) -> Option<f64> {
    let threshold = sorted_desc[k];
    if !(threshold > 0.0) {
        return None;
    }
    let lt = threshold.ln();
    let logs: Vec<f64> = sorted_desc[..k].iter().map(|x| x.ln() - lt).collect();
    let h = pairwise_sum(&logs) / k as f64;
    (h > 0.0).then(|| 1.0 / h)
}

/// Hill estimate of the tail index of `|samples|` from the top `k` order
/// statistics, with a scan over `k/4 .. 4k`.
///
/// The scan flags [`ReportFlag::Nonstable`] when an estimate at `k'` differs
/// from the one at `k` by more than three standard errors of the difference,
/// `est * sqrt(|1/k' - 1/k|)` for nested top sets.
pub fn hill_estimator(samples: &[f64], k: usize) -> Result<ExponentReport> {
    let n = samples.len();
    if k < 10 {
        return Err(Error::InvalidParameter {
            name: "k",
            value: k as f64,
            constraint: "must be at least 10",
        });
    }
    if 2 * k >= n {
        return Err(Error::InvalidParameter {
            name: "k",
            value: k as f64,
            constraint: "must be below half the sample size",
        });
    }
    let mut xs: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    xs.sort_by(|a, b| b.total_cmp(a));
    let insufficient = |xs: &[f64]| Error::InsufficientTail {
        found: xs.iter().filter(|&&x| x > xs[k]).count(),
        required: k,
    };
    let est = hill_at(&xs, k).ok_or_else(|| insufficient(&xs))?;
    let se = est / (k as f64).sqrt();
    let mut report =
        ExponentReport::new(Method::Hill, est, (est - Z_975 * se, est + Z_975 * se), k);
    let mut nonstable = false;
    for kk in [k / 4, k / 2, k, 2 * k, 4 * k] {
        if kk < 10 || 2 * kk >= n {
            continue;
        }
        let Some(e) = hill_at(&xs, kk) else {
            nonstable = true;
            continue;
        };
        let diff_se = est * (1.0 / kk as f64 - 1.0 / k as f64).abs().sqrt();
        if (e - est).abs() > 3.0 * diff_se + 1e-12 * est {
            nonstable = true;
        }
        report.scan.push(ScanPoint {
            x: kk as f64,
            estimate: e,
            std_err: e / (kk as f64).sqrt(),
        });
    }
    if nonstable {
        report.flags.push(ReportFlag::Nonstable);
    }
    Ok(report)
}

/// Simulation settings for [`moment_transition`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSettings {
    pub dt: f64,
    /// Fit window; defaults to the last three quarters of the horizon.
    pub window: Option<(f64, f64)>,
    pub master_seed: u64,
    pub workers: usize,
}

impl TransitionSettings {
    pub fn new(dt: f64, master_seed: u64) -> Self {
        Self {
            dt,
            window: None,
            master_seed,
            workers: 0,
        }
    }
}

/// Slope of `ln ||X_t||_p` for every `p` in `p_grid`, and the order where it
/// crosses zero.
///
/// Each order uses a defensive mixture tilted at `theta = p`, all from the
/// same master seed so neighbouring slopes share their random numbers. The
/// crossing is interpolated linearly between the bracketing orders; the
/// interval comes from shifting both slopes by `±1.96` standard errors.
pub fn moment_transition(
    model: &LinearModel,
    p_grid: &[f64],
    horizon: f64,
    n_paths: usize,
    settings: TransitionSettings,
) -> Result<ExponentReport> {
    model.validate()?;
    if p_grid.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "p_grid",
            value: p_grid.len() as f64,
            constraint: "needs at least two orders",
        });
    }
    let grid = TimeGrid::with_horizon(settings.dt, horizon)?;
    let stride = pick_stride(grid.n_steps(), 100);
    let window = settings.window.unwrap_or((0.25 * horizon, horizon));
    let mut ps = p_grid.to_vec();
    ps.sort_by(f64::total_cmp);
    let mut scan = Vec::with_capacity(ps.len());
    for &p in &ps {
        let spec = EnsembleSpec::new(grid, n_paths, settings.master_seed)
            .record_every(stride)
            .sampling(Sampling::TiltedMixture { theta: p })
            .workers(settings.workers);
        let ens = simulate_linear(model, &spec, &[Label::X])?;
        let fit = ens
            .get(Label::X)
            .unwrap()
            .fit_quasi_norm_rate(p, Some(window))?;
        scan.push(ScanPoint {
            x: p,
            estimate: fit.slope,
            std_err: fit.slope_std_err,
        });
    }
    let crossing = |shift: f64| -> Option<f64> {
        scan.windows(2).find_map(|w| {
            let (s0, s1) = (
                w[0].estimate + shift * w[0].std_err,
                w[1].estimate + shift * w[1].std_err,
            );
            (s0 <= 0.0 && s1 > 0.0 || s0 >= 0.0 && s1 < 0.0)
                .then(|| w[0].x + (w[1].x - w[0].x) * s0 / (s0 - s1))
        })
    };
    let est = crossing(0.0).ok_or(Error::NoSignChange)?;
    // shifting slopes up moves the crossing left
    let lo = crossing(Z_975).unwrap_or(ps[0]);
    let hi = crossing(-Z_975).unwrap_or(*ps.last().unwrap());
    let mut report = ExponentReport::new(
        Method::MomentTransition,
        est,
        (lo.min(hi), lo.max(hi)),
        n_paths,
    );
    report.scan = scan;
    if let Some(bc) = model.critical_exponent() {
        report = report.with_analytic(bc);
    }
    Ok(report)
}

fn t_quantile(blocks: usize) -> f64 {
    StudentsT::new(0.0, 1.0, (blocks - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(Z_975)
}

pub const CI_BLOCKS: usize = 20;

/// Contiguous path blocks used for batch confidence intervals.
fn blocks(n: usize) -> Vec<std::ops::Range<usize>> {
    let b = CI_BLOCKS.min(n);
    (0..b).map(|j| j * n / b..(j + 1) * n / b).collect()
}

fn batch_interval(estimate: f64, per_block: &[f64]) -> (f64, f64) {
    if per_block.len() < 2 {
        return (estimate, estimate);
    }
    let (_, v) = mean_var(per_block);
    let half = t_quantile(per_block.len()) * (v / per_block.len() as f64).sqrt();
    (estimate - half, estimate + half)
}

fn trapezoid(ys: &[f64], h: f64) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    h * (pairwise_sum(ys) - 0.5 * (ys[0] + ys[ys.len() - 1]))
}

fn require_untilted(e: &PathEnsemble) -> Result<()> {
    if e.log_weights.is_some() {
        return Err(Error::Unsupported {
            kind: "tilted",
            what: "correlation estimates need an untilted ensemble",
        });
    }
    Ok(())
}

/// Trapezoid integral of the ensemble autocorrelation of `zeta` up to lag
/// `window`.
///
/// At each lag the correlation is the ensemble mean of `zeta_s zeta_{s+lag}`,
/// further averaged over origins `s` in `[0, horizon - window]`. The interval
/// comes from [`CI_BLOCKS`] contiguous path blocks.
pub fn green_kubo_d(zeta: &PathEnsemble, window: f64) -> Result<ExponentReport> {
    require_untilted(zeta)?;
    let horizon = zeta.grid.horizon();
    if !(window > 0.0) || window > 0.5 * horizon {
        return Err(Error::WindowTooLong { window, horizon });
    }
    let h = zeta.grid.dt();
    let lags = (window / h).round() as usize;
    let last = zeta.n_nodes() - 1;
    let origins = last - lags + 1;
    let paths: Vec<usize> = (0..zeta.n_paths).filter(|&i| !zeta.flagged[i]).collect();
    if paths.is_empty() {
        return Err(Error::EmptyInput);
    }
    let per_path: Vec<Vec<f64>> = par_map(0, paths.len(), |j| {
        let row = zeta.row(paths[j]);
        (0..=lags)
            .map(|l| {
                let prods: Vec<f64> = (0..origins).map(|s| row[s] * row[s + l]).collect();
                pairwise_sum(&prods) / origins as f64
            })
            .collect()
    });
    let corr_over = |range: std::ops::Range<usize>| -> Vec<f64> {
        (0..=lags)
            .map(|l| {
                let col: Vec<f64> = per_path[range.clone()].iter().map(|c| c[l]).collect();
                mean(&col)
            })
            .collect()
    };
    let estimate = trapezoid(&corr_over(0..paths.len()), h);
    let per_block: Vec<f64> = blocks(paths.len())
        .into_iter()
        .map(|r| trapezoid(&corr_over(r), h))
        .collect();
    Ok(ExponentReport::new(
        Method::GreenKuboD,
        estimate,
        batch_interval(estimate, &per_block),
        paths.len(),
    ))
}

pub const MIN_WINDOW_NODES: usize = 5;

fn ols_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let tm = mean(ts);
    let ym = mean(ys);
    let sxy: Vec<f64> = ts
        .iter()
        .zip(ys)
        .map(|(t, y)| (t - tm) * (y - ym))
        .collect();
    let sxx: Vec<f64> = ts.iter().map(|t| (t - tm) * (t - tm)).collect();
    pairwise_sum(&sxy) / pairwise_sum(&sxx)
}

/// Least-squares slope of the ensemble mean of `Y_t^2 / 2` over `window`.
pub fn dt_fit_d(y: &PathEnsemble, window: (f64, f64)) -> Result<ExponentReport> {
    require_untilted(y)?;
    let tol = 1e-9 * (1.0 + window.1.abs());
    let nodes: Vec<usize> = (0..y.n_nodes())
        .filter(|&k| {
            let t = y.grid.t(k);
            t >= window.0 - tol && t <= window.1 + tol
        })
        .collect();
    if nodes.len() < MIN_WINDOW_NODES {
        return Err(Error::WindowTooShort {
            found: nodes.len(),
            required: MIN_WINDOW_NODES,
        });
    }
    let paths: Vec<usize> = (0..y.n_paths).filter(|&i| !y.flagged[i]).collect();
    if paths.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ts: Vec<f64> = nodes.iter().map(|&k| y.grid.t(k)).collect();
    let slope_over = |idx: &[usize]| -> f64 {
        let half_sq: Vec<f64> = nodes
            .iter()
            .map(|&k| {
                let sq: Vec<f64> = idx.iter().map(|&i| 0.5 * y.value(i, k).powi(2)).collect();
                mean(&sq)
            })
            .collect();
        ols_slope(&ts, &half_sq)
    };
    let estimate = slope_over(&paths);
    let per_block: Vec<f64> = if paths.len() >= 2 {
        blocks(paths.len())
            .into_iter()
            .map(|r| slope_over(&paths[r]))
            .collect()
    } else {
        Vec::new()
    };
    Ok(ExponentReport::new(
        Method::DtFitD,
        estimate,
        batch_interval(estimate, &per_block),
        paths.len(),
    ))
}

/// How `E[exp(-p Y_t)]` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition1Mode {
    /// Closed form `exp(p^2 d(t))`.
    #[default]
    Exact,
    /// Direct draws of the Gaussian marginal of `Y_t`.
    GaussianSample { n: usize, master_seed: u64 },
    /// Trapezoid integrals of simulated noise paths.
    Paths { n: usize, master_seed: u64, dt: f64 },
}

pub const DEFAULT_RATIO_BUDGET: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Boundedness {
    Bounded,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition1Point {
    pub t: f64,
    /// `E[exp(-p Y_t)] exp(-p^2 D t)`.
    pub r: f64,
    pub std_err: f64,
    pub analytic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition1Report {
    pub p: f64,
    pub d: f64,
    pub points: Vec<Condition1Point>,
    pub ratio: f64,
    pub budget: f64,
    pub verdict: Boundedness,
}

/// The curve `r(t) = E[exp(-p Y_t)] exp(-p^2 D t)` and whether its max/min
/// ratio over `t_grid` stays within `budget`.
pub fn condition1_diagnostic(
    spec: &NoiseSpec,
    p: f64,
    t_grid: &[f64],
    mode: Condition1Mode,
    budget: f64,
) -> Result<Condition1Report> {
    if spec.gaussian_terms().is_none() {
        return Err(Error::Unsupported {
            kind: spec.kind_name(),
            what: "the boundedness check needs Gaussian multiplicative noise",
        });
    }
    spec.validate()?;
    if t_grid.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d = diffusion_constant(spec)?;
    let analytic =
        |t: f64| -> Result<f64> { Ok((log_mgf_exact(spec, p, t)? - p * p * d * t).exp()) };
    let from_samples = |ys: &[f64], t: f64| -> Result<Condition1Point> {
        let scale = (-p * p * d * t).exp();
        let e: Vec<f64> = ys.iter().map(|y| (-p * y).exp()).collect();
        let (m, v) = mean_var(&e);
        Ok(Condition1Point {
            t,
            r: m * scale,
            std_err: (v / e.len() as f64).sqrt() * scale,
            analytic: analytic(t)?,
        })
    };
    let points = match mode {
        Condition1Mode::Exact => t_grid
            .iter()
            .map(|&t| {
                Ok(Condition1Point {
                    t,
                    r: analytic(t)?,
                    std_err: 0.0,
                    analytic: analytic(t)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        Condition1Mode::GaussianSample { n, master_seed } => t_grid
            .iter()
            .map(|&t| from_samples(&sample_y_marginal(spec, t, n, master_seed)?, t))
            .collect::<Result<Vec<_>>>()?,
        Condition1Mode::Paths { n, master_seed, dt } => {
            let ys = y_at_times(spec, t_grid, n, master_seed, dt)?;
            t_grid
                .iter()
                .enumerate()
                .map(|(j, &t)| from_samples(&ys[j], t))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let max = points.iter().map(|q| q.r).fold(f64::NEG_INFINITY, f64::max);
    let min = points.iter().map(|q| q.r).fold(f64::INFINITY, f64::min);
    let ratio = if min > 0.0 { max / min } else { f64::INFINITY };
    let verdict = if ratio.is_finite() && ratio <= budget {
        Boundedness::Bounded
    } else {
        Boundedness::Unbounded
    };
    Ok(Condition1Report {
        p,
        d,
        points,
        ratio,
        budget,
        verdict,
    })
}

/// `Y_t` of `n` simulated noise paths at each of `times`, indexed
/// `[time][path]`.
pub fn y_at_times(
    spec: &NoiseSpec,
    times: &[f64],
    n: usize,
    master_seed: u64,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let grid = TimeGrid::with_horizon(dt, t_max.max(dt))?;
    let idx: Vec<usize> = times.iter().map(|&t| grid.index_of(t)).collect();
    let rows = par_map(0, n, |i| {
        let z = sample_path(
            spec,
            &grid,
            &mut PathKey::new(master_seed, i as u64).stream(StreamRole::Multiplicative),
        );
        let y = integrate_y(&z);
        idx.iter().map(|&k| y.values[k]).collect::<Vec<f64>>()
    });
    Ok((0..times.len())
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
    pub critical_value: f64,
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
    pub pass: bool,
}

/// Kolmogorov distribution tail `P(K > lambda)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test at level `alpha`, rejecting when the
/// statistic exceeds `sqrt(-ln(alpha/2)/2) sqrt((n+m)/(n m))`.
pub fn ks_two_sample(x: &[f64], y: &[f64], alpha: f64) -> Result<KsReport> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let critical_value = c / ne.sqrt();
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsReport {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        critical_value,
        alpha,
        n,
        m,
        pass: d <= critical_value,
    })
}

/// Samples of a single-time marginal tagged with the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededSample {
    pub values: Vec<f64>,
    pub master_seed: u64,
}

/// KS test of `B_t` against `H_t` at the 1% level.
pub fn b_equals_h_test(b: &SeededSample, h: &SeededSample) -> Result<KsReport> {
    if b.master_seed == h.master_seed {
        return Err(Error::SameSeed(b.master_seed));
    }
    ks_two_sample(&b.values, &h.values, 0.01)
}

/// `n` draws of one process of the linear model at time `t`.
pub fn marginal_at(
    model: &LinearModel,
    label: Label,
    t: f64,
    n: usize,
    master_seed: u64,
    dt: f64,
    workers: usize,
) -> Result<SeededSample> {
    let grid = TimeGrid::with_horizon(dt, t)?;
    let spec = EnsembleSpec::new(grid, n, master_seed)
        .record_every(grid.n_steps())
        .workers(workers);
    let e = simulate_linear(model, &spec, &[label])?;
    let col = e.get(label).unwrap().column(1);
    Ok(SeededSample {
        values: col.values,
        master_seed,
    })
}

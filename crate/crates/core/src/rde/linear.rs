use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::noise::{
    self, sample_path, sample_path_tilted, validate_multiplicative, NoisePath, NoiseSpec, Tilt,
};
use crate::rde::TimeGrid;
use crate::rng::{RngStream, StreamRole};

/// Largest `|ln A|` a path may reach before it is flagged as overflowed.
pub const LOG_BUDGET: f64 = 700.0;

/// `dX/dt = -(a + zeta_t) X + phi_t`, `X_0 = x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub a: f64,
    pub multiplicative: NoiseSpec,
    pub additive: NoiseSpec,
    pub x0: f64,
}

impl LinearModel {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("a", self.a)?;
        validate_multiplicative(&self.multiplicative)?;
        self.additive.validate()?;
        if !self.x0.is_finite() {
            return Err(Error::InvalidParameter {
                name: "x0",
                value: self.x0,
                constraint: "must be finite",
            });
        }
        Ok(())
    }

    pub fn diffusion_constant(&self) -> Result<f64> {
        noise::diffusion_constant(&self.multiplicative)
    }

    /// `a / D`, or `None` when the multiplicative noise vanishes.
    pub fn critical_exponent(&self) -> Option<f64> {
        match self.diffusion_constant() {
            Ok(d) if d > 0.0 => Some(self.a / d),
            _ => None,
        }
    }

    /// `0.01 * min(tau_i, 1/a)` over both noises.
    pub fn default_dt(&self) -> f64 {
        default_dt(self.a, [&self.multiplicative, &self.additive])
    }
}

pub(crate) fn default_dt<'a>(a: f64, specs: impl IntoIterator<Item = &'a NoiseSpec>) -> f64 {
    let tau = specs
        .into_iter()
        .filter_map(NoiseSpec::min_tau)
        .fold(1.0 / a, f64::min);
    0.01 * tau
}

/// Identifies one realization: the random streams of path `index` under
/// `master_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathKey {
    pub master_seed: u64,
    pub index: u64,
}

impl PathKey {
    pub fn new(master_seed: u64, index: u64) -> Self {
        Self { master_seed, index }
    }

    pub fn stream(&self, role: StreamRole) -> RngStream {
        RngStream::new(self.master_seed, self.index, role)
    }
}

/// Cumulative trapezoid, `Y_0 = 0`.
pub fn integrate_y(zeta: &NoisePath) -> NoisePath {
    let h = 0.5 * zeta.grid.dt();
    let mut out = Vec::with_capacity(zeta.values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in zeta.values.windows(2) {
        acc += h * (w[0] + w[1]);
        out.push(acc);
    }
    NoisePath::new(zeta.grid, out)
}

/// `A_t = exp(-a t - Y_t)` with its logarithm.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub log: Vec<f64>,
    pub values: NoisePath,
}

impl Propagator {
    pub fn overflowed(&self) -> bool {
        self.log
            .iter()
            .any(|l| l.abs() > LOG_BUDGET || !l.is_finite())
    }
}

pub fn propagator(y: &NoisePath, a: f64) -> Propagator {
    let log: Vec<f64> = y
        .values
        .iter()
        .enumerate()
        .map(|(k, yk)| -a * y.grid.t(k) - yk)
        .collect();
    let values = log
        .iter()
        .map(|l| l.clamp(-LOG_BUDGET, LOG_BUDGET).exp())
        .collect();
    Propagator {
        log,
        values: NoisePath::new(y.grid, values),
    }
}

/// Forced response `B_t = int_0^t phi_s A_t / A_s ds`, built step by step
/// from log-propagator differences so the ratio is never formed directly.
pub fn forced_response(phi: &NoisePath, a: &Propagator) -> NoisePath {
    let h = 0.5 * phi.grid.dt();
    let mut out = Vec::with_capacity(phi.values.len());
    let mut b = 0.0;
    out.push(0.0);
    for k in 0..phi.values.len() - 1 {
        let growth = (a.log[k + 1] - a.log[k]).exp();
        b = b * growth + h * (phi.values[k] * growth + phi.values[k + 1]);
        out.push(b);
    }
    NoisePath::new(phi.grid, out)
}

/// Time-reversed counterpart `H_t = int_0^t phi_s A_s ds`.
pub fn reversed_h(phi: &NoisePath, a: &Propagator) -> NoisePath {
    let h = 0.5 * phi.grid.dt();
    let av = &a.values.values;
    let mut out = Vec::with_capacity(phi.values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 0..phi.values.len() - 1 {
        acc += h * (phi.values[k] * av[k] + phi.values[k + 1] * av[k + 1]);
        out.push(acc);
    }
    NoisePath::new(phi.grid, out)
}

/// All processes of one linear realization.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub zeta: NoisePath,
    pub phi: NoisePath,
    pub y: NoisePath,
    pub a: Propagator,
    pub b: NoisePath,
    pub x: NoisePath,
    /// `ln dQ/dP` of the multiplicative noise prefix (zero when untilted).
    pub log_lr: Vec<f64>,
    pub overflow: bool,
}

fn saturate(v: &mut [f64]) {
    for x in v {
        if x.is_nan() {
            *x = f64::MAX;
        } else if x.is_infinite() {
            *x = x.signum() * f64::MAX;
        }
    }
}

/// Solution `X = x0 A + B` for given noise paths.
pub fn solve_linear_paths(
    a: f64,
    x0: f64,
    zeta: NoisePath,
    phi: NoisePath,
    log_lr: Vec<f64>,
) -> LinearSolution {
    let y = integrate_y(&zeta);
    let prop = propagator(&y, a);
    let mut b = forced_response(&phi, &prop);
    let mut x = NoisePath::new(
        b.grid,
        prop.values
            .values
            .iter()
            .zip(&b.values)
            .map(|(av, bv)| x0 * av + bv)
            .collect(),
    );
    let overflow = prop.overflowed() || !b.is_finite() || !x.is_finite();
    if overflow {
        saturate(&mut b.values);
        saturate(&mut x.values);
    }
    LinearSolution {
        zeta,
        phi,
        y,
        a: prop,
        b,
        x,
        log_lr,
        overflow,
    }
}

/// Simulates one realization of the linear model.
pub fn solve_linear(
    model: &LinearModel,
    grid: &TimeGrid,
    key: PathKey,
    tilt: Option<Tilt>,
) -> LinearSolution {
    let z = sample_path_tilted(
        &model.multiplicative,
        grid,
        &mut key.stream(StreamRole::Multiplicative),
        tilt,
    );
    let phi = sample_path(&model.additive, grid, &mut key.stream(StreamRole::Additive));
    solve_linear_paths(model.a, model.x0, z.path, phi, z.log_lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(mult: NoiseSpec, add: NoiseSpec, x0: f64) -> LinearModel {
        LinearModel {
            a: 1.0,
            multiplicative: mult,
            additive: add,
            x0,
        }
    }

    #[test]
    fn integrate_y_constant_is_exact() {
        let g = TimeGrid::new(0.1, 50).unwrap();
        let y = integrate_y(&NoisePath::new(g, vec![0.7; g.len()]));
        for (k, v) in y.values.iter().enumerate() {
            assert!((v - 0.7 * g.t(k)).abs() < 1e-12);
        }
        let y0 = integrate_y(&NoisePath::zeros(g));
        assert!(y0.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn propagator_without_noise_is_exponential() {
        let g = TimeGrid::new(0.1, 30).unwrap();
        let p = propagator(&NoisePath::zeros(g), 0.8);
        assert_eq!(p.values.values[0], 1.0);
        for k in 0..g.len() {
            assert!((p.values.values[k] - (-0.8 * g.t(k)).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_decay() {
        let g = TimeGrid::new(0.01, 500).unwrap();
        let s = solve_linear(
            &model(NoiseSpec::Zero, NoiseSpec::Zero, 2.0),
            &g,
            PathKey::new(1, 0),
            None,
        );
        for k in 0..g.len() {
            assert!((s.x.values[k] - 2.0 * (-g.t(k)).exp()).abs() < 1e-13);
        }
        assert!(!s.overflow);
    }

    #[test]
    fn constant_forcing_matches_ode_solution() {
        // X' = -a X + c  =>  X = c/a (1 - e^{-at}) + x0 e^{-at}
        let c = 1.5;
        let x0 = -0.5;
        for (dt, tol) in [(0.02, 2e-4), (0.01, 5e-5)] {
            let g = TimeGrid::with_horizon(dt, 10.0).unwrap();
            let s = solve_linear(
                &model(NoiseSpec::Zero, NoiseSpec::Constant { level: c }, x0),
                &g,
                PathKey::new(1, 0),
                None,
            );
            let err = (0..g.len())
                .map(|k| {
                    let t = g.t(k);
                    (s.x.values[k] - (c * (1.0 - (-t).exp()) + x0 * (-t).exp())).abs()
                })
                .fold(0.0, f64::max);
            assert!(err < tol, "dt={dt} err={err}");
            // H with zeta = 0: c (1 - e^{-t}) / a
            let h = reversed_h(&s.phi, &s.a);
            let herr = (0..g.len())
                .map(|k| (h.values[k] - c * (1.0 - (-g.t(k)).exp())).abs())
                .fold(0.0, f64::max);
            assert!(herr < tol);
        }
    }

    #[test]
    fn zero_initial_condition_gives_forced_response() {
        let g = TimeGrid::new(0.01, 300).unwrap();
        let s = solve_linear(
            &model(NoiseSpec::ou(1.0, 0.5), NoiseSpec::ou(0.5, 1.0), 0.0),
            &g,
            PathKey::new(4, 2),
            None,
        );
        assert_eq!(s.x.values, s.b.values);
    }

    #[test]
    fn linear_in_initial_condition() {
        let g = TimeGrid::new(0.01, 1000).unwrap();
        let m1 = model(NoiseSpec::ou(1.0, 0.5), NoiseSpec::ou(0.5, 1.0), 3.0);
        let mut m2 = m1.clone();
        m2.x0 = -1.0;
        let s1 = solve_linear(&m1, &g, PathKey::new(4, 2), None);
        let s2 = solve_linear(&m2, &g, PathKey::new(4, 2), None);
        for k in 0..g.len() {
            let lhs = s1.x.values[k] - s2.x.values[k];
            let rhs = 4.0 * s1.a.values.values[k];
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn phi_zero_gives_zero_h() {
        let g = TimeGrid::new(0.01, 100).unwrap();
        let s = solve_linear(
            &model(NoiseSpec::ou(1.0, 0.5), NoiseSpec::Zero, 1.0),
            &g,
            PathKey::new(1, 1),
            None,
        );
        assert!(reversed_h(&s.phi, &s.a).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overflow_is_flagged_and_saturated() {
        // Constant multiplicative forcing is not a valid model, but it drives
        // the log propagator past the budget deterministically.
        let g = TimeGrid::new(0.1, 100).unwrap();
        let zeta = NoisePath::new(g, vec![-100.0; g.len()]);
        let s = solve_linear_paths(
            1.0,
            1.0,
            zeta,
            NoisePath::new(g, vec![1.0; g.len()]),
            vec![0.0; g.len()],
        );
        assert!(s.overflow);
        assert!(s.x.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_dt_rule() {
        let m = model(NoiseSpec::ou(1.0, 0.5), NoiseSpec::Zero, 1.0);
        assert!((m.default_dt() - 0.005).abs() < 1e-15);
        assert_eq!(m.critical_exponent(), Some(2.0));
        assert_eq!(
            model(NoiseSpec::Zero, NoiseSpec::Zero, 1.0).critical_exponent(),
            None
        );
    }
}

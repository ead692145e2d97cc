use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::noise::{
    sample_path, sample_path_tilted, validate_multiplicative, NoisePath, NoiseSpec, Tilt,
};
use crate::rde::linear::{PathKey, LOG_BUDGET};
use crate::rde::TimeGrid;
use crate::rng::StreamRole;

/// Nonlinear forcing `Psi_t[x]`, bounded by the envelope `phi_t >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `phi_t * sin(x)`
    SinModulated,
    /// `clamp(x, -phi_t, phi_t)`
    Clipped,
    /// `phi_t`; reduces the equation to the linear one.
    EnvelopeItself,
}

impl Nonlinearity {
    #[inline]
    pub fn eval(self, phi: f64, x: f64) -> f64 {
        match self {
            Nonlinearity::SinModulated => phi * x.sin(),
            Nonlinearity::Clipped => x.clamp(-phi, phi),
            Nonlinearity::EnvelopeItself => phi,
        }
    }
}

/// `dX/dt = -(a + zeta_t) X + Psi_t[X]` with `|Psi_t[x]| <= phi_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearModel {
    pub a: f64,
    pub multiplicative: NoiseSpec,
    pub envelope: NoiseSpec,
    pub nonlinearity: Nonlinearity,
    pub x0: f64,
}

impl NonlinearModel {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("a", self.a)?;
        validate_multiplicative(&self.multiplicative)?;
        self.envelope.validate()?;
        if !self.x0.is_finite() {
            return Err(Error::InvalidParameter {
                name: "x0",
                value: self.x0,
                constraint: "must be finite",
            });
        }
        Ok(())
    }

    pub fn critical_exponent(&self) -> Option<f64> {
        match crate::noise::diffusion_constant(&self.multiplicative) {
            Ok(d) if d > 0.0 => Some(self.a / d),
            _ => None,
        }
    }

    pub fn default_dt(&self) -> f64 {
        super::linear::default_dt(self.a, [&self.multiplicative, &self.envelope])
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearSolution {
    pub zeta: NoisePath,
    /// Non-negative envelope `|phi|` actually used.
    pub phi: NoisePath,
    pub x: NoisePath,
    pub log_lr: Vec<f64>,
    pub overflow: bool,
}

/// Classical RK4 with `substeps` steps per grid interval; the noises are
/// linearly interpolated between nodes.
pub fn integrate_nonlinear(
    a: f64,
    x0: f64,
    psi: Nonlinearity,
    zeta: &NoisePath,
    phi: &NoisePath,
    substeps: usize,
) -> (Vec<f64>, bool) {
    let grid = zeta.grid;
    let h = grid.dt() / substeps as f64;
    let n = grid.len();
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    out.push(x);
    let rhs = |z: f64, p: f64, x: f64| -(a + z) * x + psi.eval(p, x);
    let limit = LOG_BUDGET.exp();
    let mut overflow = false;
    for k in 0..n - 1 {
        let (z0, z1) = (zeta.values[k], zeta.values[k + 1]);
        let (p0, p1) = (phi.values[k], phi.values[k + 1]);
        for j in 0..substeps {
            let s0 = j as f64 / substeps as f64;
            let sm = (j as f64 + 0.5) / substeps as f64;
            let s1 = (j as f64 + 1.0) / substeps as f64;
            let zi = |s: f64| z0 + (z1 - z0) * s;
            let pi = |s: f64| p0 + (p1 - p0) * s;
            let (za, zm, zb) = (zi(s0), zi(sm), zi(s1));
            let (pa, pm, pb) = (pi(s0), pi(sm), pi(s1));
            let k1 = rhs(za, pa, x);
            let k2 = rhs(zm, pm, x + 0.5 * h * k1);
            let k3 = rhs(zm, pm, x + 0.5 * h * k2);
            let k4 = rhs(zb, pb, x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if !x.is_finite() || x.abs() > limit {
            overflow = true;
            x = if x.is_nan() {
                f64::MAX
            } else {
                x.signum() * f64::MAX
            };
            out.push(x);
            out.resize(n, x);
            return (out, overflow);
        }
        out.push(x);
    }
    (out, overflow)
}

/// Simulates one realization of the nonlinear model.
pub fn solve_nonlinear(
    model: &NonlinearModel,
    grid: &TimeGrid,
    key: PathKey,
    tilt: Option<Tilt>,
    substeps: usize,
) -> NonlinearSolution {
    let z = sample_path_tilted(
        &model.multiplicative,
        grid,
        &mut key.stream(StreamRole::Multiplicative),
        tilt,
    );
    let mut phi = sample_path(&model.envelope, grid, &mut key.stream(StreamRole::Additive));
    for v in &mut phi.values {
        *v = v.abs();
    }
    let (x, overflow) = integrate_nonlinear(
        model.a,
        model.x0,
        model.nonlinearity,
        &z.path,
        &phi,
        substeps,
    );
    NonlinearSolution {
        x: NoisePath::new(*grid, x),
        zeta: z.path,
        phi,
        log_lr: z.log_lr,
        overflow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rde::linear::{forced_response, integrate_y, propagator, solve_linear_paths};

    fn model(psi: Nonlinearity, envelope: NoiseSpec, x0: f64) -> NonlinearModel {
        NonlinearModel {
            a: 1.0,
            multiplicative: NoiseSpec::ou(1.0, 0.5),
            envelope,
            nonlinearity: psi,
            x0,
        }
    }

    #[test]
    fn nonlinearities_respect_envelope() {
        for psi in [
            Nonlinearity::SinModulated,
            Nonlinearity::Clipped,
            Nonlinearity::EnvelopeItself,
        ] {
            for &phi in &[0.0, 0.3, 2.0] {
                for &x in &[-10.0, -0.1, 0.0, 0.5, 7.0] {
                    assert!(psi.eval(phi, x).abs() <= phi);
                }
            }
        }
    }

    #[test]
    fn sin_modulated_from_rest_stays_at_rest() {
        let g = TimeGrid::new(0.01, 500).unwrap();
        let s = solve_nonlinear(
            &model(Nonlinearity::SinModulated, NoiseSpec::Zero, 0.0),
            &g,
            PathKey::new(2, 0),
            None,
            1,
        );
        assert!(s.x.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn envelope_itself_matches_linear_solver() {
        let g = TimeGrid::new(0.01, 1000).unwrap();
        let m = model(Nonlinearity::EnvelopeItself, NoiseSpec::ou(0.5, 1.0), 0.7);
        let nl = solve_nonlinear(&m, &g, PathKey::new(5, 3), None, 2);
        let lin = solve_linear_paths(1.0, 0.7, nl.zeta.clone(), nl.phi.clone(), vec![]);
        let err =
            nl.x.values
                .iter()
                .zip(&lin.x.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        assert!(err < 1e-3, "max deviation {err}");
    }

    #[test]
    fn envelope_bounds_deviation_from_homogeneous_part() {
        let g = TimeGrid::new(0.01, 2000).unwrap();
        for psi in [Nonlinearity::SinModulated, Nonlinearity::Clipped] {
            for idx in 0..5 {
                let m = model(psi, NoiseSpec::ou(0.8, 1.0), 2.0);
                let s = solve_nonlinear(&m, &g, PathKey::new(11, idx), None, 2);
                let a = propagator(&integrate_y(&s.zeta), m.a);
                let b = forced_response(&s.phi, &a);
                for k in 0..g.len() {
                    let hom = m.x0 * a.values.values[k];
                    let dev = (s.x.values[k] - hom).abs();
                    // RK4 against trapezoid quadrature: allow discretization error
                    let slack = 1e-4 * (b.values[k] + hom.abs());
                    assert!(
                        dev <= b.values[k] + slack,
                        "{psi:?} k={k}: {dev} > {}",
                        b.values[k]
                    );
                }
            }
        }
    }

    #[test]
    fn rk4_converges_at_fourth_order_without_noise() {
        // x' = -x + 0.5 sin x has no closed form; compare successive refinements.
        let g = TimeGrid::new(0.5, 20).unwrap();
        let z = NoisePath::zeros(g);
        let p = NoisePath::new(g, vec![0.5; g.len()]);
        let run = |s| {
            *integrate_nonlinear(1.0, 3.0, Nonlinearity::SinModulated, &z, &p, s)
                .0
                .last()
                .unwrap()
        };
        let (x1, x2, x4) = (run(1), run(2), run(4));
        let ratio = (x1 - x2).abs() / (x2 - x4).abs();
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }
}

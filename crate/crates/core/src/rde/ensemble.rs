//! Path ensembles and their parallel construction.
//!
//! Row `i` of every ensemble is a pure function of `(master_seed, i)`: paths
//! are simulated independently and written to their own rows, so the worker
//! count only changes wall-clock time.
//!
//! # Binary layout
//!
//! Little-endian, 64-byte header followed by the payload:
//!
//! | offset | size | field                                    |
//! |--------|------|------------------------------------------|
//! | 0      | 8    | magic `RDEENSMB`                         |
//! | 8      | 4    | format version (`u32`, currently 1)      |
//! | 12     | 4    | label code (`u32`, see [`Label::code`])  |
//! | 16     | 8    | `n_paths` (`u64`)                        |
//! | 24     | 8    | `n_steps` (`u64`)                        |
//! | 32     | 8    | `dt` (`f64`)                             |
//! | 40     | 8    | master seed (`u64`)                      |
//! | 48     | 4    | flags (`u32`, bit 0: log weights follow) |
//! | 52     | 12   | reserved, zero                           |
//!
//! Payload: `n_paths` bytes of overflow flags (0 or 1), then the
//! `n_paths x (n_steps + 1)` values row-major as `f64`, then the log weights
//! in the same layout when flag bit 0 is set.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{fit_rate, quasi_norm_weighted, QuasiNormEstimate, RateFit, RatePoint};
use crate::noise::Tilt;
use crate::rde::linear::{reversed_h, solve_linear, LinearModel, PathKey};
use crate::rde::nonlinear::{solve_nonlinear, NonlinearModel};
use crate::rde::TimeGrid;

/// Which process an ensemble holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    X,
    Y,
    A,
    B,
    H,
    Zeta,
    Phi,
}

impl Label {
    pub const ALL: [Label; 7] = [
        Label::X,
        Label::Y,
        Label::A,
        Label::B,
        Label::H,
        Label::Zeta,
        Label::Phi,
    ];

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::X => "x",
            Label::Y => "y",
            Label::A => "a",
            Label::B => "b",
            Label::H => "h",
            Label::Zeta => "zeta",
            Label::Phi => "phi",
        }
    }
}

/// One time slice of an ensemble, overflow-flagged paths removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub values: Vec<f64>,
    pub log_weights: Option<Vec<f64>>,
    pub excluded: usize,
}

impl Column {
    pub fn quasi_norm(&self, p: f64) -> Result<QuasiNormEstimate> {
        let mut e = quasi_norm_weighted(&self.values, self.log_weights.as_deref(), p)?;
        e.flagged_excluded = self.excluded;
        Ok(e)
    }
}

/// Rectangular block of realizations on an observation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub label: Label,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Row-major `n_paths x grid.len()`.
    pub values: Vec<f64>,
    pub flagged: Vec<bool>,
    /// Per-entry log importance weight, for tilted ensembles.
    pub log_weights: Option<Vec<f64>>,
}

impl PathEnsemble {
    pub fn n_nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_nodes();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n_nodes() + k]
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times().collect()
    }

    pub fn column(&self, k: usize) -> Column {
        let w = self.n_nodes();
        let keep = (0..self.n_paths).filter(|&i| !self.flagged[i]);
        let values = keep.clone().map(|i| self.values[i * w + k]).collect();
        let log_weights = self
            .log_weights
            .as_ref()
            .map(|lw| keep.map(|i| lw[i * w + k]).collect());
        Column {
            values,
            log_weights,
            excluded: self.flagged_count(),
        }
    }

    pub fn column_at(&self, t: f64) -> Column {
        self.column(self.grid.index_of(t))
    }

    /// `||X_t||_p` at every node.
    pub fn quasi_norm_curve(&self, p: f64) -> Result<Vec<(f64, QuasiNormEstimate)>> {
        (0..self.n_nodes())
            .map(|k| Ok((self.grid.t(k), self.column(k).quasi_norm(p)?)))
            .collect()
    }

    /// Rate of `||X_t||_p` over a window.
    pub fn fit_quasi_norm_rate(&self, p: f64, window: Option<(f64, f64)>) -> Result<RateFit> {
        let curve = self.quasi_norm_curve(p)?;
        let pts: Vec<RatePoint> = curve
            .iter()
            .map(|(t, e)| RatePoint::from_estimate(*t, e))
            .collect();
        fit_rate(&pts, window)
    }

    /// One row per path; columns `path`, `flagged`, then one per node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut header = vec!["path".to_string(), "flagged".to_string()];
        header.extend(self.grid.times().map(|t| format!("t={t}")));
        out.write_record(&header)?;
        for i in 0..self.n_paths {
            let mut rec = vec![i.to_string(), (self.flagged[i] as u8).to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = [0u8; 64];
        header[0..8].copy_from_slice(MAGIC);
        header[8..12].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        header[12..16].copy_from_slice(&self.label.code().to_le_bytes());
        header[16..24].copy_from_slice(&(self.n_paths as u64).to_le_bytes());
        header[24..32].copy_from_slice(&(self.grid.n_steps() as u64).to_le_bytes());
        header[32..40].copy_from_slice(&self.grid.dt().to_le_bytes());
        header[40..48].copy_from_slice(&self.master_seed.to_le_bytes());
        let flags: u32 = self.log_weights.is_some() as u32;
        header[48..52].copy_from_slice(&flags.to_le_bytes());
        w.write_all(&header)?;
        let flagged: Vec<u8> = self.flagged.iter().map(|&f| f as u8).collect();
        w.write_all(&flagged)?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(lw) = &self.log_weights {
            for v in lw {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 64];
        r.read_exact(&mut header)?;
        if &header[0..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let label =
            Label::from_code(u32_at(12)).ok_or_else(|| Error::Format("unknown label".into()))?;
        let n_paths = u64_at(16) as usize;
        let n_steps = u64_at(24) as usize;
        let dt = f64::from_le_bytes(header[32..40].try_into().unwrap());
        let master_seed = u64_at(40);
        let has_weights = u32_at(48) & 1 == 1;
        let grid = TimeGrid::new(dt, n_steps).map_err(|e| Error::Format(e.to_string()))?;
        let mut flagged = vec![0u8; n_paths];
        r.read_exact(&mut flagged)?;
        let count = n_paths * grid.len();
        let read_block = |r: &mut R| -> Result<Vec<f64>> {
            let mut raw = vec![0u8; count * 8];
            r.read_exact(&mut raw)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let values = read_block(&mut r)?;
        let log_weights = if has_weights {
            Some(read_block(&mut r)?)
        } else {
            None
        };
        Ok(Self {
            label,
            grid,
            n_paths,
            master_seed,
            values,
            flagged: flagged.into_iter().map(|b| b != 0).collect(),
            log_weights,
        })
    }
}

const MAGIC: &[u8; 8] = b"RDEENSMB";
const FORMAT_VERSION: u32 = 1;

/// How paths of the multiplicative noise are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampling {
    /// Plain Monte Carlo under the model law.
    #[default]
    Plain,
    /// Defensive importance sampling: even paths from the model law, odd
    /// paths from the law tilted by `exp(-theta Y_t)`. Every path carries the
    /// weight `dP / d(P/2 + Q/2)`, which never exceeds 2.
    TiltedMixture { theta: f64 },
}

impl Sampling {
    fn tilt(&self, index: usize) -> Option<Tilt> {
        match *self {
            Sampling::Plain => None,
            Sampling::TiltedMixture { theta } => Some(Tilt {
                theta,
                draw_tilted: index % 2 == 1,
            }),
        }
    }

    fn is_weighted(&self) -> bool {
        !matches!(self, Sampling::Plain)
    }
}

/// `ln dP/dM` for the half-half mixture `M`, given `l = ln dQ/dP`.
fn mixture_log_weight(l: f64) -> f64 {
    let softplus = if l > 0.0 {
        l + (-l).exp().ln_1p()
    } else {
        l.exp().ln_1p()
    };
    std::f64::consts::LN_2 - softplus
}

/// Simulation grid, ensemble size and seeding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub grid: TimeGrid,
    /// Keep every `record_every`-th node.
    pub record_every: usize,
    pub n_paths: usize,
    pub master_seed: u64,
    pub sampling: Sampling,
    /// Worker threads; 0 means all available cores.
    pub workers: usize,
}

impl EnsembleSpec {
    pub fn new(grid: TimeGrid, n_paths: usize, master_seed: u64) -> Self {
        Self {
            grid,
            record_every: 1,
            n_paths,
            master_seed,
            sampling: Sampling::Plain,
            workers: 0,
        }
    }

    pub fn record_every(mut self, stride: usize) -> Self {
        self.record_every = stride;
        self
    }

    pub fn sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn observation_grid(&self) -> Result<TimeGrid> {
        self.grid.coarsen(self.record_every)
    }

    fn validate(&self) -> Result<TimeGrid> {
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter {
                name: "n_paths",
                value: 0.0,
                constraint: "must be at least 1",
            });
        }
        self.observation_grid()
    }
}

/// Largest stride that divides `n_steps` and keeps at least `min_nodes` nodes.
pub fn pick_stride(n_steps: usize, min_nodes: usize) -> usize {
    let mut s = (n_steps / min_nodes.max(1)).max(1);
    while n_steps % s != 0 {
        s -= 1;
    }
    s
}

pub(crate) fn par_map<T: Send>(
    workers: usize,
    n: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    let run = || (0..n).into_par_iter().map(&f).collect();
    if workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool")
            .install(run)
    }
}

/// The requested processes of a batch of realizations.
#[derive(Debug, Clone, Default)]
pub struct Ensembles {
    pub by_label: BTreeMap<Label, PathEnsemble>,
    pub flagged: usize,
}

impl Ensembles {
    pub fn get(&self, label: Label) -> Option<&PathEnsemble> {
        self.by_label.get(&label)
    }

    pub fn take(&mut self, label: Label) -> Option<PathEnsemble> {
        self.by_label.remove(&label)
    }
}

struct PathRows {
    rows: Vec<(Label, Vec<f64>)>,
    log_weights: Option<Vec<f64>>,
    flagged: bool,
}

fn assemble(
    labels: &[Label],
    obs: TimeGrid,
    spec: &EnsembleSpec,
    paths: Vec<PathRows>,
) -> Ensembles {
    let weighted = paths.first().is_some_and(|p| p.log_weights.is_some());
    let flagged: Vec<bool> = paths.iter().map(|p| p.flagged).collect();
    let log_weights: Option<Vec<f64>> = weighted.then(|| {
        paths
            .iter()
            .flat_map(|p| p.log_weights.clone().unwrap())
            .collect()
    });
    let mut by_label = BTreeMap::new();
    for (j, &label) in labels.iter().enumerate() {
        let values = paths
            .iter()
            .flat_map(|p| p.rows[j].1.iter().copied())
            .collect();
        by_label.insert(
            label,
            PathEnsemble {
                label,
                grid: obs,
                n_paths: spec.n_paths,
                master_seed: spec.master_seed,
                values,
                flagged: flagged.clone(),
                log_weights: log_weights.clone(),
            },
        );
    }
    Ensembles {
        by_label,
        flagged: flagged.iter().filter(|&&f| f).count(),
    }
}

fn subsample(v: &[f64], stride: usize) -> Vec<f64> {
    v.iter().step_by(stride).copied().collect()
}

/// Simulates `spec.n_paths` realizations of the linear model and keeps the
/// processes listed in `labels`.
pub fn simulate_linear(
    model: &LinearModel,
    spec: &EnsembleSpec,
    labels: &[Label],
) -> Result<Ensembles> {
    model.validate()?;
    let obs = spec.validate()?;
    let stride = spec.record_every;
    let paths = par_map(spec.workers, spec.n_paths, |i| {
        let sol = solve_linear(
            model,
            &spec.grid,
            PathKey::new(spec.master_seed, i as u64),
            spec.sampling.tilt(i),
        );
        let rows = labels
            .iter()
            .map(|&l| {
                let full: Vec<f64> = match l {
                    Label::X => sol.x.values.clone(),
                    Label::Y => sol.y.values.clone(),
                    Label::A => sol.a.values.values.clone(),
                    Label::B => sol.b.values.clone(),
                    Label::H => reversed_h(&sol.phi, &sol.a).values,
                    Label::Zeta => sol.zeta.values.clone(),
                    Label::Phi => sol.phi.values.clone(),
                };
                (l, subsample(&full, stride))
            })
            .collect();
        PathRows {
            rows,
            log_weights: spec.sampling.is_weighted().then(|| {
                sol.log_lr
                    .iter()
                    .step_by(stride)
                    .map(|&l| mixture_log_weight(l))
                    .collect()
            }),
            flagged: sol.overflow,
        }
    });
    Ok(assemble(labels, obs, spec, paths))
}

/// Step-refinement control for the nonlinear solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    /// Order of the quasi-norm monitored at the horizon.
    pub p: f64,
    /// Accept once successive refinements differ by less than this fraction.
    pub rel_tol: f64,
    pub max_halvings: usize,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            p: 0.5,
            rel_tol: 0.005,
            max_halvings: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearEnsembles {
    pub ensembles: Ensembles,
    /// RK4 steps per grid interval that passed the refinement check.
    pub substeps: usize,
    /// `(substeps, ||X_T||_p)` for every pass.
    pub history: Vec<(usize, f64)>,
    pub converged: bool,
}

fn simulate_nonlinear_once(
    model: &NonlinearModel,
    spec: &EnsembleSpec,
    labels: &[Label],
    substeps: usize,
) -> Result<Ensembles> {
    let obs = spec.validate()?;
    let stride = spec.record_every;
    let paths = par_map(spec.workers, spec.n_paths, |i| {
        let sol = solve_nonlinear(
            model,
            &spec.grid,
            PathKey::new(spec.master_seed, i as u64),
            spec.sampling.tilt(i),
            substeps,
        );
        let rows = labels
            .iter()
            .map(|&l| {
                let full = match l {
                    Label::Zeta => &sol.zeta.values,
                    Label::Phi => &sol.phi.values,
                    _ => &sol.x.values,
                };
                (l, subsample(full, stride))
            })
            .collect();
        PathRows {
            rows,
            log_weights: spec.sampling.is_weighted().then(|| {
                sol.log_lr
                    .iter()
                    .step_by(stride)
                    .map(|&l| mixture_log_weight(l))
                    .collect()
            }),
            flagged: sol.overflow,
        }
    });
    Ok(assemble(labels, obs, spec, paths))
}

/// Simulates the nonlinear model, halving the RK4 step until the monitored
/// quasi-norm at the horizon settles. Only `X`, `Zeta` and `Phi` can be
/// recorded.
pub fn simulate_nonlinear(
    model: &NonlinearModel,
    spec: &EnsembleSpec,
    labels: &[Label],
    refinement: Refinement,
) -> Result<NonlinearEnsembles> {
    model.validate()?;
    if let Some(l) = labels
        .iter()
        .find(|l| !matches!(l, Label::X | Label::Zeta | Label::Phi))
    {
        return Err(Error::ConfigInvalid(format!(
            "label `{}` is not produced by the nonlinear solver",
            l.name()
        )));
    }
    let mut with_x: Vec<Label> = labels.to_vec();
    if !with_x.contains(&Label::X) {
        with_x.push(Label::X);
    }
    let monitor = |e: &Ensembles| -> Result<f64> {
        let x = e.get(Label::X).unwrap();
        Ok(x.column(x.n_nodes() - 1).quasi_norm(refinement.p)?.value)
    };
    let mut substeps = 1;
    let mut current = simulate_nonlinear_once(model, spec, &with_x, substeps)?;
    let mut history = vec![(substeps, monitor(&current)?)];
    let mut converged = false;
    for _ in 0..refinement.max_halvings {
        let finer = simulate_nonlinear_once(model, spec, &with_x, substeps * 2)?;
        let q = monitor(&finer)?;
        let prev = history.last().unwrap().1;
        substeps *= 2;
        history.push((substeps, q));
        current = finer;
        let change = if prev == q {
            0.0
        } else {
            ((q - prev) / prev).abs()
        };
        if change < refinement.rel_tol {
            converged = true;
            break;
        }
    }
    if !labels.contains(&Label::X) {
        current.take(Label::X);
    }
    Ok(NonlinearEnsembles {
        ensembles: current,
        substeps,
        history,
        converged,
    })
}

/// Draws of `X_inf`, realized as `H_{t_star}`.
#[derive(Debug, Clone)]
pub struct StationarySample {
    pub t_star: f64,
    pub values: Vec<f64>,
    pub master_seed: u64,
    pub flagged: usize,
    /// Order used for the truncation estimate.
    pub p: f64,
    /// `exp(gamma_p t_star)` when the critical exponent is defined.
    pub tail_factor: Option<f64>,
    /// Fit of `ln ||H_{t_star} - H_u||_p` against `u`; `None` when the
    /// increments vanish identically.
    pub increment_fit: Option<RateFit>,
    /// Extrapolated `||H_inf - H_{t_star}||_p`.
    pub truncation_bound: f64,
}

/// `n` independent draws of `H_{t_star}`, with a truncation estimate for the
/// order `p` fitted from the decay of `||H_{t_star} - H_u||_p` in `u`.
pub fn stationary_sample(
    model: &LinearModel,
    t_star: f64,
    n: usize,
    master_seed: u64,
    dt: f64,
    p: f64,
    workers: usize,
) -> Result<StationarySample> {
    model.validate()?;
    let beta_c = model.critical_exponent();
    if let Some(bc) = beta_c {
        if p >= bc {
            return Err(Error::Truncation { p, beta_c: bc });
        }
    }
    let grid = TimeGrid::with_horizon(dt, t_star)?;
    let stride = pick_stride(grid.n_steps(), 80);
    let spec = EnsembleSpec::new(grid, n, master_seed)
        .record_every(stride)
        .workers(workers);
    let mut ens = simulate_linear(model, &spec, &[Label::H])?;
    let h = ens.take(Label::H).unwrap();
    let last = h.n_nodes() - 1;
    let values: Vec<f64> = (0..n).map(|i| h.value(i, last)).collect();

    let mut pts = Vec::new();
    for k in 0..last {
        let u = h.grid.t(k);
        if u < 0.25 * t_star || u > 0.75 * t_star {
            continue;
        }
        let inc: Vec<f64> = (0..n)
            .filter(|&i| !h.flagged[i])
            .map(|i| h.value(i, last) - h.value(i, k))
            .collect();
        let e = quasi_norm_weighted(&inc, None, p)?;
        pts.push(RatePoint::from_estimate(u, &e));
    }
    let degenerate = pts.iter().all(|p| p.log_value == f64::NEG_INFINITY);
    let (increment_fit, truncation_bound) = if degenerate {
        (None, 0.0)
    } else {
        let fit = fit_rate(&pts, Some((0.25 * t_star, 0.75 * t_star)))?;
        let fit = match model.diffusion_constant() {
            Ok(d) if d > 0.0 => fit.with_prediction(crate::lp::gamma_p(model.a, d, p)?),
            _ => fit,
        };
        (Some(fit), (fit.intercept + fit.slope * t_star).exp())
    };
    let tail_factor = match model.diffusion_constant() {
        Ok(d) if d > 0.0 => Some((crate::lp::gamma_p(model.a, d, p)? * t_star).exp()),
        _ => None,
    };
    Ok(StationarySample {
        t_star,
        values,
        master_seed,
        flagged: h.flagged_count(),
        p,
        tail_factor,
        increment_fit,
        truncation_bound,
    })
}

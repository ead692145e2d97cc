use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rde::{Label, LinearModel, NonlinearModel, Sampling, TimeGrid};
use crate::tail::Condition1Mode;
use crate::weak::TestFunction;

pub const SCHEMA: &str = "rdelab.experiment/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub estimators: Vec<EstimatorRequest>,
    pub outputs: OutputConfig,
    /// Worker threads, 0 for all cores. Never changes results.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Linear(LinearModel),
    Nonlinear(NonlinearModel),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Linear(m) => m.validate(),
            ModelConfig::Nonlinear(m) => m.validate(),
        }
    }

    pub fn a(&self) -> f64 {
        match self {
            ModelConfig::Linear(m) => m.a,
            ModelConfig::Nonlinear(m) => m.a,
        }
    }

    pub fn critical_exponent(&self) -> Option<f64> {
        match self {
            ModelConfig::Linear(m) => m.critical_exponent(),
            ModelConfig::Nonlinear(m) => m.critical_exponent(),
        }
    }

    pub fn diffusion_constant(&self) -> Option<f64> {
        let spec = match self {
            ModelConfig::Linear(m) => &m.multiplicative,
            ModelConfig::Nonlinear(m) => &m.multiplicative,
        };
        crate::noise::diffusion_constant(spec)
            .ok()
            .filter(|d| *d > 0.0)
    }

    pub fn default_dt(&self) -> f64 {
        match self {
            ModelConfig::Linear(m) => m.default_dt(),
            ModelConfig::Nonlinear(m) => m.default_dt(),
        }
    }

    /// Exponential rate of `||X_t||_p`, when one is predicted: always for
    /// a homogeneous model, otherwise only above the critical exponent,
    /// where `x0 A_t` dominates a finite stationary part.
    pub fn predicted_rate(&self, p: f64) -> Option<f64> {
        let forcing = match self {
            ModelConfig::Linear(m) => &m.additive,
            ModelConfig::Nonlinear(m) => &m.envelope,
        };
        let d = self.diffusion_constant()?;
        let beta_c = self.a() / d;
        let homogeneous = matches!(forcing, crate::noise::NoiseSpec::Zero);
        if homogeneous || p > beta_c {
            crate::lp::gamma_p(self.a(), d, p).ok()
        } else {
            None
        }
    }

    pub fn linear(&self) -> Option<&LinearModel> {
        match self {
            ModelConfig::Linear(m) => Some(m),
            ModelConfig::Nonlinear(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Defaults to `0.01 min(tau_i, 1/a)`.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Keep every n-th node in recorded ensembles; defaults to about 100 nodes.
    #[serde(default)]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
    /// Processes written by `simulate`.
    #[serde(default = "default_record")]
    pub record: Vec<Label>,
}

fn default_record() -> Vec<Label> {
    vec![Label::X]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Plotdata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
    /// Also write recorded ensembles in the binary format.
    #[serde(default)]
    pub binary: bool,
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

fn default_replicates() -> usize {
    10
}

fn default_required() -> usize {
    9
}

fn default_trials() -> usize {
    1000
}

fn default_t_step() -> f64 {
    0.1
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// Stationary reference sample `H_{t_star}` for convergence checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryRequest {
    pub t_star: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorRequest {
    /// Curves of `||X_t||_p`; with a tolerance the fitted rate is checked
    /// against `gamma_p`.
    QuasiNorm {
        p: Vec<f64>,
        #[serde(default)]
        window: Option<[f64; 2]>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    MomentTransition {
        p_grid: Vec<f64>,
        #[serde(default)]
        window: Option<[f64; 2]>,
        #[serde(default)]
        n_paths: Option<usize>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    /// Hill estimate on `H_{t_star}`, passing when the estimates from `n`
    /// and `2n` draws agree in at least `required` of `replicates`
    /// independent samples (all of them by default).
    Hill {
        t_star: f64,
        n: usize,
        #[serde(default)]
        k: Option<usize>,
        #[serde(default = "default_true")]
        doubling: bool,
        #[serde(default = "default_one")]
        replicates: usize,
        #[serde(default)]
        required: Option<usize>,
    },
    GreenKubo {
        window: f64,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    DtFit {
        window: [f64; 2],
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Condition1 {
        p: Vec<f64>,
        #[serde(default)]
        t_max: Option<f64>,
        #[serde(default = "default_t_step")]
        t_step: f64,
        #[serde(default)]
        mode: Condition1Mode,
        #[serde(default)]
        budget: Option<f64>,
    },
    BEqualsH {
        t: f64,
        n: usize,
        #[serde(default = "default_replicates")]
        replicates: usize,
        #[serde(default = "default_required")]
        required: usize,
    },
    Inequalities {
        p: Vec<f64>,
        #[serde(default = "default_trials")]
        trials: usize,
    },
    Converge {
        function: TestFunction,
        #[serde(default)]
        stationary: Option<StationaryRequest>,
        #[serde(default)]
        window: Option<[f64; 2]>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
}

impl EstimatorRequest {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorRequest::QuasiNorm { .. } => "quasi_norm",
            EstimatorRequest::MomentTransition { .. } => "moment_transition",
            EstimatorRequest::Hill { .. } => "hill",
            EstimatorRequest::GreenKubo { .. } => "green_kubo",
            EstimatorRequest::DtFit { .. } => "dt_fit",
            EstimatorRequest::Condition1 { .. } => "condition1",
            EstimatorRequest::BEqualsH { .. } => "b_equals_h",
            EstimatorRequest::Inequalities { .. } => "inequalities",
            EstimatorRequest::Converge { .. } => "converge",
        }
    }
}

fn invalid(field: impl AsRef<str>, msg: impl std::fmt::Display) -> Error {
    Error::ConfigInvalid(format!("{}: {msg}", field.as_ref()))
}

fn check_orders(field: &str, ps: &[f64]) -> Result<()> {
    if ps.is_empty() {
        return Err(invalid(field, "needs at least one order"));
    }
    if let Some(p) = ps.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(invalid(
            field,
            format!("order {p} must be positive and finite"),
        ));
    }
    Ok(())
}

fn check_window(field: &str, w: Option<[f64; 2]>, t_max: f64) -> Result<()> {
    if let Some([lo, hi]) = w {
        if !(lo >= 0.0 && hi > lo && hi <= t_max * (1.0 + 1e-12)) {
            return Err(invalid(
                field,
                format!("window [{lo}, {hi}] must lie inside [0, {t_max}]"),
            ));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt.unwrap_or_else(|| self.model.default_dt())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::with_horizon(self.dt(), self.grid.t_max)
    }

    pub fn record_every(&self) -> Result<usize> {
        let g = self.time_grid()?;
        Ok(self
            .grid
            .record_every
            .unwrap_or_else(|| crate::rde::pick_stride(g.n_steps(), 100)))
    }

    /// Field-level validation of everything a run will touch.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(invalid(
                "schema",
                format!("expected `{SCHEMA}`, found `{}`", self.schema),
            ));
        }
        self.model.validate().map_err(|e| invalid("model", e))?;
        if let Some(dt) = self.grid.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid("grid.dt", "must be positive"));
            }
        }
        if !(self.grid.t_max > 0.0 && self.grid.t_max.is_finite()) {
            return Err(invalid("grid.t_max", "must be positive"));
        }
        let grid = self.time_grid().map_err(|e| invalid("grid", e))?;
        if let Some(s) = self.grid.record_every {
            grid.coarsen(s)
                .map_err(|e| invalid("grid.record_every", e))?;
        }
        if self.ensemble.n_paths == 0 {
            return Err(invalid("ensemble.n_paths", "must be at least 1"));
        }
        if let Sampling::TiltedMixture { theta } = self.ensemble.sampling {
            if !theta.is_finite() {
                return Err(invalid("ensemble.sampling.theta", "must be finite"));
            }
        }
        if self.ensemble.record.is_empty() {
            return Err(invalid("ensemble.record", "must name at least one process"));
        }
        if let ModelConfig::Nonlinear(_) = self.model {
            if let Some(l) = self
                .ensemble
                .record
                .iter()
                .find(|l| !matches!(l, Label::X | Label::Zeta | Label::Phi))
            {
                return Err(invalid(
                    "ensemble.record",
                    format!("`{}` is not available for the nonlinear model", l.name()),
                ));
            }
        }
        if self.outputs.formats.is_empty() {
            return Err(invalid("outputs.formats", "must list at least one format"));
        }
        let t_max = self.grid.t_max;
        let additive_tail = self.model.linear().and_then(|m| m.additive.tail_index());
        for (i, est) in self.estimators.iter().enumerate() {
            let f = |name: &str| format!("estimators[{i}].{name}");
            let needs_linear = || -> Result<()> {
                if self.model.linear().is_none() {
                    return Err(invalid(
                        f("estimator"),
                        format!("`{}` needs a linear model", est.name()),
                    ));
                }
                Ok(())
            };
            match est {
                EstimatorRequest::QuasiNorm {
                    p,
                    window,
                    tolerance,
                } => {
                    check_orders(&f("p"), p)?;
                    if let Some(b1) = additive_tail {
                        if let Some(bad) = p.iter().find(|&&q| q >= b1) {
                            return Err(invalid(
                                f("p"),
                                format!("order {bad} is not below the additive tail index {b1}"),
                            ));
                        }
                    }
                    check_window(&f("window"), *window, t_max)?;
                    check_tolerance(&f("tolerance"), *tolerance)?;
                    if tolerance.is_some() {
                        if let Some(bad) =
                            p.iter().find(|&&q| self.model.predicted_rate(q).is_none())
                        {
                            return Err(invalid(
                                f("tolerance"),
                                format!("no rate is predicted for order {bad} with this model"),
                            ));
                        }
                    }
                }
                EstimatorRequest::MomentTransition {
                    p_grid,
                    window,
                    n_paths,
                    tolerance,
                } => {
                    needs_linear()?;
                    check_orders(&f("p_grid"), p_grid)?;
                    if p_grid.len() < 2 {
                        return Err(invalid(f("p_grid"), "needs at least two orders"));
                    }
                    check_window(&f("window"), *window, t_max)?;
                    if *n_paths == Some(0) {
                        return Err(invalid(f("n_paths"), "must be at least 1"));
                    }
                    check_tolerance(&f("tolerance"), *tolerance)?;
                }
                EstimatorRequest::Hill {
                    t_star,
                    n,
                    k,
                    replicates,
                    required,
                    ..
                } => {
                    needs_linear()?;
                    if *replicates == 0 {
                        return Err(invalid(f("replicates"), "must be at least 1"));
                    }
                    if required.is_some_and(|r| r == 0 || r > *replicates) {
                        return Err(invalid(
                            f("required"),
                            format!("must lie in [1, {replicates}]"),
                        ));
                    }
                    if !(*t_star > 0.0) {
                        return Err(invalid(f("t_star"), "must be positive"));
                    }
                    let k = k.unwrap_or_else(|| crate::tail::default_hill_k(*n));
                    if k < 10 || 2 * k >= *n {
                        return Err(invalid(
                            f("k"),
                            format!("k = {k} must satisfy 10 <= k < n/2 with n = {n}"),
                        ));
                    }
                }
                EstimatorRequest::GreenKubo { window, tolerance } => {
                    if !(*window > 0.0 && *window <= 0.5 * t_max) {
                        return Err(invalid(
                            f("window"),
                            format!("must lie in (0, {}]", 0.5 * t_max),
                        ));
                    }
                    check_tolerance(&f("tolerance"), *tolerance)?;
                }
                EstimatorRequest::DtFit { window, tolerance } => {
                    needs_linear()?;
                    check_window(&f("window"), Some(*window), t_max)?;
                    check_tolerance(&f("tolerance"), *tolerance)?;
                }
                EstimatorRequest::Condition1 {
                    p,
                    t_max: tm,
                    t_step,
                    budget,
                    ..
                } => {
                    check_orders(&f("p"), p)?;
                    if !(*t_step > 0.0) || tm.is_some_and(|t| !(t > 0.0)) {
                        return Err(invalid(f("t_step"), "time grid must be positive"));
                    }
                    if budget.is_some_and(|b| !(b >= 1.0)) {
                        return Err(invalid(f("budget"), "must be at least 1"));
                    }
                    let spec = match &self.model {
                        ModelConfig::Linear(m) => &m.multiplicative,
                        ModelConfig::Nonlinear(m) => &m.multiplicative,
                    };
                    if spec.gaussian_terms().is_none() {
                        return Err(invalid(
                            f("estimator"),
                            "condition1 needs Gaussian multiplicative noise",
                        ));
                    }
                }
                EstimatorRequest::BEqualsH {
                    t,
                    n,
                    replicates,
                    required,
                } => {
                    needs_linear()?;
                    if !(*t > 0.0) || *n == 0 || *replicates == 0 || required > replicates {
                        return Err(invalid(
                            f("estimator"),
                            "needs t > 0, n >= 1 and required <= replicates >= 1",
                        ));
                    }
                }
                EstimatorRequest::Inequalities { p, trials } => {
                    check_orders(&f("p"), p)?;
                    if *trials == 0 {
                        return Err(invalid(f("trials"), "must be at least 1"));
                    }
                }
                EstimatorRequest::Converge {
                    function,
                    stationary,
                    window,
                    tolerance,
                } => {
                    function.validate().map_err(|e| invalid(f("function"), e))?;
                    if let Some(s) = stationary {
                        needs_linear()?;
                        if !(s.t_star > 0.0) || s.n == 0 {
                            return Err(invalid(f("stationary"), "needs t_star > 0 and n >= 1"));
                        }
                    }
                    if self.model.diffusion_constant().is_none() {
                        return Err(invalid(
                            f("estimator"),
                            "converge needs a positive diffusion constant",
                        ));
                    }
                    check_window(&f("window"), *window, t_max)?;
                    check_tolerance(&f("tolerance"), *tolerance)?;
                }
            }
        }
        Ok(())
    }
}

fn check_tolerance(field: &str, tol: Option<f64>) -> Result<()> {
    if tol.is_some_and(|t| !(t > 0.0)) {
        return Err(invalid(field, "must be positive"));
    }
    Ok(())
}

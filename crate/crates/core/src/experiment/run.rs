use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{EstimatorRequest, ExperimentConfig, ModelConfig, OutputFormat};
use super::manifest::{sha256_hex, Artifacts, RunManifest};
use crate::error::{Error, Result};
use crate::lp::{jensen_check, quasi_triangle_check};
use crate::noise::NoiseSpec;
use crate::rde::{
    simulate_linear, simulate_nonlinear, stationary_sample, EnsembleSpec, Ensembles, Label,
    LinearModel, Refinement, TimeGrid,
};
use crate::rng::{RngStream, StreamRole};
use crate::tail::{
    b_equals_h_test, condition1_diagnostic, default_hill_k, dt_fit_d, green_kubo_d, hill_estimator,
    marginal_at, moment_transition, Boundedness, ExponentReport, TransitionSettings, CI_BLOCKS,
    DEFAULT_RATIO_BUDGET,
};
use crate::weak::{convergence_diagnostic, ConvergenceMode};

pub const SUMMARY_SCHEMA: &str = "rdelab.summary/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    /// Paths only.
    Simulate,
    /// Quasi-norm curves over `(p, t)`.
    Moments,
    /// Critical exponent and diffusion constant estimates.
    Beta,
    /// Structural identities and inequalities.
    Verify,
    /// Convergence of `E f(X_t)`.
    Converge,
    /// Merge existing JSON summaries.
    Report,
    /// Everything except `report`.
    All,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Moments => "moments",
            Subcommand::Beta => "beta",
            Subcommand::Verify => "verify",
            Subcommand::Converge => "converge",
            Subcommand::Report => "report",
            Subcommand::All => "all",
        }
    }

    fn includes(self, other: Subcommand) -> bool {
        self == other || self == Subcommand::All && other != Subcommand::Report
    }

    fn runs(self, est: &EstimatorRequest) -> bool {
        let owner = match est {
            EstimatorRequest::QuasiNorm { .. } => Subcommand::Moments,
            EstimatorRequest::MomentTransition { .. }
            | EstimatorRequest::Hill { .. }
            | EstimatorRequest::GreenKubo { .. }
            | EstimatorRequest::DtFit { .. } => Subcommand::Beta,
            EstimatorRequest::Condition1 { .. }
            | EstimatorRequest::BEqualsH { .. }
            | EstimatorRequest::Inequalities { .. } => Subcommand::Verify,
            EstimatorRequest::Converge { .. } => Subcommand::Converge,
        };
        self.includes(owner)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    /// Reported without a pass criterion.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub method: String,
    pub estimate: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub analytic: Option<f64>,
    pub n_effective: usize,
    pub verdict: Verdict,
    pub note: String,
}

impl EstimatorSummary {
    fn failed(name: &str, method: &str, err: &Error) -> Self {
        Self {
            name: name.to_string(),
            method: method.to_string(),
            estimate: None,
            ci: None,
            analytic: None,
            n_effective: 0,
            verdict: Verdict::Fail,
            note: err.to_string(),
        }
    }

    fn from_exponent(name: &str, r: &ExponentReport, verdict: Verdict, note: String) -> Self {
        Self {
            name: name.to_string(),
            method: serde_json::to_value(r.method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            estimate: Some(r.estimate),
            ci: Some([r.ci_low, r.ci_high]),
            analytic: r.analytic,
            n_effective: r.n_effective,
            verdict,
            note,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub subcommand: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub results: Vec<EstimatorSummary>,
}

impl RunSummary {
    pub fn failed(&self) -> bool {
        self.results.iter().any(|r| r.verdict == Verdict::Fail)
    }
}

/// Command-line overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    /// Replaces the orders of every `quasi_norm` request.
    pub p: Option<f64>,
    pub t_max: Option<f64>,
    pub n_paths: Option<usize>,
}

impl ExperimentConfig {
    /// Applies `o` and revalidates.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.ensemble.master_seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(d) = &o.out {
            self.outputs.dir = d.clone();
        }
        if let Some(f) = o.format {
            self.outputs.formats = vec![f];
        }
        if let Some(t) = o.t_max {
            self.grid.t_max = t;
        }
        if let Some(n) = o.n_paths {
            self.ensemble.n_paths = n;
        }
        if let Some(p) = o.p {
            for e in &mut self.estimators {
                if let EstimatorRequest::QuasiNorm { p: ps, .. } = e {
                    *ps = vec![p];
                }
            }
        }
        self.validate()
    }

    /// Hash of the scientific content of the configuration.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.outputs.dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}

/// Seed for an auxiliary simulation, disjoint from the main ensemble's.
fn derived_seed(master: u64, tag: u64) -> u64 {
    master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub summary: RunSummary,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.summary.failed()
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    grid: TimeGrid,
    stride: usize,
    artifacts: Artifacts,
    flagged: BTreeMap<String, usize>,
    results: Vec<EstimatorSummary>,
    plot_files: Vec<(String, bool)>,
}

impl Ctx<'_> {
    fn wants(&self, f: OutputFormat) -> bool {
        self.cfg.outputs.formats.contains(&f)
    }

    fn spec(&self, n_paths: usize, seed: u64) -> EnsembleSpec {
        EnsembleSpec::new(self.grid, n_paths, seed)
            .record_every(self.stride)
            .workers(self.cfg.workers)
    }

    fn plotdata(
        &mut self,
        name: String,
        header: &str,
        rows: impl Iterator<Item = String>,
        log_y: bool,
    ) {
        if !self.wants(OutputFormat::Plotdata) {
            return;
        }
        let mut s = format!("# {header}\n");
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        self.artifacts.add(name.clone(), s.into_bytes());
        self.plot_files.push((name, log_y));
    }
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn tolerance_verdict(rel: Option<f64>, tol: Option<f64>) -> Verdict {
    match (rel, tol) {
        (Some(r), Some(t)) if r <= t => Verdict::Pass,
        (Some(_), Some(_)) => Verdict::Fail,
        (None, Some(_)) => Verdict::Fail,
        _ => Verdict::Info,
    }
}

/// Labels the main ensemble must record for `sub`.
fn main_labels(cfg: &ExperimentConfig, sub: Subcommand) -> Vec<Label> {
    let mut labels = Vec::new();
    if sub.includes(Subcommand::Simulate) {
        labels.extend(cfg.ensemble.record.iter().copied());
    }
    let needs_x = cfg.estimators.iter().any(|e| {
        sub.runs(e)
            && matches!(
                e,
                EstimatorRequest::QuasiNorm { .. } | EstimatorRequest::Converge { .. }
            )
    });
    if needs_x {
        labels.push(Label::X);
    }
    labels.sort();
    labels.dedup();
    labels
}

fn simulate_main(ctx: &mut Ctx, labels: &[Label]) -> Result<Ensembles> {
    let cfg = ctx.cfg;
    let spec = ctx
        .spec(cfg.ensemble.n_paths, cfg.ensemble.master_seed)
        .sampling(cfg.ensemble.sampling);
    let ens = match &cfg.model {
        ModelConfig::Linear(m) => simulate_linear(m, &spec, labels)?,
        ModelConfig::Nonlinear(m) => {
            let out = simulate_nonlinear(m, &spec, labels, Refinement::default())?;
            let history: Vec<String> = out
                .history
                .iter()
                .map(|(s, q)| format!("{s}:{q}"))
                .collect();
            ctx.results.push(EstimatorSummary {
                name: "rk4_refinement".into(),
                method: "STEP_HALVING".into(),
                estimate: Some(out.substeps as f64),
                ci: None,
                analytic: None,
                n_effective: cfg.ensemble.n_paths,
                verdict: Verdict::Info,
                note: format!(
                    "{} substeps per grid step; ||X_T||_0.5 by substeps {}",
                    if out.converged {
                        "converged at"
                    } else {
                        "not converged after"
                    },
                    history.join(" ")
                ),
            });
            out.ensembles
        }
    };
    ctx.flagged.insert("main".into(), ens.flagged);
    Ok(ens)
}

fn write_paths(ctx: &mut Ctx, ens: &Ensembles) -> Result<()> {
    for label in ctx.cfg.ensemble.record.clone() {
        let e = ens.get(label).expect("recorded label");
        if ctx.wants(OutputFormat::Csv) {
            let mut buf = Vec::new();
            e.write_csv(&mut buf)?;
            ctx.artifacts
                .add(format!("paths_{}.csv", label.name()), buf);
        }
        if ctx.cfg.outputs.binary {
            let mut buf = Vec::new();
            e.write_binary(&mut buf)?;
            ctx.artifacts
                .add(format!("paths_{}.ens", label.name()), buf);
        }
    }
    Ok(())
}

fn quasi_norm_request(
    ctx: &mut Ctx,
    i: usize,
    ens: &Ensembles,
    ps: &[f64],
    window: Option<[f64; 2]>,
    tolerance: Option<f64>,
) -> Result<()> {
    let x = ens.get(Label::X).expect("X recorded");
    let mut rows = Vec::new();
    for &p in ps {
        let curve = x.quasi_norm_curve(p)?;
        for (t, e) in &curve {
            rows.push(vec![
                t.to_string(),
                p.to_string(),
                e.value.to_string(),
                e.std_err.to_string(),
                e.n.to_string(),
                e.flagged_excluded.to_string(),
            ]);
        }
        ctx.plotdata(
            format!("quasi_norm_{i}_p{p}.dat"),
            &format!("t ||X_t||_{p} std_err"),
            curve
                .iter()
                .map(|(t, e)| format!("{t} {} {}", e.value, e.std_err)),
            true,
        );
        let analytic = ctx.cfg.model.predicted_rate(p);
        let summary = match x.fit_quasi_norm_rate(p, window.map(|[lo, hi]| (lo, hi))) {
            Ok(fit) => {
                let fit = match analytic {
                    Some(g) => fit.with_prediction(g),
                    None => fit,
                };
                let unstable = curve.iter().filter(|(_, e)| e.unstable).count();
                EstimatorSummary {
                    name: "quasi_norm".into(),
                    method: "QUASI_NORM_RATE".into(),
                    estimate: Some(fit.slope),
                    ci: Some([
                        fit.slope - 1.96 * fit.slope_std_err,
                        fit.slope + 1.96 * fit.slope_std_err,
                    ]),
                    analytic,
                    n_effective: x.n_paths - x.flagged_count(),
                    verdict: tolerance_verdict(fit.relative_error(), tolerance),
                    note: format!(
                        "p = {p}, window [{}, {}], r^2 = {:.6}, {unstable} nodes flagged unstable",
                        fit.t_lo, fit.t_hi, fit.r_squared
                    ),
                }
            }
            Err(e) => EstimatorSummary::failed("quasi_norm", "QUASI_NORM_RATE", &e),
        };
        ctx.results.push(summary);
    }
    let bytes = csv_bytes(
        &["t", "p", "value", "std_err", "n", "excluded"],
        rows.into_iter(),
    )?;
    ctx.artifacts.add(format!("quasi_norm_{i}.csv"), bytes);
    Ok(())
}

fn scan_csv(r: &ExponentReport, x_name: &str) -> Result<Vec<u8>> {
    csv_bytes(
        &[x_name, "estimate", "std_err"],
        r.scan.iter().map(|s| {
            vec![
                s.x.to_string(),
                s.estimate.to_string(),
                s.std_err.to_string(),
            ]
        }),
    )
}

fn moment_transition_request(
    ctx: &mut Ctx,
    i: usize,
    model: &LinearModel,
    p_grid: &[f64],
    window: Option<[f64; 2]>,
    n_paths: Option<usize>,
    tolerance: Option<f64>,
) -> Result<()> {
    let settings = TransitionSettings {
        dt: ctx.grid.dt(),
        window: window.map(|[lo, hi]| (lo, hi)),
        master_seed: ctx.cfg.ensemble.master_seed,
        workers: ctx.cfg.workers,
    };
    let n = n_paths.unwrap_or(ctx.cfg.ensemble.n_paths);
    match moment_transition(model, p_grid, ctx.grid.horizon(), n, settings) {
        Ok(r) => {
            let verdict = tolerance_verdict(r.relative_error(), Some(tolerance.unwrap_or(0.15)));
            let slopes: Vec<String> = r
                .scan
                .iter()
                .map(|s| format!("{}:{:.5}", s.x, s.estimate))
                .collect();
            ctx.artifacts
                .add(format!("moment_transition_{i}.csv"), scan_csv(&r, "p")?);
            ctx.plotdata(
                format!("moment_transition_{i}.dat"),
                "p slope std_err",
                r.scan
                    .iter()
                    .map(|s| format!("{} {} {}", s.x, s.estimate, s.std_err)),
                false,
            );
            ctx.results.push(EstimatorSummary::from_exponent(
                "moment_transition",
                &r,
                verdict,
                format!("slopes {}", slopes.join(" ")),
            ));
        }
        Err(e) => ctx.results.push(EstimatorSummary::failed(
            "moment_transition",
            "MOMENT_TRANSITION",
            &e,
        )),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn hill_request(
    ctx: &mut Ctx,
    i: usize,
    model: &LinearModel,
    t_star: f64,
    n: usize,
    k: Option<usize>,
    doubling: bool,
    replicates: usize,
    required: Option<usize>,
) -> Result<()> {
    let beta_c = model.critical_exponent();
    let p = beta_c.map_or(0.5, |b| (0.5 * b).min(0.5));
    let total = if doubling { 2 * n } else { n };
    let k_n = k.unwrap_or_else(|| default_hill_k(n));
    let k_2n = k.map_or_else(|| default_hill_k(2 * n), |k| 2 * k);
    let required = required.unwrap_or(replicates);
    let mut first: Option<ExponentReport> = None;
    let mut note = String::new();
    let mut consistent = 0;
    let mut rows = Vec::new();
    for r in 0..replicates {
        let seed = derived_seed(
            ctx.cfg.ensemble.master_seed,
            if r == 0 { 1 } else { 64 + r as u64 },
        );
        let attempt = stationary_sample(
            model,
            t_star,
            total,
            seed,
            ctx.grid.dt(),
            p,
            ctx.cfg.workers,
        )
        .and_then(|s| {
            let a = hill_estimator(&s.values[..n], k_n)?;
            let b = if doubling {
                Some(hill_estimator(&s.values, k_2n)?)
            } else {
                None
            };
            Ok((s, a, b))
        });
        let (sample, a, b) = match attempt {
            Ok(x) => x,
            Err(e) => {
                ctx.results
                    .push(EstimatorSummary::failed("hill", "HILL", &e));
                return Ok(());
            }
        };
        ctx.flagged.insert(format!("hill_{i}_{r}"), sample.flagged);
        let agree = b.as_ref().is_some_and(|b| a.agrees_with(b));
        consistent += agree as usize;
        rows.push(vec![
            r.to_string(),
            a.estimate.to_string(),
            a.ci_low.to_string(),
            a.ci_high.to_string(),
            opt(b.as_ref().map(|b| b.estimate)),
            opt(b.as_ref().map(|b| b.ci_low)),
            opt(b.as_ref().map(|b| b.ci_high)),
            agree.to_string(),
        ]);
        if r == 0 {
            ctx.artifacts
                .add(format!("hill_{i}.csv"), scan_csv(&a, "k")?);
            note = format!(
                "n = {n}, k = {k_n}, k-scan {}; truncation bound ||H_inf - H_t*||_{p} <= {:.3e}",
                if a.is_stable() { "stable" } else { "NONSTABLE" },
                sample.truncation_bound
            );
            if let Some(b) = &b {
                let _ = write!(
                    note,
                    "; doubled n: {:.4} [{:.4}, {:.4}]",
                    b.estimate, b.ci_low, b.ci_high
                );
            }
            first = Some(match beta_c {
                Some(bc) => a.with_analytic(bc),
                None => a,
            });
        }
    }
    let header = [
        "replicate",
        "estimate_n",
        "ci_low_n",
        "ci_high_n",
        "estimate_2n",
        "ci_low_2n",
        "ci_high_2n",
        "consistent",
    ];
    let bytes = csv_bytes(&header, rows.into_iter())?;
    ctx.artifacts.add(format!("hill_{i}_doubling.csv"), bytes);
    let verdict = if doubling {
        let _ = write!(
            note,
            "; consistent under doubling in {consistent} of {replicates} replicates, {required} required"
        );
        if consistent >= required {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    } else {
        Verdict::Info
    };
    let first = first.expect("at least one replicate");
    ctx.results.push(EstimatorSummary::from_exponent(
        "hill", &first, verdict, note,
    ));
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn d_estimator_requests(ctx: &mut Ctx, requests: &[(usize, &EstimatorRequest)]) -> Result<()> {
    let cfg = ctx.cfg;
    let multiplicative = match &cfg.model {
        ModelConfig::Linear(m) => m.multiplicative.clone(),
        ModelConfig::Nonlinear(m) => m.multiplicative.clone(),
    };
    // the same multiplicative streams as the main ensemble, untilted
    let driver = LinearModel {
        a: cfg.model.a(),
        multiplicative,
        additive: NoiseSpec::Zero,
        x0: 0.0,
    };
    let spec = ctx.spec(cfg.ensemble.n_paths, cfg.ensemble.master_seed);
    let ens = simulate_linear(&driver, &spec, &[Label::Zeta, Label::Y])?;
    let analytic = cfg.model.diffusion_constant();
    for &(_, req) in requests {
        let (name, result, tol, note) = match req {
            EstimatorRequest::GreenKubo { window, tolerance } => (
                "green_kubo",
                green_kubo_d(ens.get(Label::Zeta).unwrap(), *window),
                tolerance,
                format!("correlation window {window}, {CI_BLOCKS} path blocks"),
            ),
            EstimatorRequest::DtFit { window, tolerance } => (
                "dt_fit",
                dt_fit_d(ens.get(Label::Y).unwrap(), (window[0], window[1])),
                tolerance,
                format!(
                    "fit window [{}, {}], {CI_BLOCKS} path blocks",
                    window[0], window[1]
                ),
            ),
            _ => unreachable!("only D estimators"),
        };
        match result {
            Ok(r) => {
                let r = match analytic {
                    Some(d) => r.with_analytic(d),
                    None => r,
                };
                let verdict = tolerance_verdict(r.relative_error(), Some(tol.unwrap_or(0.1)));
                ctx.results
                    .push(EstimatorSummary::from_exponent(name, &r, verdict, note));
            }
            Err(e) => ctx.results.push(EstimatorSummary::failed(name, name, &e)),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn condition1_request(
    ctx: &mut Ctx,
    i: usize,
    ps: &[f64],
    t_max: Option<f64>,
    t_step: f64,
    mode: crate::tail::Condition1Mode,
    budget: Option<f64>,
) -> Result<()> {
    let spec = match &ctx.cfg.model {
        ModelConfig::Linear(m) => m.multiplicative.clone(),
        ModelConfig::Nonlinear(m) => m.multiplicative.clone(),
    };
    let t_max = t_max.unwrap_or(ctx.grid.horizon());
    let n_t = (t_max / t_step).round() as usize;
    let ts: Vec<f64> = (0..=n_t).map(|k| k as f64 * t_step).collect();
    let budget = budget.unwrap_or(DEFAULT_RATIO_BUDGET);
    let mut rows = Vec::new();
    for &p in ps {
        match condition1_diagnostic(&spec, p, &ts, mode, budget) {
            Ok(r) => {
                for q in &r.points {
                    rows.push(vec![
                        p.to_string(),
                        q.t.to_string(),
                        q.r.to_string(),
                        q.std_err.to_string(),
                        q.analytic.to_string(),
                    ]);
                }
                ctx.plotdata(
                    format!("condition1_{i}_p{p}.dat"),
                    &format!("t r(t) std_err analytic (p = {p})"),
                    r.points
                        .iter()
                        .map(|q| format!("{} {} {} {}", q.t, q.r, q.std_err, q.analytic)),
                    false,
                );
                ctx.results.push(EstimatorSummary {
                    name: "condition1".into(),
                    method: "CONDITION1".into(),
                    estimate: Some(r.ratio),
                    ci: None,
                    analytic: None,
                    n_effective: r.points.len(),
                    verdict: if r.verdict == Boundedness::Bounded {
                        Verdict::Pass
                    } else {
                        Verdict::Fail
                    },
                    note: format!(
                        "p = {p}, max/min ratio over [0, {t_max}] against budget {budget}"
                    ),
                });
            }
            Err(e) => ctx
                .results
                .push(EstimatorSummary::failed("condition1", "CONDITION1", &e)),
        }
    }
    let bytes = csv_bytes(&["p", "t", "r", "std_err", "analytic"], rows.into_iter())?;
    ctx.artifacts.add(format!("condition1_{i}.csv"), bytes);
    Ok(())
}

fn b_equals_h_request(
    ctx: &mut Ctx,
    i: usize,
    model: &LinearModel,
    t: f64,
    n: usize,
    replicates: usize,
    required: usize,
) -> Result<()> {
    let mut rows = Vec::new();
    let mut passes = 0;
    for r in 0..replicates as u64 {
        let b_seed = derived_seed(ctx.cfg.ensemble.master_seed, 16 + 2 * r);
        let h_seed = derived_seed(ctx.cfg.ensemble.master_seed, 17 + 2 * r);
        let run = || -> Result<_> {
            let b = marginal_at(
                model,
                Label::B,
                t,
                n,
                b_seed,
                ctx.grid.dt(),
                ctx.cfg.workers,
            )?;
            let h = marginal_at(
                model,
                Label::H,
                t,
                n,
                h_seed,
                ctx.grid.dt(),
                ctx.cfg.workers,
            )?;
            b_equals_h_test(&b, &h)
        };
        match run() {
            Ok(ks) => {
                passes += ks.pass as usize;
                rows.push(vec![
                    r.to_string(),
                    ks.statistic.to_string(),
                    ks.p_value.to_string(),
                    ks.critical_value.to_string(),
                    ks.pass.to_string(),
                ]);
            }
            Err(e) => {
                ctx.results
                    .push(EstimatorSummary::failed("b_equals_h", "KS_TWO_SAMPLE", &e));
                return Ok(());
            }
        }
    }
    let bytes = csv_bytes(
        &[
            "replicate",
            "statistic",
            "p_value",
            "critical_value",
            "pass",
        ],
        rows.into_iter(),
    )?;
    ctx.artifacts.add(format!("b_equals_h_{i}.csv"), bytes);
    ctx.results.push(EstimatorSummary {
        name: "b_equals_h".into(),
        method: "KS_TWO_SAMPLE".into(),
        estimate: Some(passes as f64),
        ci: None,
        analytic: None,
        n_effective: n,
        verdict: if passes >= required { Verdict::Pass } else { Verdict::Fail },
        note: format!("{passes} of {replicates} replicates pass at the 1% level at t = {t}; {required} required"),
    });
    Ok(())
}

/// Counts of `(trials, failures)` of the two exact inequalities on random
/// lognormal-scaled samples; the Jensen form only for `p <= 1`.
pub fn inequality_suite(ps: &[f64], trials: usize, master_seed: u64) -> Result<(usize, usize)> {
    let mut s = RngStream::new(master_seed, 0, StreamRole::Auxiliary(7));
    let (mut total, mut failures) = (0, 0);
    let lognormal = |s: &mut RngStream| (3.0 * s.normal()).exp();
    for &p in ps {
        for _ in 0..trials {
            let n = 1 + (s.next_u64() % 64) as usize;
            if p <= 1.0 {
                let u: Vec<f64> = (0..n).map(|_| lognormal(&mut s)).collect();
                let v: Vec<f64> = (0..n).map(|_| lognormal(&mut s)).collect();
                total += 1;
                failures += !jensen_check(&u, &v, p)?.pass as usize;
            }
            let f: Vec<f64> = (0..n).map(|_| s.normal() * lognormal(&mut s)).collect();
            let g: Vec<f64> = (0..n).map(|_| s.normal() * lognormal(&mut s)).collect();
            let alpha = 10.0 * s.normal();
            total += 1;
            failures += !quasi_triangle_check(&f, &g, alpha, p)?.pass as usize;
        }
    }
    Ok((total, failures))
}

fn converge_request(
    ctx: &mut Ctx,
    i: usize,
    ens: &Ensembles,
    req: &EstimatorRequest,
) -> Result<()> {
    let EstimatorRequest::Converge {
        function,
        stationary,
        window,
        tolerance,
    } = req
    else {
        unreachable!()
    };
    let cfg = ctx.cfg;
    let a = cfg.model.a();
    let d = cfg.model.diffusion_constant().expect("validated");
    let class = function.gamma_class().value;
    let stat_values = match (stationary, cfg.model.linear()) {
        (Some(s), Some(model)) => {
            let beta_c = a / d;
            let p = if class > 0.0 {
                class
            } else {
                (0.5 * beta_c).min(0.5)
            };
            let seed = derived_seed(cfg.ensemble.master_seed, 2 + i as u64);
            match stationary_sample(model, s.t_star, s.n, seed, ctx.grid.dt(), p, cfg.workers) {
                Ok(sample) => {
                    ctx.flagged
                        .insert(format!("stationary_{i}"), sample.flagged);
                    Some(sample.values)
                }
                Err(e) => {
                    ctx.results
                        .push(EstimatorSummary::failed("converge", "CONVERGENCE", &e));
                    return Ok(());
                }
            }
        }
        _ => None,
    };
    let x = ens.get(Label::X).expect("X recorded");
    let report = match convergence_diagnostic(
        x,
        stat_values.as_deref(),
        function,
        a,
        d,
        None,
        window.map(|[lo, hi]| (lo, hi)),
    ) {
        Ok(r) => r,
        Err(e) => {
            ctx.results
                .push(EstimatorSummary::failed("converge", "CONVERGENCE", &e));
            return Ok(());
        }
    };
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    ctx.artifacts.add(format!("converge_{i}.csv"), buf);
    ctx.plotdata(
        format!("converge_{i}.dat"),
        "t E_f_Xt std_err delta",
        report
            .curve
            .iter()
            .map(|q| format!("{} {} {} {}", q.t, q.e_f, q.std_err, q.delta)),
        true,
    );
    let (method, sign_ok) = match report.mode {
        ConvergenceMode::Convergence => ("CONVERGENCE", report.fitted_rate.map(|r| r < 0.0)),
        ConvergenceMode::Divergence => ("DIVERGENCE", report.fitted_rate.map(|r| r > 0.0)),
    };
    let verdict = match sign_ok {
        Some(false) => Verdict::Fail,
        Some(true) if tolerance.is_some() => tolerance_verdict(report.relative_error(), *tolerance),
        Some(true) => Verdict::Pass,
        None => Verdict::Info,
    };
    let fit = report.raw_fit;
    ctx.results.push(EstimatorSummary {
        name: "converge".into(),
        method: method.into(),
        estimate: report.fitted_rate,
        ci: fit.map(|f| {
            let s = report.fitted_rate.unwrap() / f.slope;
            let lo = (f.slope - 1.96 * f.slope_std_err) * s;
            let hi = (f.slope + 1.96 * f.slope_std_err) * s;
            [lo.min(hi), lo.max(hi)]
        }),
        analytic: report.predicted_rate,
        n_effective: x.n_paths - x.flagged_count(),
        verdict,
        note: format!(
            "gamma class {}{}, critical exponent {}, stationary E f = {}",
            report.gamma_class.value,
            if report.gamma_class.open {
                " (open)"
            } else {
                ""
            },
            report.beta_c,
            report.stationary.value
        ),
    });
    Ok(())
}

fn plot_script(files: &[(String, bool)]) -> Vec<u8> {
    let mut s = String::from("# gnuplot -p plot.gp\n");
    for (f, log_y) in files {
        let _ = writeln!(s, "set title '{f}'");
        let _ = writeln!(
            s,
            "{}",
            if *log_y {
                "set logscale y"
            } else {
                "unset logscale y"
            }
        );
        let _ = writeln!(s, "plot '{f}' using 1:2 with lines notitle");
        let _ = writeln!(s, "pause -1");
    }
    s.into_bytes()
}

fn report(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<Vec<RunSummary>> {
    let dir = &cfg.outputs.dir;
    let mut names: Vec<String> = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with("summary_") && n.ends_with(".json"))
            .collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    let mut runs = Vec::new();
    for n in &names {
        let text = std::fs::read_to_string(dir.join(n))?;
        let s: RunSummary =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{n}: {e}")))?;
        runs.push(s);
    }
    for r in &runs {
        ctx.results.extend(r.results.iter().cloned());
    }
    Ok(runs)
}

#[derive(Serialize)]
struct Report<'a> {
    schema: &'a str,
    sources: &'a [RunSummary],
    failed: bool,
}

/// Runs the estimators of `sub` and writes their artifacts into
/// `config.outputs.dir`.
///
/// Estimator errors become `FAIL` entries so one bad request does not hide
/// the others; configuration and I/O errors abort the run.
pub fn run(config: &ExperimentConfig, sub: Subcommand) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let grid = config.time_grid()?;
    let mut ctx = Ctx {
        cfg: config,
        grid,
        stride: config.record_every()?,
        artifacts: Artifacts::default(),
        flagged: BTreeMap::new(),
        results: Vec::new(),
        plot_files: Vec::new(),
    };

    if sub == Subcommand::Report {
        let runs = report(config, &mut ctx)?;
        let doc = Report {
            schema: SUMMARY_SCHEMA,
            failed: runs.iter().any(RunSummary::failed),
            sources: &runs,
        };
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        ctx.artifacts.add("report.json", bytes);
    } else {
        let labels = main_labels(config, sub);
        let main = if labels.is_empty() {
            None
        } else {
            Some(simulate_main(&mut ctx, &labels)?)
        };
        if sub.includes(Subcommand::Simulate) {
            write_paths(&mut ctx, main.as_ref().expect("simulated"))?;
        }
        let mut d_requests = Vec::new();
        for (i, est) in config.estimators.iter().enumerate() {
            if !sub.runs(est) {
                continue;
            }
            let linear = config.model.linear();
            match est {
                EstimatorRequest::QuasiNorm {
                    p,
                    window,
                    tolerance,
                } => {
                    quasi_norm_request(&mut ctx, i, main.as_ref().unwrap(), p, *window, *tolerance)?
                }
                EstimatorRequest::MomentTransition {
                    p_grid,
                    window,
                    n_paths,
                    tolerance,
                } => moment_transition_request(
                    &mut ctx,
                    i,
                    linear.unwrap(),
                    p_grid,
                    *window,
                    *n_paths,
                    *tolerance,
                )?,
                EstimatorRequest::Hill {
                    t_star,
                    n,
                    k,
                    doubling,
                    replicates,
                    required,
                } => hill_request(
                    &mut ctx,
                    i,
                    linear.unwrap(),
                    *t_star,
                    *n,
                    *k,
                    *doubling,
                    *replicates,
                    *required,
                )?,
                EstimatorRequest::GreenKubo { .. } | EstimatorRequest::DtFit { .. } => {
                    d_requests.push((i, est))
                }
                EstimatorRequest::Condition1 {
                    p,
                    t_max,
                    t_step,
                    mode,
                    budget,
                } => condition1_request(&mut ctx, i, p, *t_max, *t_step, *mode, *budget)?,
                EstimatorRequest::BEqualsH {
                    t,
                    n,
                    replicates,
                    required,
                } => b_equals_h_request(
                    &mut ctx,
                    i,
                    linear.unwrap(),
                    *t,
                    *n,
                    *replicates,
                    *required,
                )?,
                EstimatorRequest::Inequalities { p, trials } => {
                    let seed = derived_seed(config.ensemble.master_seed, 3);
                    let s = match inequality_suite(p, *trials, seed) {
                        Ok((total, failures)) => EstimatorSummary {
                            name: "inequalities".into(),
                            method: "JENSEN_AND_QUASI_TRIANGLE".into(),
                            estimate: Some(failures as f64),
                            ci: None,
                            analytic: Some(0.0),
                            n_effective: total,
                            verdict: if failures == 0 {
                                Verdict::Pass
                            } else {
                                Verdict::Fail
                            },
                            note: format!("{failures} failures in {total} randomized trials"),
                        },
                        Err(e) => EstimatorSummary::failed(
                            "inequalities",
                            "JENSEN_AND_QUASI_TRIANGLE",
                            &e,
                        ),
                    };
                    ctx.results.push(s);
                }
                EstimatorRequest::Converge { .. } => {
                    converge_request(&mut ctx, i, main.as_ref().unwrap(), est)?
                }
            }
        }
        if !d_requests.is_empty() {
            d_estimator_requests(&mut ctx, &d_requests)?;
        }
    }

    let summary = RunSummary {
        schema: SUMMARY_SCHEMA.into(),
        subcommand: sub.name().into(),
        config_hash: config.config_hash(),
        master_seed: config.ensemble.master_seed,
        results: std::mem::take(&mut ctx.results),
    };
    if sub != Subcommand::Report && ctx.wants(OutputFormat::Json) {
        let mut bytes = serde_json::to_vec_pretty(&summary)?;
        bytes.push(b'\n');
        ctx.artifacts
            .add(format!("summary_{}.json", sub.name()), bytes);
    }
    if !ctx.plot_files.is_empty() {
        let script = plot_script(&ctx.plot_files);
        ctx.artifacts.add("plot.gp", script);
    }
    let entries = ctx.artifacts.write_all(&config.outputs.dir)?;
    let count = |v: Verdict| summary.results.iter().filter(|r| r.verdict == v).count();
    let manifest = RunManifest {
        software_version: env!("CARGO_PKG_VERSION").into(),
        subcommand: sub.name().into(),
        config_hash: summary.config_hash.clone(),
        master_seed: config.ensemble.master_seed,
        workers: config.workers,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        flagged_paths: ctx.flagged,
        artifacts: entries,
        pass: count(Verdict::Pass),
        fail: count(Verdict::Fail),
        info: count(Verdict::Info),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(
        config
            .outputs
            .dir
            .join(format!("manifest_{}.json", sub.name())),
        bytes,
    )?;
    Ok(RunOutcome { manifest, summary })
}

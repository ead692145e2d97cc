//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::time::{Duration, Instant};

use rdelab::experiment::presets::{
    homogeneous_model, reference_model, reference_nonlinear, shipped_gaussian_specs,
};
use rdelab::experiment::{run, ExperimentConfig, Subcommand};
use rdelab::lp::fit_rate;
use rdelab::lp::{gamma_p, jensen_check, quasi_triangle_check, RatePoint};
use rdelab::noise::{diffusion_constant, y_variance_half, NoiseSpec};
use rdelab::rde::gaussian::{log_mgf_gaussian_fit, log_quasi_norm_propagator, sample_y_marginal};
use rdelab::rde::{
    simulate_linear, simulate_nonlinear, EnsembleSpec, Label, Refinement, Sampling, TimeGrid,
};
use rdelab::rng::{RngStream, StreamRole};
use rdelab::tail::{
    b_equals_h_test, condition1_diagnostic, dt_fit_d, green_kubo_d, marginal_at, moment_transition,
    Boundedness, Condition1Mode, TransitionSettings,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const SEED: u64 = 20_240_601;

fn c1_gaussian_mgf() -> Outcome {
    let spec = NoiseSpec::ou(1.0, 0.5);
    let mode = Condition1Mode::Paths {
        n: 100_000,
        master_seed: SEED,
        dt: 0.01,
    };
    let r = condition1_diagnostic(&spec, 0.5, &[4.0], mode, 1e3).unwrap();
    let q = r.points[0];
    let scale = (0.25 * 0.5 * 4.0f64).exp();
    let (est, se) = (q.r * scale, q.std_err * scale);
    let d4 = 0.5 * 4.0 - 0.25 * (1.0 - (-8.0f64).exp());
    let exact = (0.25 * d4).exp();
    let z = (est - exact) / se;
    outcome(
        z.abs() <= 3.0,
        format!("E exp(-0.5 Y_4) = {est:.5} ± {se:.5}, analytic {exact:.5}, z = {z:.2}"),
    )
}

fn c2_rate_law() -> Outcome {
    let model = homogeneous_model(1.0);
    let grid = TimeGrid::with_horizon(0.01, 20.0).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [0.25, 0.5, 1.0] {
        let spec = EnsembleSpec::new(grid, 50_000, SEED)
            .record_every(20)
            .sampling(Sampling::TiltedMixture { theta: p });
        let ens = simulate_linear(&model, &spec, &[Label::A]).unwrap();
        let fit = ens
            .get(Label::A)
            .unwrap()
            .fit_quasi_norm_rate(p, Some((5.0, 20.0)))
            .unwrap();
        let g = gamma_p(1.0, 0.5, p).unwrap();
        let rel = ((fit.slope - g) / g).abs();
        pass &= rel <= 0.10;
        parts.push(format!("p={p}: {:.4} vs {g:.4}", fit.slope));
    }
    // divergent side from exact draws of the Gaussian marginal of Y_t
    let spec = NoiseSpec::ou(1.0, 0.5);
    let pts: Vec<RatePoint> = (0..=30)
        .map(|k| {
            let t = 5.0 + 0.5 * k as f64;
            let ys = sample_y_marginal(&spec, t, 50_000, SEED).unwrap();
            let est = log_mgf_gaussian_fit(&ys, 3.0);
            RatePoint {
                t,
                log_value: log_quasi_norm_propagator(1.0, 3.0, t, est.value),
                log_std_err: est.std_err / 3.0,
            }
        })
        .collect();
    let fit = fit_rate(&pts, Some((5.0, 20.0))).unwrap();
    let g = gamma_p(1.0, 0.5, 3.0).unwrap();
    pass &= ((fit.slope - g) / g).abs() <= 0.10;
    parts.push(format!("p=3 (gaussian Y): {:.4} vs {g:.4}", fit.slope));
    outcome(pass, parts.join("; "))
}

fn c3_critical_exponent() -> Outcome {
    let model = reference_model(100.0);
    let mut settings = TransitionSettings::new(0.01, SEED);
    settings.window = Some((5.0, 20.0));
    let r = moment_transition(&model, &[1.5, 1.75, 2.25, 2.5], 20.0, 50_000, settings).unwrap();
    let slopes: Vec<String> = r
        .scan
        .iter()
        .map(|s| format!("{}:{:.4}", s.x, s.estimate))
        .collect();
    outcome(
        (1.7..=2.3).contains(&r.estimate),
        format!(
            "estimate {:.4} CI [{:.4}, {:.4}], analytic 2; slopes {}",
            r.estimate,
            r.ci_low,
            r.ci_high,
            slopes.join(" ")
        ),
    )
}

fn c4_d_estimators() -> Outcome {
    let model = homogeneous_model(1.0);
    let grid = TimeGrid::with_horizon(0.01, 20.0).unwrap();
    let spec = EnsembleSpec::new(grid, 10_000, SEED).record_every(5);
    let ens = simulate_linear(&model, &spec, &[Label::Zeta, Label::Y]).unwrap();
    let gk = green_kubo_d(ens.get(Label::Zeta).unwrap(), 5.0).unwrap();
    let fit = dt_fit_d(ens.get(Label::Y).unwrap(), (2.5, 20.0)).unwrap();
    let band = 0.45..=0.55;
    let pass = band.contains(&gk.estimate) && band.contains(&fit.estimate) && gk.agrees_with(&fit);
    outcome(
        pass,
        format!(
            "green-kubo {:.4} [{:.4}, {:.4}], d(t) slope {:.4} [{:.4}, {:.4}]",
            gk.estimate, gk.ci_low, gk.ci_high, fit.estimate, fit.ci_low, fit.ci_high
        ),
    )
}

fn c5_time_reversal() -> Outcome {
    let model = reference_model(1.0);
    let mut passes = 0;
    let mut stats = Vec::new();
    for rep in 0..10u64 {
        let b = marginal_at(&model, Label::B, 5.0, 20_000, SEED + 2 * rep, 0.01, 0).unwrap();
        let h = marginal_at(&model, Label::H, 5.0, 20_000, SEED + 2 * rep + 1, 0.01, 0).unwrap();
        let ks = b_equals_h_test(&b, &h).unwrap();
        passes += ks.pass as usize;
        stats.push(format!("{:.4}", ks.statistic));
    }
    outcome(
        passes >= 9,
        format!(
            "{passes}/10 replicates pass (critical 0.0163); D = {}",
            stats.join(" ")
        ),
    )
}

fn c6_inequalities() -> Outcome {
    let mut s = RngStream::new(SEED, 0, StreamRole::Auxiliary(7));
    let mut failures = 0;
    let mut trials = 0;
    for &p in &[0.3, 0.7, 1.0, 2.0] {
        for _ in 0..1000 {
            let n = 1 + (s.next_u64() % 64) as usize;
            let lognormal = |s: &mut RngStream| (3.0 * s.normal()).exp();
            if p <= 1.0 {
                let u: Vec<f64> = (0..n).map(|_| lognormal(&mut s)).collect();
                let v: Vec<f64> = (0..n).map(|_| lognormal(&mut s)).collect();
                trials += 1;
                failures += !jensen_check(&u, &v, p).unwrap().pass as usize;
            }
            let f: Vec<f64> = (0..n).map(|_| s.normal() * lognormal(&mut s)).collect();
            let g: Vec<f64> = (0..n).map(|_| s.normal() * lognormal(&mut s)).collect();
            let alpha = 10.0 * s.normal();
            trials += 1;
            failures += !quasi_triangle_check(&f, &g, alpha, p).unwrap().pass as usize;
        }
    }
    outcome(
        failures == 0,
        format!("{failures} failures in {trials} trials"),
    )
}

fn c7_condition1() -> Outcome {
    let ts: Vec<f64> = (0..=500).map(|k| k as f64 * 0.1).collect();
    let mut pass = true;
    let mut worst: f64 = 1.0;
    for (_, spec) in shipped_gaussian_specs() {
        for p in [0.25, 0.5, 1.0, 2.0] {
            let r = condition1_diagnostic(&spec, p, &ts, Condition1Mode::Exact, 1e3).unwrap();
            pass &= r.verdict == Boundedness::Bounded;
            worst = worst.max(r.ratio);
        }
    }
    let spec = NoiseSpec::ou(1.0, 0.5);
    let r = condition1_diagnostic(&spec, 1.0, &ts, Condition1Mode::Exact, 1e3).unwrap();
    let max = r
        .points
        .iter()
        .map(|q| q.r)
        .fold(f64::NEG_INFINITY, f64::max);
    let min = r.points.iter().map(|q| q.r).fold(f64::INFINITY, f64::min);
    // d(t) - D t = -0.25 (1 - e^{-2t}) from direct quadrature
    let d = diffusion_constant(&spec).unwrap();
    let env_err = r
        .points
        .iter()
        .map(|q| (q.r - (y_variance_half(&spec, q.t).unwrap() - d * q.t).exp()).abs())
        .fold(0.0, f64::max);
    pass &= (max - 1.0).abs() <= 1e-6 && (min - (-0.25f64).exp()).abs() <= 1e-6 && env_err <= 1e-6;
    outcome(
        pass,
        format!(
            "worst ratio {worst:.2}; OU p=1 range [{min:.8}, {max:.8}] vs [{:.8}, 1]",
            (-0.25f64).exp()
        ),
    )
}

fn c8_degenerate_additive() -> Outcome {
    let model = homogeneous_model(1.0);
    let grid = TimeGrid::with_horizon(0.01, 20.0).unwrap();
    let spec = EnsembleSpec::new(grid, 50_000, SEED).record_every(20);
    let ens = simulate_linear(&model, &spec, &[Label::X]).unwrap();
    let x = ens.get(Label::X).unwrap();
    let fit = x.fit_quasi_norm_rate(0.5, Some((5.0, 20.0))).unwrap();
    let last = x.column(x.n_nodes() - 1).quasi_norm(0.5).unwrap().value;
    let g = gamma_p(1.0, 0.5, 0.5).unwrap();
    let rel = ((fit.slope - g) / g).abs();
    outcome(
        rel <= 0.10 && last < 1e-2,
        format!(
            "slope {:.4} vs {g:.4} ({:.1}%), ||X_20|| = {last:.2e}",
            fit.slope,
            100.0 * rel
        ),
    )
}

fn c9_nonlinear() -> Outcome {
    let grid = TimeGrid::with_horizon(0.01, 50.0).unwrap();
    let spec = EnsembleSpec::new(grid, 10_000, SEED).record_every(50);
    let out = simulate_nonlinear(
        &reference_nonlinear(1.0),
        &spec,
        &[Label::X],
        Refinement::default(),
    )
    .unwrap();
    let a = out
        .ensembles
        .get(Label::X)
        .unwrap()
        .fit_quasi_norm_rate(0.5, Some((10.0, 50.0)))
        .unwrap();
    let pass_a = a.slope <= 2.0 * a.slope_std_err;

    let grid = TimeGrid::with_horizon(0.01, 20.0).unwrap();
    let spec = EnsembleSpec::new(grid, 10_000, SEED)
        .record_every(20)
        .sampling(Sampling::TiltedMixture { theta: 3.0 });
    let out_b = simulate_nonlinear(
        &reference_nonlinear(1e3),
        &spec,
        &[Label::X],
        Refinement::default(),
    )
    .unwrap();
    let b = out_b
        .ensembles
        .get(Label::X)
        .unwrap()
        .fit_quasi_norm_rate(3.0, Some((5.0, 20.0)))
        .unwrap();
    let pass_b = b.slope > 0.0 && b.slope > 2.0 * b.slope_std_err;
    outcome(
        pass_a && pass_b,
        format!(
            "(a) p=0.5 slope {:.5} ± {:.5} (rk4 substeps {}); (b) p=3 slope {:.4} ± {:.4}, gamma_3 = 0.5",
            a.slope, a.slope_std_err, out.substeps, b.slope, b.slope_std_err
        ),
    )
}

fn c10_reproducibility() -> Outcome {
    let path =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.json");
    let mut cfg = match ExperimentConfig::load(&path) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("{}: {e}", path.display())),
    };
    let mut reference: Option<Vec<(String, String)>> = None;
    let mut detail = String::new();
    for workers in [1, 4, 8] {
        let dir = tempfile::tempdir().unwrap();
        cfg.workers = workers;
        cfg.outputs.dir = dir.path().to_path_buf();
        let out = match run(&cfg, Subcommand::All) {
            Ok(o) => o,
            Err(e) => return outcome(false, format!("workers {workers}: {e}")),
        };
        let sums = out.manifest.checksums();
        if workers == 1 {
            detail = format!(
                "{} artifacts, {} pass / {} fail / {} info",
                sums.len(),
                out.manifest.pass,
                out.manifest.fail,
                out.manifest.info
            );
        }
        match &reference {
            None => reference = Some(sums),
            Some(r) if *r != sums => {
                return outcome(false, format!("checksums differ at workers {workers}"));
            }
            Some(_) => {}
        }
    }
    outcome(true, format!("{detail}, identical for workers 1, 4, 8"))
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (
            1,
            "gaussian MGF oracle",
            Duration::from_secs(60),
            c1_gaussian_mgf,
        ),
        (2, "rate law", Duration::from_secs(300), c2_rate_law),
        (
            3,
            "critical exponent",
            Duration::from_secs(600),
            c3_critical_exponent,
        ),
        (4, "D estimators", Duration::MAX, c4_d_estimators),
        (5, "time reversal", Duration::MAX, c5_time_reversal),
        (
            6,
            "finite-sample inequalities",
            Duration::MAX,
            c6_inequalities,
        ),
        (7, "condition-1 boundedness", Duration::MAX, c7_condition1),
        (
            8,
            "degenerate additive",
            Duration::MAX,
            c8_degenerate_additive,
        ),
        (
            9,
            "nonlinear dichotomy",
            Duration::from_secs(600),
            c9_nonlinear,
        ),
        (10, "reproducibility", Duration::MAX, c10_reproducibility),
    ];
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (n, name, limit, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let mut o = run();
        let elapsed = start.elapsed();
        if elapsed > limit {
            o.pass = false;
            o.detail
                .push_str(&format!("; exceeded {}s limit", limit.as_secs()));
        }
        failed += !o.pass as usize;
        println!(
            "criterion {n:>2} {:<28} {} ({:.1}s) {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

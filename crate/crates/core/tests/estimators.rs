use rdelab::experiment::presets::homogeneous_model;
use rdelab::noise::{diffusion_constant, NoiseSpec};
use rdelab::rde::{simulate_linear, EnsembleSpec, Label, LinearModel, TimeGrid};
use rdelab::tail::{
    b_equals_h_test, condition1_diagnostic, dt_fit_d, green_kubo_d, marginal_at, moment_transition,
    Condition1Mode, TransitionSettings, DEFAULT_RATIO_BUDGET,
};

fn driver(spec: NoiseSpec) -> LinearModel {
    LinearModel {
        a: 1.0,
        multiplicative: spec,
        additive: NoiseSpec::Zero,
        x0: 0.0,
    }
}

#[test]
fn green_kubo_on_a_two_scale_superposition() {
    let spec = NoiseSpec::superposition(&[(1.0, 1.0), (2.0, 0.25)]);
    assert!((diffusion_constant(&spec).unwrap() - 2.0).abs() < 1e-12);
    let grid = TimeGrid::with_horizon(0.01, 20.0).unwrap();
    let ens = simulate_linear(
        &driver(spec),
        &EnsembleSpec::new(grid, 5_000, 21).record_every(5),
        &[Label::Zeta, Label::Y],
    )
    .unwrap();
    let gk = green_kubo_d(ens.get(Label::Zeta).unwrap(), 6.0).unwrap();
    assert!((gk.estimate - 2.0).abs() < 0.2, "{gk:?}");
    let fit = dt_fit_d(ens.get(Label::Y).unwrap(), (4.0, 20.0)).unwrap();
    assert!((fit.estimate - 2.0).abs() < 0.2, "{fit:?}");
}

#[test]
fn condition1_sample_mode_matches_the_gaussian_mgf() {
    let spec = NoiseSpec::ou(1.0, 0.5);
    let mode = Condition1Mode::GaussianSample {
        n: 100_000,
        master_seed: 8,
    };
    let r = condition1_diagnostic(&spec, 0.5, &[0.0, 4.0], mode, DEFAULT_RATIO_BUDGET).unwrap();
    assert_eq!(r.points[0].r, 1.0);
    let q = &r.points[1];
    // d(4) = 2 - 0.25 (1 - e^-8), D = 0.5
    let d4 = 2.0 - 0.25 * (1.0 - (-8.0f64).exp());
    let analytic = (0.25 * (d4 - 0.5 * 4.0)).exp();
    assert!((q.analytic - analytic).abs() < 1e-12);
    assert!((q.r - analytic).abs() < 3.0 * q.std_err, "{q:?}");
}

#[test]
fn transition_from_the_propagator_alone() {
    let model = homogeneous_model(1.0);
    let settings = TransitionSettings {
        window: Some((5.0, 20.0)),
        ..TransitionSettings::new(0.01, 31)
    };
    let r = moment_transition(&model, &[1.5, 1.75, 2.25, 2.5], 20.0, 20_000, settings).unwrap();
    assert!((r.estimate - 2.0).abs() < 0.3, "{r:?}");
    assert_eq!(r.analytic, Some(2.0));
}

#[test]
fn reversal_identity_without_multiplicative_noise() {
    let model = LinearModel {
        a: 1.0,
        multiplicative: NoiseSpec::Zero,
        additive: NoiseSpec::ou(0.5, 0.5),
        x0: 0.0,
    };
    let b = marginal_at(&model, Label::B, 3.0, 10_000, 41, 0.01, 0).unwrap();
    let h = marginal_at(&model, Label::H, 3.0, 10_000, 42, 0.01, 0).unwrap();
    let ks = b_equals_h_test(&b, &h).unwrap();
    assert!(ks.pass, "{ks:?}");
}

#[test]
fn reversal_identity_degenerate_forcing() {
    let model = driver(NoiseSpec::ou(1.0, 0.5));
    let b = marginal_at(&model, Label::B, 2.0, 500, 1, 0.01, 0).unwrap();
    let h = marginal_at(&model, Label::H, 2.0, 500, 2, 0.01, 0).unwrap();
    assert!(b.values.iter().chain(&h.values).all(|&v| v == 0.0));
    let ks = b_equals_h_test(&b, &h).unwrap();
    assert_eq!(ks.statistic, 0.0);
    assert!(ks.pass);
}

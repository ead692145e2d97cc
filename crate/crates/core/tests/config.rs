use std::path::{Path, PathBuf};

use rdelab::experiment::{EstimatorRequest, ExperimentConfig, Overrides};
use rdelab::Error;

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn message(r: rdelab::Result<ExperimentConfig>) -> String {
    match r {
        Err(Error::ConfigInvalid(m)) => m,
        other => panic!("expected CONFIG_INVALID, got {other:?}"),
    }
}

#[test]
fn shipped_configs_round_trip() {
    for name in ["acceptance.json", "default.json"] {
        let cfg = ExperimentConfig::load(&shipped(name)).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again, "{name}");
        assert_eq!(cfg.config_hash(), again.config_hash());
    }
}

#[test]
fn hash_ignores_workers_and_directory() {
    let cfg = ExperimentConfig::load(&shipped("default.json")).unwrap();
    let mut moved = cfg.clone();
    moved.workers = 8;
    moved.outputs.dir = "elsewhere".into();
    assert_eq!(cfg.config_hash(), moved.config_hash());
    moved.ensemble.master_seed += 1;
    assert_ne!(cfg.config_hash(), moved.config_hash());
}

fn edit(f: impl FnOnce(&mut serde_json::Value)) -> rdelab::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(shipped("default.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    f(&mut v);
    ExperimentConfig::from_json(&v.to_string())
}

#[test]
fn errors_name_the_field() {
    assert!(message(edit(|v| v["schema"] = "rdelab.experiment/0".into())).contains("schema"));
    assert!(message(edit(|v| v["ensemble"]["n_paths"] = 0.into())).contains("ensemble.n_paths"));
    assert!(message(edit(|v| v["grid"]["t_max"] = (-1.0).into())).contains("grid.t_max"));
    assert!(message(edit(|v| v["model"]["linear"]["a"] = 0.0.into())).contains("model"));
    let m = message(edit(|v| v["estimators"][1]["window"] = 9.0.into()));
    assert!(m.contains("estimators[1].window"), "{m}");
    let m = message(edit(|v| v["estimators"][0]["tolerance"] = 0.1.into()));
    assert!(m.contains("estimators[0].tolerance"), "{m}");
}

#[test]
fn unknown_fields_fail_closed() {
    let m = message(edit(|v| v["grid"]["dT"] = 0.1.into()));
    assert!(m.contains("dT"), "{m}");
    let m = message(edit(|v| v["estimators"][0]["orders"] = 1.into()));
    assert!(m.contains("orders"), "{m}");
}

#[test]
fn multiplicative_noise_must_be_gaussian() {
    let m = message(edit(
        |v| v["model"]["linear"]["multiplicative"] = serde_json::json!({ "kind": "pareto_transformed_ou", "tau_c": 0.5, "beta_1": 3.0, "x_m": 1.0 }),
    ));
    assert!(m.contains("model"), "{m}");
}

#[test]
fn overrides_are_revalidated() {
    let mut cfg = ExperimentConfig::load(&shipped("default.json")).unwrap();
    let o = Overrides {
        seed: Some(5),
        p: Some(0.75),
        n_paths: Some(10),
        ..Overrides::default()
    };
    cfg.apply(&o).unwrap();
    assert_eq!(cfg.ensemble.master_seed, 5);
    assert_eq!(cfg.ensemble.n_paths, 10);
    assert!(matches!(&cfg.estimators[0], EstimatorRequest::QuasiNorm { p, .. } if p == &[0.75]));
    let bad = Overrides {
        n_paths: Some(0),
        ..Overrides::default()
    };
    assert!(matches!(cfg.apply(&bad), Err(Error::ConfigInvalid(_))));
}

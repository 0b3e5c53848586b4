//! Library-level end-to-end checks of the experiment pipeline: determinism,
//! the unbiased control, and failure reporting.

use std::path::Path;

use dcsr::pipeline::{run_dcsr, ExperimentConfig};
use dcsr::score::{NetArch, TrainConfig};
use dcsr::Error;

fn tiny_config(bias: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 17;
    cfg.bias = bias.to_string();
    cfg.data.n_train = 8;
    cfg.data.n_test = 4;
    cfg.data.resolutions = vec![16, 32];
    cfg.train = TrainConfig {
        batch_size: 4,
        max_iter: 10,
        ..TrainConfig::default()
    };
    cfg.arch = NetArch {
        embed_dim: 8,
        hidden: vec![16],
        embed_scale: 30.0,
    };
    cfg.search.n_t1 = 2;
    cfg.search.n_t2 = 2;
    cfg.sampling.em_steps = 5;
    cfg.metrics = vec!["tvd".into(), "rmse".into()];
    cfg
}

#[test]
fn repeated_runs_reproduce_every_metric_bit_for_bit() {
    let cfg = tiny_config("white");
    let tmp = tempfile::tempdir().unwrap();
    let a = run_dcsr(&cfg, &tmp.path().join("a")).unwrap();
    let b = run_dcsr(&cfg, &tmp.path().join("b")).unwrap();
    assert_eq!(a.results.keys().collect::<Vec<_>>(), b.results.keys().collect::<Vec<_>>());
    for (block, values) in &a.results {
        for (metric, va) in values {
            let vb = b.results[block][metric];
            assert_eq!(
                va.to_bits(),
                vb.to_bits(),
                "{block}/{metric} differs between identical runs"
            );
        }
    }
    assert_eq!(a.search.t1_star.to_bits(), b.search.t1_star.to_bits());
    assert_eq!(a.search.t2_star.to_bits(), b.search.t2_star.to_bits());
}

#[test]
fn unbiased_inputs_survive_the_correction_stage() {
    // With lf == hf the searched correction must stay close to the identity,
    // so the full path should score within 10% of the super-resolution-only
    // path (which here shares the same cascade on identical inputs).
    let cfg = tiny_config("none");
    let tmp = tempfile::tempdir().unwrap();
    let report = run_dcsr(&cfg, tmp.path()).unwrap();
    let fine = *cfg.data.resolutions.last().unwrap();
    let dcsr = report.results[&format!("dcsr@{fine}")]["rmse"];
    let sr_only = report.results[&format!("lf_sr@{fine}")]["rmse"];
    assert!(
        dcsr <= sr_only * 1.10 + 1e-12,
        "end-to-end rmse {dcsr} vs sr-only {sr_only}"
    );
}

#[test]
fn stage_failures_leave_a_partial_report_naming_the_stage() {
    let mut cfg = tiny_config("white");
    cfg.models.train = false; // no checkpoints configured -> train stage fails
    let tmp = tempfile::tempdir().unwrap();
    let err = run_dcsr(&cfg, tmp.path()).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(stage, "train"),
        other => panic!("expected a stage error, got {other}"),
    }
    let partial = tmp.path().join("report_partial.json");
    assert!(partial.exists(), "partial report should be written");
    let text = std::fs::read_to_string(&partial).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["failed_stage"], "train");
    assert!(json["error"].as_str().unwrap().contains("checkpoint"));
    assert!(!Path::new(&tmp.path().join("report.json")).exists());
}

#[test]
fn loaded_checkpoints_match_the_training_run() {
    // Train once, then rerun with training disabled and the saved
    // checkpoints; both runs must agree exactly.
    let cfg = tiny_config("white");
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("trained");
    let trained = run_dcsr(&cfg, &train_dir).unwrap();

    let mut reload = cfg.clone();
    reload.models.train = false;
    reload.models.correction = Some(train_dir.join("correction_model.ckpt"));
    reload.models.stages = vec![train_dir.join("sr_stage_0.ckpt")];
    let reloaded = run_dcsr(&reload, &tmp.path().join("reloaded")).unwrap();
    for (block, values) in &trained.results {
        for (metric, va) in values {
            let vb = reloaded.results[block][metric];
            assert_eq!(va.to_bits(), vb.to_bits(), "{block}/{metric} drifted");
        }
    }
}

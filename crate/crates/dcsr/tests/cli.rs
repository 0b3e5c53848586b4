//! End-to-end exercises of the command-line interface: every subcommand in
//! the order a user would run them, plus the documented exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dcsr")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to launch dcsr")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(
        &path,
        r#"
seed = 11
bias = "white"
metrics = ["tvd", "rmse"]

[data]
n_train = 8
n_test = 4
resolutions = [16, 32]

[train]
max_iter = 5
batch_size = 4

[arch]
embed_dim = 8
hidden = [16]
embed_scale = 30.0

[search]
n_t1 = 2
n_t2 = 2

[sampling]
em_steps = 5
"#,
    )
    .unwrap();
    path
}

#[test]
fn subcommands_chain_into_a_full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let path = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();

    let data_dir = path("data");
    assert_ok(
        &run(&["datagen", "--config", cfg, "--out", &data_dir]),
        "datagen",
    );
    for sub in ["hf_train", "hf_test", "lf_white", "lf_godunov"] {
        assert!(
            Path::new(&data_dir).join(sub).join("manifest.json").exists(),
            "datagen should write {sub}"
        );
    }

    let uncond = path("uncond.ckpt");
    assert_ok(
        &run(&[
            "train", "--config", cfg, "--kind", "uncond", "--out", &uncond,
        ]),
        "train uncond",
    );
    let stage0 = path("stage0.ckpt");
    assert_ok(
        &run(&[
            "train", "--config", cfg, "--kind", "cond", "--level", "0", "--out", &stage0,
        ]),
        "train cond",
    );

    for mode in ["ipd", "bpd"] {
        let search_dir = path(&format!("search_{mode}"));
        assert_ok(
            &run(&[
                "search", "--config", cfg, "--model", &uncond, "--mode", mode, "--out",
                &search_dir,
            ]),
            "search",
        );
        assert!(Path::new(&search_dir).join("search.json").exists());
        assert!(Path::new(&search_dir).join("search_grid.csv").exists());
    }

    let corrected = path("corrected");
    assert_ok(
        &run(&[
            "correct", "--config", cfg, "--model", &uncond, "--t1", "0.05", "--t2", "0.1",
            "--out", &corrected,
        ]),
        "correct",
    );

    let upsampled = path("upsampled");
    assert_ok(
        &run(&[
            "superres", "--config", cfg, "--model", &stage0, "--data", &corrected, "--out",
            &upsampled,
        ]),
        "superres",
    );

    let reference = Path::new(&data_dir).join("hf_test");
    let out = run(&[
        "evaluate",
        "--pred",
        &upsampled,
        "--reference",
        reference.to_str().unwrap(),
        "--metrics",
        "tvd,rmse",
    ]);
    assert_ok(&out, "evaluate");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("tvd"), "evaluate output: {stdout}");
    assert!(stdout.contains("rmse"), "evaluate output: {stdout}");
}

#[test]
fn usage_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let out_dir = tmp.path().join("out");
    let out_dir = out_dir.to_str().unwrap();

    let bad_kind = run(&[
        "train", "--config", cfg, "--kind", "bogus", "--out", out_dir,
    ]);
    assert_eq!(bad_kind.status.code(), Some(2));

    let missing_cfg = run(&[
        "pipeline",
        "--config",
        tmp.path().join("nope.toml").to_str().unwrap(),
        "--out",
        out_dir,
    ]);
    assert_eq!(missing_cfg.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_error_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("experiment.toml");
    std::fs::write(
        &cfg_path,
        r#"
seed = 11
bias = "white"

[data]
n_train = 8
n_test = 4
resolutions = [16, 32]

[models]
train = false
correction = "/definitely/not/here.ckpt"
stages = ["/also/not/here.ckpt"]
"#,
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "pipeline",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("/definitely/not/here.ckpt"),
        "error should name the missing checkpoint: {stderr}"
    );
}

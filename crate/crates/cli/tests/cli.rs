use std::path::Path;
use std::process::{Command, Output};

fn blockwm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockwm"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen(cwd: &Path, side: &str, out: &str, n: &str, seed: &str) -> Output {
    blockwm(
        &[
            "gen-data", "--mode", "rc-sticky", "--objects", "3", "--grid", "5", "--trajectories", n, "--length", "4",
            "--image-size", "16", "--side", side, "--seed", seed, "--out", out,
        ],
        cwd,
    )
}

#[test]
fn gen_data_and_split_validation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gen(d, "train", "tr", "60", "7"));
    ok(&gen(d, "eval", "ev", "20", "7"));
    assert!(d.join("tr/manifest.json").is_file());
    assert!(d.join("tr/gen-data.run.json").is_file());
    assert!(ok(&blockwm(&["validate-split", "--train", "tr", "--eval", "ev"], d)).starts_with("PASS"));

    // A train side from another split seed shares compounds with this eval side.
    ok(&gen(d, "train", "other", "60", "8"));
    let bad = blockwm(&["validate-split", "--train", "other", "--eval", "ev"], d);
    assert_eq!(bad.status.code(), Some(1));
    let text = String::from_utf8_lossy(&bad.stdout);
    assert!(text.starts_with("FAIL"), "{text}");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(blockwm(&["gen-data", "--bogus"], d).status.code(), Some(2));
    assert_eq!(blockwm(&["no-such-command"], d).status.code(), Some(2));
    assert_eq!(blockwm(&["gen-data", "--mode", "diagonal", "--out", "x"], d).status.code(), Some(2));
    std::fs::write(d.join("c.json"), r#"{"lambda": 2.0}"#).unwrap();
    let bad = blockwm(&["train-ae", "--config", "c.json", "--train", "tr"], d);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!d.join("runs").exists(), "nothing written before validation");
    assert_eq!(blockwm(&["train-ae", "--out", "a"], d).status.code(), Some(2));
}

#[test]
fn end_to_end_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gen(d, "train", "tr", "6", "3"));
    ok(&gen(d, "eval", "ev", "4", "3"));
    let cfg = serde_json::json!({
        "epochs": 1, "ae_epochs": 1, "batch_size": 4, "seeds": [0, 1],
        "adam": {"lr": 0.002}, "samples_per_epoch": 8, "ae_samples_per_epoch": 8,
        "train_data": "tr", "eval_data": "ev"
    });
    std::fs::write(d.join("c.json"), cfg.to_string()).unwrap();

    ok(&blockwm(&["train-wm", "--variant", "cosmos", "--config", "c.json"], d));
    let run = d.join("runs/cosmos");
    for f in ["wm_cosmos_seed0.ckpt", "wm_cosmos_seed1.ckpt", "ae_seed0.ckpt", "wm_log_seed1.csv", "train-wm.run.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let stanza: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("train-wm.run.json")).unwrap()).unwrap();
    assert_eq!(stanza["seeds"], serde_json::json!([0, 1]));
    assert_eq!(stanza["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    ok(&blockwm(&["eval"], d));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("metric,value,variant,seed,dataset_hash"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    for seed in ["0", "1"] {
        let names: Vec<&str> = rows.iter().filter(|r| r[3] == seed).map(|r| r[0]).collect();
        assert_eq!(names, ["mse", "ae_mse", "mrr", "eq_mrr"]);
    }

    // An autoencoder trained separately can seed another variant.
    ok(&blockwm(&["train-ae", "--config", "c.json", "--seed", "0", "--out", "ae"], d));
    ok(&blockwm(
        &["train-wm", "--variant", "aligned-nps", "--config", "c.json", "--seed", "0", "--ae", "ae"],
        d,
    ));
    assert!(d.join("runs/aligned-nps/wm_aligned-nps_seed0.ckpt").is_file());
    let missing = blockwm(&["train-wm", "--variant", "symbols-only", "--config", "c.json", "--seed", "5", "--ae", "ae"], d);
    assert_eq!(missing.status.code(), Some(2));

    let plan = ok(&blockwm(
        &["plan", "--checkpoint", "runs/cosmos/wm_cosmos_seed0.ckpt", "--data", "ev", "--episodes", "2", "--depth", "3", "--out", "figs/depth_cosmos.csv"],
        d,
    ));
    assert!(plan.contains("depth 3"));
    ok(&blockwm(&["plan", "--oracle", "--data", "ev", "--depth", "3", "--out", "figs/depth_oracle.csv"], d));
    let oracle = std::fs::read_to_string(d.join("figs/depth_oracle.csv")).unwrap();
    assert_eq!(oracle.lines().count(), 5);
    assert!(oracle.lines().skip(1).all(|l| l.contains(",oracle,0")));

    ok(&blockwm(&["export-figures-data", "--inputs", "figs", "runs/cosmos/metrics.csv", "--out", "export"], d));
    let depth = std::fs::read_to_string(d.join("export/depth_curves.csv")).unwrap();
    assert_eq!(depth.lines().count(), 1 + 2 * 4);
    let m = std::fs::read_to_string(d.join("export/metrics.csv")).unwrap();
    assert_eq!(m.lines().count(), 9);
}

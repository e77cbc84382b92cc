use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn uad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uad"))
        .args(args)
        .env("UAD_THREADS", "1")
        .output()
        .expect("run uad")
}

fn micro_config(root: &Path, out: &str) -> serde_json::Value {
    json!({
        "paths": {
            "data_dir": root.join("data"),
            "output_dir": root.join(out),
        },
        "patches_per_subject": 200,
        "sae": { "epochs": 2, "batch_size": 100 },
        "ocsvm": { "n_per_model": 100 },
        "mmst": { "k": 2, "warmup": 100, "burn_in": 50, "refresh_period": 100, "heldout": 50, "diag_every": 100 },
        "folds": { "n_folds": 2 },
        "phantom": {
            "n_normal": 3,
            "n_anomalous": 3,
            "radius": 3.0,
            "phantom": { "dims": [32, 32, 12] }
        },
        "seed": 5
    })
}

fn write_config(root: &Path, name: &str, cfg: &serde_json::Value) -> String {
    let path = root.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn micro_run_all_is_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let a = write_config(root, "a.json", &micro_config(root, "runs_a"));
    let b = write_config(root, "b.json", &micro_config(root, "runs_b"));

    let out = uad(&["--config", &a, "phantom-gen"]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("seed: 5"));
    assert!(stdout.contains("\"patches_per_subject\":200"));
    assert!(root.join("data/metadata.csv").exists());
    assert!(root.join("data/atlas.uadv").exists());

    ok(&uad(&["--config", &a, "-q", "run-all"]));
    ok(&uad(&["--config", &b, "-q", "run-all"]));
    let ra = std::fs::read(root.join("runs_a/seed-5/results.csv")).unwrap();
    let rb = std::fs::read(root.join("runs_b/seed-5/results.csv")).unwrap();
    assert_eq!(ra, rb, "same seed must give byte-identical results");

    let text = String::from_utf8(ra).unwrap();
    let rows = uad_core::eval::parse_results_csv(&text).unwrap();
    let names = std::fs::read_to_string(root.join("data/atlas_names.tsv")).unwrap();
    let n_regions = 1 + uad_core::volume::parse_names_tsv(&names).unwrap().len();
    for method in ["recon", "ocsvm", "mmst"] {
        for fold in 0..2 {
            let n = rows.iter().filter(|r| r.method == method && r.fold == fold).count();
            assert!(n >= 1 && n <= n_regions, "{method} fold {fold}: {n} rows");
            assert!(rows
                .iter()
                .any(|r| r.method == method && r.fold == fold && r.region == "whole_brain"));
        }
    }
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.gmean)));
}

#[test]
fn stages_can_be_rerun_in_isolation() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_config(root, "c.json", &micro_config(root, "runs"));
    ok(&uad(&["--config", &cfg, "-q", "phantom-gen"]));
    ok(&uad(&["--config", &cfg, "-q", "run-all", "--fold", "0"]));
    let fold = root.join("runs/seed-5/fold-0");
    let before = std::fs::read(fold.join("thresholds/ocsvm.json")).unwrap();
    let map = std::fs::read(fold.join("maps/mmst/ctl000.uadv")).unwrap();
    ok(&uad(&["--config", &cfg, "-q", "--fold", "0", "threshold", "ocsvm"]));
    ok(&uad(&["--config", &cfg, "-q", "--fold", "0", "score", "mmst"]));
    assert_eq!(std::fs::read(fold.join("thresholds/ocsvm.json")).unwrap(), before);
    assert_eq!(std::fs::read(fold.join("maps/mmst/ctl000.uadv")).unwrap(), map);
}

#[test]
fn invalid_nu_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &json!({ "ocsvm": { "nu": 1.5 } }));
    let out = uad(&["--config", &cfg, "folds"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ocsvm.nu"), "{stderr}");
}

#[test]
fn missing_inputs_name_stage_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_config(root, "c.json", &micro_config(root, "runs"));
    let out = uad(&["--config", &cfg, "folds"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("metadata.csv"), "{stderr}");
    assert!(stderr.contains("stage `folds`"), "{stderr}");
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protogcd::dataset::load_dataset;
use protogcd::evaluation::{evaluate, EvalSubset};
use protogcd::trainer::initial_params;
use protogcd::TrainConfig;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_protogcd"));
    c.env_remove("PROTOGCD_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn protogcd")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "protogcd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small problem: 6 classes (3 old) of 40 samples in 8 dimensions; `extra`
/// overrides or adds `gen` flags.
fn small_gen(out: &Path, seed: &str, extra: &[&str]) -> PathBuf {
    let mut flags = vec![
        ("--classes", "6"),
        ("--old", "3"),
        ("--per-class", "40"),
        ("--dim", "8"),
        ("--kappa", "40"),
    ];
    for pair in extra.chunks(2) {
        match flags.iter_mut().find(|(k, _)| *k == pair[0]) {
            Some(slot) => slot.1 = pair[1],
            None => flags.push((pair[0], pair[1])),
        }
    }
    let mut args = vec!["--out", s(out), "--seed", seed, "gen"];
    args.extend(flags.iter().flat_map(|(k, v)| [*k, *v]));
    ok(&args);
    out.join("dataset.json")
}

fn output_checksums(manifest: &Value) -> Vec<(String, String)> {
    manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            let name = Path::new(a["path"].as_str().unwrap())
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned();
            (name, a["sha256"].as_str().unwrap().to_owned())
        })
        .collect()
}

#[test]
fn gen_example_split() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&[
        "--out",
        s(dir.path()),
        "--seed",
        "1",
        "gen",
        "--classes",
        "10",
        "--old",
        "5",
        "--per-class",
        "200",
        "--dim",
        "16",
        "--kappa",
        "50",
    ]);
    assert!(stdout.contains("500 labeled, 1500 unlabeled"), "{stdout}");
    let ds = load_dataset::<f64>(&dir.path().join("dataset.json")).unwrap();
    assert_eq!(
        (ds.labeled_count(), ds.unlabeled_count(), ds.dim()),
        (500, 1500, 16)
    );
    let manifest = json(&dir.path().join("manifest-gen.json"));
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config"]["old_classes"], 5);
    assert_eq!(output_checksums(&manifest).len(), 2);
}

#[test]
fn gen_without_old_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&["--out", s(dir.path()), "gen", "--classes", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--old"));
    assert!(!dir.path().join("dataset.json").exists());
}

#[test]
fn gen_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    small_gen(a.path(), "9", &["--holdout", "2", "--ood-samples", "50"]);
    small_gen(b.path(), "9", &["--holdout", "2", "--ood-samples", "50"]);
    let ma = output_checksums(&json(&a.path().join("manifest-gen.json")));
    let mb = output_checksums(&json(&b.path().join("manifest-gen.json")));
    assert_eq!(ma.len(), 4);
    assert_eq!(ma, mb);

    let c = TempDir::new().unwrap();
    small_gen(c.path(), "10", &[]);
    let mc = output_checksums(&json(&c.path().join("manifest-gen.json")));
    assert_ne!(ma[0].1, mc[0].1);
}

#[test]
fn train_writes_report_history_and_checkpoint() {
    let dir = TempDir::new().unwrap();
    let data = small_gen(dir.path(), "2", &[]);
    let stdout = ok(&[
        "--out",
        s(dir.path()),
        "--seed",
        "4",
        "train",
        "--data",
        s(&data),
        "--epochs",
        "5",
    ]);
    assert!(stdout.contains("acc_all"));
    let report = json(&dir.path().join("report.json"));
    for key in [
        "acc_all",
        "acc_old",
        "acc_new",
        "compactness",
        "separation",
        "n_eval",
        "final_loss",
    ] {
        assert!(report[key].is_number(), "missing {key}");
    }
    assert_eq!(report["epochs"], 5);
    assert!(report["inductive"].is_null());
    let history = fs::read_to_string(dir.path().join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 5);
    let first: Value = serde_json::from_str(history.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 0);
    assert!(first["losses"]["total"].is_number());

    let manifest = json(&dir.path().join("manifest-train.json"));
    assert_eq!(manifest["config"]["epochs"], 5);
    assert_eq!(manifest["config"]["seed"], 4);
    let outputs: Vec<String> = output_checksums(&manifest)
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    for name in ["history.jsonl", "model.ckpt", "report.json"] {
        assert!(outputs.iter().any(|o| o == name), "{outputs:?}");
    }
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn zero_epochs_reports_the_initialization() {
    let dir = TempDir::new().unwrap();
    let data = small_gen(dir.path(), "3", &[]);
    ok(&[
        "--out",
        s(dir.path()),
        "--seed",
        "8",
        "train",
        "--data",
        s(&data),
        "--epochs",
        "0",
    ]);
    let report = json(&dir.path().join("report.json"));

    let ds = load_dataset::<f64>(&data).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        seed: 8,
        ..TrainConfig::default()
    };
    let expected = evaluate(
        &initial_params(&ds, &cfg).unwrap(),
        &ds,
        EvalSubset::Unlabeled,
    )
    .unwrap();
    assert_eq!(report["acc_all"].as_f64().unwrap(), expected.acc_all);
    assert_eq!(
        report["compactness"].as_f64().unwrap(),
        expected.compactness
    );
    assert_eq!(report["separation"].as_f64().unwrap(), expected.separation);
    assert_eq!(report["epochs"], 0);
    assert!(report["final_loss"].is_null());
}

#[test]
fn eval_split_adds_inductive_report_and_eval_agrees() {
    let dir = TempDir::new().unwrap();
    let held = TempDir::new().unwrap();
    let data = small_gen(dir.path(), "5", &[]);
    let held_out = small_gen(held.path(), "6", &["--per-class", "15"]);
    ok(&[
        "--out",
        s(dir.path()),
        "train",
        "--data",
        s(&data),
        "--epochs",
        "3",
        "--eval-split",
        s(&held_out),
    ]);
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["inductive"]["n_eval"], 90);
    assert!(report["inductive"]["acc_all"].is_number());

    let ckpt = dir.path().join("model.ckpt");
    ok(&[
        "--out",
        s(dir.path()),
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
    ]);
    let eval = json(&dir.path().join("eval.json"));
    for key in [
        "acc_all",
        "acc_old",
        "acc_new",
        "compactness",
        "separation",
        "n_eval",
    ] {
        assert_eq!(eval[key], report[key], "{key}");
    }
}

#[test]
fn train_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = small_gen(dir.path(), "7", &[]);
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        ok(&[
            "--out",
            s(out.path()),
            "--threads",
            threads,
            "train",
            "--data",
            s(&data),
            "--epochs",
            "4",
        ]);
    }
    let ma = output_checksums(&json(&a.path().join("manifest-train.json")));
    let mb = output_checksums(&json(&b.path().join("manifest-train.json")));
    assert_eq!(ma, mb);
}

#[test]
fn estimate_k_with_sweep() {
    let dir = TempDir::new().unwrap();
    let data = small_gen(dir.path(), "11", &[]);
    let stdout = ok(&[
        "--out",
        s(dir.path()),
        "estimate-k",
        "--data",
        s(&data),
        "--k-max",
        "4",
        "--sweep",
    ]);
    assert!(stdout.contains("estimated K_new: "), "{stdout}");
    assert!(stdout.contains("sweep argmax K_new: "), "{stdout}");

    let report = json(&dir.path().join("estimate.json"));
    assert_eq!(report["probe_epochs"], 3);
    assert_eq!(report["k_old"], 3);
    let scores = report["sweep"]["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 5);
    for sc in scores {
        let p = sc["proto_score"].as_f64().unwrap();
        let prod = sc["acc_score"].as_f64().unwrap() * sc["centr_score"].as_f64().unwrap();
        assert!((p - prod).abs() < 1e-12);
    }
    // Probes are deterministic per candidate, so the search saw the sweep's scores.
    for step in report["estimate"]["steps"].as_array().unwrap() {
        for key in ["c1", "c2"] {
            let c = step[key]["candidate"].as_u64().unwrap() as usize;
            assert_eq!(step[key], scores[c]);
        }
    }
    let steps = report["estimate"]["steps"].as_array().unwrap().len();
    assert!(steps <= 3);
}

#[test]
fn ood_reports_and_errors() {
    let dir = TempDir::new().unwrap();
    let data = small_gen(
        dir.path(),
        "12",
        &["--holdout", "2", "--ood-samples", "200"],
    );
    ok(&[
        "--out",
        s(dir.path()),
        "train",
        "--data",
        s(&data),
        "--epochs",
        "10",
    ]);
    let ckpt = dir.path().join("model.ckpt");
    let id = dir.path().join("dataset_id.pgcd");
    let ood = dir.path().join("dataset_ood.pgcd");

    let stdout = ok(&[
        "--out",
        s(dir.path()),
        "ood",
        "--checkpoint",
        s(&ckpt),
        "--id",
        s(&id),
        "--ood",
        s(&ood),
    ]);
    assert_eq!(stdout.lines().count(), 3);
    let reports = json(&dir.path().join("ood.json"));
    let names: Vec<&str> = reports
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["score_name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["msp", "mls", "energy"]);

    ok(&[
        "--out",
        s(dir.path()),
        "ood",
        "--checkpoint",
        s(&ckpt),
        "--id",
        s(&data),
        "--ood",
        s(&ood),
        "--score",
        "msp",
    ]);
    let reports = json(&dir.path().join("ood.json"));
    assert_eq!(reports.as_array().unwrap().len(), 1);
    let r = &reports[0];
    assert!(r["auroc"].as_f64().unwrap() > 0.5);
    assert_eq!(r["n_ood"], 200);

    let out = run(&[
        "--out",
        s(dir.path()),
        "ood",
        "--checkpoint",
        s(&ckpt),
        "--id",
        s(&id),
        "--ood",
        s(&ood),
        "--score",
        "odin",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("odin"));
}

#[test]
fn dimension_mismatch_is_descriptive() {
    let dir = TempDir::new().unwrap();
    let wide = TempDir::new().unwrap();
    let data = small_gen(dir.path(), "13", &[]);
    let other = small_gen(
        wide.path(),
        "13",
        &["--dim", "12", "--holdout", "1", "--ood-samples", "20"],
    );
    ok(&[
        "--out",
        s(dir.path()),
        "train",
        "--data",
        s(&data),
        "--epochs",
        "1",
    ]);
    let ckpt = dir.path().join("model.ckpt");

    let out = run(&[
        "--out",
        s(dir.path()),
        "ood",
        "--checkpoint",
        s(&ckpt),
        "--id",
        s(&data),
        "--ood",
        s(&wide.path().join("dataset_ood.pgcd")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("8-dimensional") && err.contains("12 columns"),
        "{err}"
    );
    assert!(!dir.path().join("ood.json").exists());

    let out = run(&[
        "--out",
        s(dir.path()),
        "eval",
        "--data",
        s(&other),
        "--checkpoint",
        s(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("8-dimensional"));
}

#[test]
fn out_directory_from_environment_and_flag() {
    let env_dir = TempDir::new().unwrap();
    let flag_dir = TempDir::new().unwrap();
    let args = [
        "gen",
        "--classes",
        "4",
        "--old",
        "2",
        "--per-class",
        "10",
        "--dim",
        "4",
    ];
    let out = bin()
        .env("PROTOGCD_OUT", env_dir.path())
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_dir.path().join("dataset.json").exists());

    let out = bin()
        .env("PROTOGCD_OUT", env_dir.path())
        .args(["--out", s(flag_dir.path())])
        .args(args)
        .args(["--name", "flagged"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_dir.path().join("flagged.json").exists());
    assert!(!env_dir.path().join("flagged.json").exists());
}

#[test]
fn config_file_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 21\n[gen]\ntotal_classes = 4\nold_classes = 2\ndim = 6\nsamples_per_class = 10\n\
         [train]\nepochs = 2\n[train.objective]\nlambda_entropy = 1.5\n",
    )
    .unwrap();
    ok(&[
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "gen",
        "--dim",
        "5",
    ]);
    let ds = load_dataset::<f64>(&dir.path().join("dataset.json")).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.old_classes().len()), (40, 5, 2));
    assert_eq!(json(&dir.path().join("manifest-gen.json"))["seed"], 21);

    let data = dir.path().join("dataset.json");
    ok(&[
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "train",
        "--data",
        s(&data),
        "--lambda-sep",
        "0.3",
    ]);
    let config = &json(&dir.path().join("manifest-train.json"))["config"];
    assert_eq!(config["epochs"], 2);
    assert_eq!(config["seed"], 21);
    assert_eq!(config["objective"]["lambda_entropy"], 1.5);
    assert_eq!(config["objective"]["lambda_sep"], 0.3);
    assert_eq!(config["objective"]["lambda_sup"], 0.35);

    fs::write(&cfg, "[train]\nepochz = 2\n").unwrap();
    let out = run(&[
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "train",
        "--data",
        s(&data),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_red-dot");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["synth", "--pairs", "24", "--dim", "8", "--seed", "3", "--out", p(&data)];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

const SUBCOMMANDS: [&str; 10] = ["ingest", "validate", "synth", "rank", "mine", "bundle", "train", "eval", "gradcheck", "report"];

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    for sub in SUBCOMMANDS {
        assert_eq!(code(&run(&[sub, "--help"])), 0, "{sub}");
    }
}

#[test]
fn every_flag_is_documented() {
    for sub in SUBCOMMANDS {
        let help = String::from_utf8(run(&[sub, "--help"]).stdout).unwrap();
        let lines: Vec<&str> = help.lines().map(str::trim).collect();
        let is_flag = |l: &str| l.starts_with("--") || (l.starts_with('-') && l.chars().nth(2) == Some(','));
        let mut flags = 0;
        for (i, line) in lines.iter().enumerate().filter(|(_, l)| is_flag(l)) {
            flags += 1;
            let inline = line.split_whitespace().skip(1).any(|w| !w.starts_with('<') && !w.starts_with("--"));
            let below = lines.get(i + 1).is_some_and(|n| !n.is_empty() && !is_flag(n));
            assert!(inline || below, "{sub}: undocumented flag line '{line}'");
        }
        assert!(flags > 1, "{sub}");
    }
    let train = String::from_utf8(run(&["train", "--help"]).stdout).unwrap();
    for flag in ["--config", "--seed", "--m", "--k", "--variant", "--fusion", "--protocol", "--folds", "--out", "--force", "--set"] {
        assert!(train.contains(flag), "train is missing {flag}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["synth", "--out", "/tmp/x", "--bogus"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--variant", "dsl_d3"])), 1);
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = synth(a.path(), &["--external-pairs", "9"]);
    let db = synth(b.path(), &["--external-pairs", "9"]);
    assert_eq!(files(&da), files(&db));
    // Re-running into the same directory overwrites bit-identically.
    let before = files(&da);
    synth(a.path(), &["--external-pairs", "9"]);
    assert_eq!(files(&da), before);
    // Dropping a split removes its stale manifest.
    synth(a.path(), &[]);
    assert!(!da.join("external.jsonl").exists());
}

#[test]
fn validate_reports_dangling_ids() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    let out = run(&["validate", "--data", p(&data)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["usable"], true);

    let manifest = data.join("train.jsonl");
    let text = fs::read_to_string(&manifest).unwrap().replacen("\"image_id\":\"train-i0\"", "\"image_id\":\"x9\"", 1);
    fs::write(&manifest, text).unwrap();
    let out = run(&["validate", "--data", p(&data)]);
    assert_eq!(code(&out), 2);
    let report = stdout_json(&out);
    assert_eq!(report["usable"], false);
    let findings = report["findings"].as_array().unwrap();
    assert_eq!(findings.len(), 1);
    assert_eq!(findings[0]["kind"], "dangling_id");
    assert_eq!(findings[0]["id"], "x9");
    // Downstream stages refuse the dataset.
    let run_dir = dir.path().join("run");
    assert_eq!(code(&run(&["rank", "--data", p(&data), "--out", p(&run_dir)])), 2);
}

#[test]
fn ingest_round_trips_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    let source = dir.path().join("source");
    fs::create_dir(&source).unwrap();
    for name in ["train.jsonl", "val.jsonl", "test.jsonl", "text_claim.rede", "image_claim.rede", "text_evidence.rede", "image_evidence.rede"] {
        fs::copy(data.join(name), source.join(name)).unwrap();
    }
    let meta: Value = serde_json::from_str(&fs::read_to_string(data.join("dataset.json")).unwrap()).unwrap();
    fs::write(source.join("categories.json"), meta["categories"].to_string()).unwrap();
    let out_dir = dir.path().join("ingested");
    let provenance = meta["provenance"].as_str().unwrap();
    let out = run(&["ingest", "--source", p(&source), "--provenance", provenance, "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files(&out_dir), files(&data));

    fs::remove_file(source.join("image_claim.rede")).unwrap();
    assert_eq!(code(&run(&["ingest", "--source", p(&source), "--out", p(&dir.path().join("x"))])), 2);
}

#[test]
fn stages_resume_and_force_recomputes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    let run_dir = dir.path().join("run");
    let args = ["bundle", "--data", p(&data), "--out", p(&run_dir), "--m", "1", "--k", "1"];
    let first = run(&args);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let summary = stdout_json(&first);
    assert_eq!(summary["origin"], "computed");
    assert_eq!(summary["slots_per_pair"], 4);
    let sidecar: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("bundles_train.json")).unwrap()).unwrap();
    let bundles = sidecar["bundles"].as_array().unwrap();
    assert_eq!(bundles.len(), 24);
    assert!(bundles.iter().all(|b| b["slots"] == 4));
    assert!(!run_dir.join(".lock").exists());

    let artifacts = files(&run_dir);
    assert_eq!(stdout_json(&run(&args))["origin"], "reused");
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(stdout_json(&run(&forced))["origin"], "computed");
    assert_eq!(files(&run_dir), artifacts);

    // A different depth invalidates the mined negatives and bundles.
    let out = run(&["bundle", "--data", p(&data), "--out", p(&run_dir), "--m", "2", "--k", "1"]);
    assert_eq!(stdout_json(&out)["slots_per_pair"], 6);
    let out = run(&["mine", "--data", p(&data), "--out", p(&run_dir), "--m", "2", "--k", "1"]);
    assert_eq!(stdout_json(&out)["origin"], "reused");
    let out = run(&["rank", "--data", p(&data), "--out", p(&run_dir), "--split", "val"]);
    assert_eq!(stdout_json(&out)["pairs"], 6);
}

#[test]
fn locked_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    let run_dir = dir.path().join("run");
    fs::create_dir(&run_dir).unwrap();
    fs::write(run_dir.join(".lock"), "1\n").unwrap();
    let out = run(&["rank", "--data", p(&data), "--out", p(&run_dir)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn gradcheck_exit_codes() {
    let out = run(&["gradcheck", "--dim", "16"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("max relative error"));
    assert_eq!(text.lines().count(), 7);
    let out = run(&["gradcheck", "--dim", "8", "--variant", "ssl", "--tolerance", "1e-14"]);
    assert_eq!(code(&out), 3);
    assert_eq!(code(&run(&["gradcheck", "--dim", "15"])), 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    let out_dir = dir.path().join("run");
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 1\n[train]\nlearning_rate = 0.1\n").unwrap();
    let out = run(&["train", "--data", p(&data), "--out", p(&out_dir), "--config", p(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    let out = run(&["train", "--data", p(&data), "--out", p(&out_dir), "--set", "model.heads=3"]);
    assert_eq!(code(&out), 1);
    let out = run(&["train", "--data", p(&data), "--out", p(&out_dir), "--fusion", "text,image"]);
    assert_eq!(code(&out), 1);
}

fn train_args<'a>(data: &'a str, out: &'a str, variant: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "train", "--data", data, "--out", out, "--variant", variant, "--seed", "1",
        "--set", "model.layers=1", "--set", "model.ff_width=16", "--set", "train.max_epochs=3",
        "--set", "train.patience=2", "--set", "train.batch_size=8", "--set", "train.lr=0.003",
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &["--external-pairs", "9"]);
    let run_dir = dir.path().join("run");
    let args = train_args(p(&data), p(&run_dir), "dsl", &[]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["resumed"], false);
    let record: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("run.json")).unwrap()).unwrap();
    let test_acc = record["metrics"]["test_accuracy"].as_f64().unwrap();
    let ckpt = run_dir.join(record["folds"][0]["checkpoint"].as_str().unwrap());
    assert!(ckpt.is_file());

    // Same configuration resumes; the reported accuracy is recomputable.
    let again = stdout_json(&run(&args));
    assert_eq!(again["resumed"], true);
    assert_eq!(again["metrics"], summary["metrics"]);
    let eval = stdout_json(&run(&["eval", "--data", p(&data), "--checkpoint", p(&ckpt), "--seed", "1"]));
    assert_eq!(eval["accuracy"].as_f64().unwrap(), test_acc);
    assert!(eval["relevance_accuracy"].is_f64());

    // Retraining with --force reproduces the run bit for bit.
    let ckpt_bytes = fs::read(&ckpt).unwrap();
    let mut forced = args.clone();
    forced.push("--force");
    assert_eq!(code(&run(&forced)), 0);
    assert_eq!(fs::read(&ckpt).unwrap(), ckpt_bytes);

    let report_args = ["report", "--data", p(&data), "--checkpoint", p(&ckpt), "--limit", "2"];
    let report = stdout_json(&run(&report_args));
    assert_eq!(report["correlations"].as_array().unwrap().len(), 4);
    let attention = report["attention"].as_array().unwrap();
    assert_eq!(attention.len(), 2);
    let slots = attention[0]["slots"].as_array().unwrap();
    assert_eq!(slots.len(), 4);
    let mut tags: Vec<&str> = slots.iter().map(|s| s["tag"].as_str().unwrap()).collect();
    tags.sort();
    assert_eq!(tags, ["I^e+", "I^e-", "T^e+", "T^e-"]);
    assert_eq!(run(&report_args).stdout, run(&report_args).stdout);
    assert_eq!(code(&run(&["eval", "--data", p(&data), "--checkpoint", p(&ckpt), "--table"])), 0);
}

#[test]
fn ood_cv_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &["--external-pairs", "9"]);
    let run_dir = dir.path().join("cv");
    let out = run(&train_args(p(&data), p(&run_dir), "ssl_ga", &["--protocol", "oodcv", "--folds", "3"]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let record: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("run.json")).unwrap()).unwrap();
    let folds = record["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 3);
    let mut items: Vec<u64> = folds.iter().flat_map(|f| f["validation_items"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap())).collect();
    items.sort_unstable();
    assert_eq!(items, (0..9).collect::<Vec<_>>());
    for f in 0..3 {
        assert!(run_dir.join(format!("checkpoints/fold{f}.ckpt")).is_file());
    }

    let base_dir = dir.path().join("base");
    let out = run(&train_args(p(&data), p(&base_dir), "baseline", &["--m", "0", "--k", "0"]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = base_dir.join("checkpoints/fold0.ckpt");
    let eval = stdout_json(&run(&["eval", "--data", p(&data), "--checkpoint", p(&ckpt), "--seed", "1"]));
    assert!(eval.get("relevance_accuracy").is_none());
    assert_eq!(code(&run(&["report", "--data", p(&data), "--checkpoint", p(&ckpt)])), 1);
}

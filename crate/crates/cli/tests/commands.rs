//! End-to-end behavior of the `convmpt` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use convmpt::io::sha256_hex;
use convmpt::manifest::{Outcome, RunManifest};

fn convmpt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convmpt")).args(args).current_dir(dir).output().unwrap()
}

fn convmpt_threads(dir: &Path, threads: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convmpt"))
        .args(args)
        .current_dir(dir)
        .env("CONVMPT_THREADS", threads)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not a JSON error: {stderr}"))
}

fn synth_small(dir: &Path, name: &str, seed: &str) {
    ok(convmpt(dir, &["synth", "--pos", "12", "--neg", "12", "--dim", "4", "--bag", "2:6", "--seed", seed, "--out", name]));
}

fn manifest(dir: &Path, name: &str) -> RunManifest {
    RunManifest::from_json(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn synth_is_deterministic_and_validates_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synth", "--pos", "50", "--neg", "50", "--dim", "16", "--bag", "5:20", "--signal", "witness", "--seed", "7"];
    let a = ok(convmpt(dir.path(), &args)).stdout;
    let b = ok(convmpt(dir.path(), &args)).stdout;
    assert_eq!(sha256_hex(&a), sha256_hex(&b));
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 100);

    let bad = convmpt(dir.path(), &["synth", "--bag", "0:5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(error_json(&bad)["error"]["kind"], "usage");
    assert_eq!(convmpt(dir.path(), &["synth", "--pos", "0"]).status.code(), Some(2));
    assert_eq!(convmpt(dir.path(), &["synth", "--bag", "five"]).status.code(), Some(2));
}

#[test]
fn train_requires_data_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = convmpt(dir.path(), &["train"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(error_json(&missing)["error"]["exit_code"], 2);

    synth_small(dir.path(), "d.jsonl", "1");
    let args = ["train", "--data", "d.jsonl", "--filters", "3", "--c1", "0.05", "--c2", "0.1", "--iters", "5", "--seed", "42"];
    ok(convmpt(dir.path(), &[&args[..], &["--out", "a.json"]].concat()));
    ok(convmpt(dir.path(), &[&args[..], &["--out", "b.json", "--manifest", "b-run.json"]].concat()));
    let a = fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.json")).unwrap());

    let m = manifest(dir.path(), "a.manifest.json");
    assert_eq!(m.compute_hash(), m.content_hash);
    assert!(m.timings.is_some());
    assert_eq!(m.command[0], "train");
    match &m.outcome {
        Outcome::Train(t) => assert_eq!(t.model_sha256, sha256_hex(&a)),
        other => panic!("unexpected outcome {other:?}"),
    }
    let b = manifest(dir.path(), "b-run.json");
    assert_eq!(m.config, b.config);
    assert_eq!(m.dataset, b.dataset);

    let bad = convmpt(dir.path(), &["train", "--data", "d.jsonl", "--c1", "-1"]);
    assert_eq!(bad.status.code(), Some(2));
    let unknown = convmpt(dir.path(), &["train", "--data", "d.jsonl", "--activation", "relu"]);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn data_and_numerical_failures_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("mixed.jsonl"),
        "{\"id\":\"a\",\"label\":1,\"instances\":[[0,1]]}\n{\"id\":\"b\",\"label\":-1,\"instances\":[[0,1,2]]}\n",
    )
    .unwrap();
    let out = convmpt(dir.path(), &["train", "--data", "mixed.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("mixed.jsonl:2"));

    fs::write(
        dir.path().join("huge.jsonl"),
        "{\"id\":\"a\",\"label\":1,\"instances\":[[1e200,1e200]]}\n{\"id\":\"b\",\"label\":-1,\"instances\":[[-1e200,3e200]]}\n",
    )
    .unwrap();
    let out = convmpt(dir.path(), &["train", "--data", "huge.jsonl", "--mode", "baseline"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_json(&out)["error"]["kind"], "numerical");

    synth_small(dir.path(), "small.jsonl", "3");
    let out = convmpt(dir.path(), &["eval", "--data", "small.jsonl", "--folds", "13"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_grid_is_recorded_per_fold() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "d.jsonl", "5");
    let out = ok(convmpt(
        dir.path(),
        &[
            "eval", "--data", "d.jsonl", "--folds", "3", "--iters", "3", "--filters", "2", "--inner-folds", "2",
            "--grid", "c1=0.1,1,10", "c2=0.001,0.01", "--manifest", "m.json", "--table", "t.csv",
        ],
    ));
    let m = manifest(dir.path(), "m.json");
    let grid = m.grid.clone().unwrap();
    assert_eq!(grid.c1, vec![0.1, 1.0, 10.0]);
    assert_eq!(grid.c2, vec![0.001, 0.01]);
    let Outcome::CrossValidation(report) = &m.outcome else { panic!("expected cross-validation") };
    assert_eq!(report.per_fold.len(), 3);
    assert_eq!(report.inner_folds, Some(2));
    for r in &report.per_fold {
        assert!(grid.c1.contains(&r.c1) && grid.c2.contains(&r.c2));
    }
    let table = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 + 2);
    assert!(String::from_utf8(out.stdout).unwrap().contains("mean Pos@Top"));

    let bad = convmpt(dir.path(), &["eval", "--data", "d.jsonl", "--grid", "c3=1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), "d.jsonl", "8");
    let args = ["eval", "--data", "d.jsonl", "--folds", "4", "--iters", "4", "--filters", "3"];
    let one = ok(convmpt_threads(dir.path(), "1", &[&args[..], &["--table", "one.csv"]].concat()));
    let many = ok(convmpt_threads(dir.path(), "4", &[&args[..], &["--table", "many.csv"]].concat()));
    assert_eq!(one.stdout, many.stdout);
    assert_eq!(fs::read(dir.path().join("one.csv")).unwrap(), fs::read(dir.path().join("many.csv")).unwrap());
    assert_eq!(convmpt_threads(dir.path(), "lots", &args).status.code(), Some(2));
}

#[test]
fn one_vs_all_reports_macro_average() {
    let dir = tempfile::tempdir().unwrap();
    ok(convmpt(
        dir.path(),
        &["synth", "--classes", "3", "--per-class", "8", "--dim", "5", "--bag", "2:5", "--seed", "2", "--out", "mc.jsonl"],
    ));
    ok(convmpt(
        dir.path(),
        &["eval", "--data", "mc.jsonl", "--ova", "--folds", "4", "--iters", "4", "--manifest", "ova.json"],
    ));
    let m = manifest(dir.path(), "ova.json");
    let Outcome::OneVsAll(report) = &m.outcome else { panic!("expected one-vs-all") };
    assert_eq!(report.classes.len(), 3);
    for r in &report.per_fold {
        let mean = r.pos_at_top.iter().sum::<f64>() / 3.0;
        assert!((mean - r.macro_average).abs() < 1e-12);
    }
}

#[test]
fn report_merges_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth_small(p, "d.jsonl", "4");
    let eval = |mode: &str, manifest: &str| {
        ok(convmpt(p, &["eval", "--data", "d.jsonl", "--folds", "3", "--iters", "3", "--mode", mode, "--manifest", manifest]))
    };
    eval("conv", "conv.json");
    eval("baseline", "base.json");

    let two = ok(convmpt(p, &["report", "--manifest", "conv.json", "base.json", "--json", "r.json", "--csv", "r.csv"]));
    let csv = String::from_utf8(two.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("conv,d,cv_pos_at_top,3,"));
    assert!(csv.lines().nth(2).unwrap().starts_with("baseline,d,"));
    assert_eq!(fs::read_to_string(p.join("r.csv")).unwrap(), csv);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    assert_eq!(json["rows"][0]["fingerprint_mismatch"], false);

    let one = ok(convmpt(p, &["report", "--manifest", "conv.json"]));
    assert_eq!(String::from_utf8(one.stdout).unwrap().lines().count(), 2);

    fs::create_dir(p.join("other")).unwrap();
    synth_small(&p.join("other"), "d.jsonl", "99");
    ok(convmpt(p, &["eval", "--data", "other/d.jsonl", "--folds", "3", "--iters", "3", "--manifest", "other.json"]));
    let flagged = ok(convmpt(p, &["report", "--manifest", "conv.json", "other.json"]));
    let csv = String::from_utf8(flagged.stdout).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")), "{csv}");
    assert!(String::from_utf8(flagged.stderr).unwrap().contains("fingerprints"));

    let mut text = fs::read_to_string(p.join("conv.json")).unwrap();
    text = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    fs::write(p.join("future.json"), text).unwrap();
    let out = convmpt(p, &["report", "--manifest", "conv.json", "future.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("version"));
}

#[test]
fn csv_dir_output_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    ok(convmpt(dir.path(), &["synth", "--pos", "6", "--neg", "6", "--dim", "3", "--bag", "1:3", "--format", "csv-dir", "--out", "bags"]));
    assert!(dir.path().join("bags/labels.csv").exists());
    ok(convmpt(dir.path(), &["train", "--data", "bags", "--iters", "2", "--out", "m.json"]));
}

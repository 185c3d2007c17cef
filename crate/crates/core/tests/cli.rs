use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn sen2pro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sen2pro"))
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = sen2pro(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes every sentence of a tab-separated file (first `cols` columns) as a corpus.
fn corpus_from_tsv(tsv: &Path, cols: usize, out: &Path) {
    let text = std::fs::read_to_string(tsv).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    let mut lines = Vec::new();
    for row in text.lines() {
        for field in row.split('\t').take(cols) {
            if seen.insert(field.to_string()) {
                lines.push(field.to_string());
            }
        }
    }
    std::fs::write(out, lines.join("\n") + "\n").unwrap();
}

#[test]
fn embed_is_byte_identical_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<PathBuf> = ["a", "b", "c"]
        .iter()
        .map(|n| dir.path().join(format!("{n}.jsonl")))
        .collect();
    let corpus = data("corpus.txt");
    let config = data("toy.json");
    for (out, jobs) in outs.iter().zip(["1", "1", "8"]) {
        ok_json(&[
            "--jobs",
            jobs,
            "embed",
            "--config",
            s(&config),
            "--corpus",
            s(&corpus),
            "--out",
            s(out),
        ]);
    }
    let first = std::fs::read(&outs[0]).unwrap();
    assert!(!first.is_empty());
    assert_eq!(first, std::fs::read(&outs[1]).unwrap());
    assert_eq!(first, std::fs::read(&outs[2]).unwrap());
}

#[test]
fn seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let corpus = data("corpus.txt");
    ok_json(&["embed", "--corpus", s(&corpus), "--out", s(&a)]);
    let summary = ok_json(&[
        "embed",
        "--corpus",
        s(&corpus),
        "--out",
        s(&b),
        "--seed",
        "9",
    ]);
    assert_eq!(summary["master_seed"], 9);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn estimate_reproduces_embed_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let (emb, samples, est, est2) = (
        dir.path().join("emb.jsonl"),
        dir.path().join("samples.jsonl"),
        dir.path().join("est.jsonl"),
        dir.path().join("est2.jsonl"),
    );
    ok_json(&[
        "embed",
        "--corpus",
        s(&data("corpus.txt")),
        "--out",
        s(&emb),
        "--samples-out",
        s(&samples),
        "--estimates-out",
        s(&est),
    ]);
    let summary = ok_json(&["estimate", "--samples", s(&samples), "--out", s(&est2)]);
    assert_eq!(summary["estimates"], 20);
    assert_eq!(std::fs::read(&est).unwrap(), std::fs::read(&est2).unwrap());
}

#[test]
fn eval_sts_on_bundled_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, emb) = (dir.path().join("c.txt"), dir.path().join("e.jsonl"));
    corpus_from_tsv(&data("sts_synthetic.tsv"), 2, &corpus);
    ok_json(&["embed", "--corpus", s(&corpus), "--out", s(&emb)]);
    let r = ok_json(&[
        "eval-sts",
        "--embeddings",
        s(&emb),
        "--dataset",
        s(&data("sts_synthetic.tsv")),
    ]);
    assert_eq!(r["n"], 20);
    for key in ["spearman", "pearson"] {
        let v = r[key].as_f64().unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
    let fixed = ok_json(&[
        "eval-sts",
        "--embeddings",
        s(&emb),
        "--dataset",
        s(&data("sts_synthetic.tsv")),
        "--alpha-mode",
        "fixed",
        "--alpha",
        "0.03",
    ]);
    assert_eq!(fixed["n"], 20);

    let d = ok_json(&[
        "distance",
        "--embeddings",
        s(&emb),
        "--pairs",
        s(&data("sts_synthetic.tsv")),
    ]);
    let rows = d.as_array().unwrap();
    assert_eq!(rows.len(), 20);
    for row in rows {
        assert_eq!(
            row["similarity"].as_f64().unwrap(),
            -row["distance"].as_f64().unwrap()
        );
    }
}

#[test]
fn probe_modes_on_bundled_task() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, emb) = (dir.path().join("c.txt"), dir.path().join("e.jsonl"));
    let text = std::fs::read_to_string(data("few_shot_train.tsv")).unwrap()
        + &std::fs::read_to_string(data("few_shot_test.tsv")).unwrap();
    std::fs::write(dir.path().join("all.tsv"), text).unwrap();
    corpus_from_tsv(&dir.path().join("all.tsv"), 1, &corpus);
    ok_json(&["embed", "--corpus", s(&corpus), "--out", s(&emb)]);
    let (train, test) = (data("few_shot_train.tsv"), data("few_shot_test.tsv"));
    let base = [
        "probe",
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--features",
        s(&emb),
    ];
    for mode in ["mu", "mu_sigma"] {
        let mut args = base.to_vec();
        args.extend(["--mode", mode]);
        let r = ok_json(&args);
        assert_eq!(r["mode"], mode);
        assert_eq!(r["n_test"], 40);
        assert_eq!(r["classes"].as_array().unwrap().len(), 4);
        let acc = r["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn rank_and_analogy() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("e.jsonl");
    ok_json(&[
        "embed",
        "--corpus",
        s(&data("corpus.txt")),
        "--out",
        s(&emb),
    ]);
    let r = ok_json(&[
        "eval-rank",
        "--embeddings",
        s(&emb),
        "--dataset",
        s(&data("rank_pools.jsonl")),
        "--hits",
        "1,2",
    ]);
    assert_eq!(r["n"], 2);
    assert!(r["hits_at"]["2"].is_number());
    let a = ok_json(&[
        "eval-analogy",
        "--embeddings",
        s(&emb),
        "--dataset",
        s(&data("analogy.tsv")),
    ]);
    assert_eq!(a["n"], 2);
    assert!(a["score"].as_f64().unwrap() >= 0.0);
}

#[test]
fn theory_subcommands() {
    let r = ok_json(&[
        "theory", "--what", "theorem2", "--k", "8", "--trials", "1000", "--seed", "7",
    ]);
    let pass = r["measurements"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["label"] == "pass_fraction")
        .unwrap();
    assert!(pass["value"].as_f64().unwrap() >= 0.99);

    let r = ok_json(&[
        "theory", "--what", "theorem1", "--k", "8", "--n-grid", "10,100", "--trials", "3",
    ]);
    assert_eq!(r["experiment"], "theorem1");

    let r = ok_json(&[
        "theory", "--what", "tradeoff", "--k-grid", "4,8", "--n", "50", "--trials", "2",
    ]);
    assert_eq!(r["experiment"], "estimator_tradeoff");

    let r = ok_json(&[
        "theory",
        "--what",
        "unified",
        "--dataset",
        s(&data("sts_synthetic.tsv")),
        "--n",
        "5",
    ]);
    let labels: Vec<&str> = r["measurements"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["individual", "unified"]);
}

#[test]
fn analyze_and_sweep() {
    let ds = data("sts_synthetic.tsv");
    let q = ok_json(&["analyze", "--what", "q", "--corpus", s(&data("corpus.txt"))]);
    assert_eq!(q["metric"], "fluctuation_Q");
    assert!(q["value"].as_f64().unwrap() > 0.0);

    let imp = ok_json(&["analyze", "--what", "importance", "--dataset", s(&ds)]);
    assert_eq!(imp.as_array().unwrap().len(), 5);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("qi.csv");
    let qi = ok_json(&[
        "analyze",
        "--what",
        "qi-sweep",
        "--dataset",
        s(&ds),
        "--dropout",
        "0,0.1",
        "--csv",
        s(&csv),
    ]);
    assert_eq!(qi.as_array().unwrap().len(), 2);
    assert!(qi[0]["q"].as_f64().unwrap().abs() < 1e-20);
    assert!(qi[1]["q"].as_f64().unwrap() > 1e-6);
    assert!(std::fs::read_to_string(&csv)
        .unwrap()
        .starts_with("config,Q,I\n"));

    let sweep = ok_json(&["sweep", "--dataset", s(&ds), "--n-grid", "1,5,5"]);
    let recs = sweep.as_array().unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[1], recs[2]);
}

#[test]
fn repeated_invocations_have_identical_stdout() {
    let args = [
        "theory", "--what", "theorem2", "--k", "4", "--trials", "50", "--seed", "1",
    ];
    assert_eq!(sen2pro(&args).stdout, sen2pro(&args).stdout);
}

#[test]
fn exit_codes() {
    assert_eq!(sen2pro(&["embed", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(sen2pro(&[]).status.code(), Some(1));
    assert_eq!(sen2pro(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = sen2pro(&[
        "embed",
        "--corpus",
        "/definitely/not/here.txt",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(missing.stdout.is_empty());

    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"n_model": 0}"#).unwrap();
    let out = sen2pro(&[
        "embed",
        "--config",
        s(&bad_cfg),
        "--corpus",
        s(&data("corpus.txt")),
        "--out",
        s(&dir.path().join("y")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = sen2pro(&[
        "eval-sts",
        "--embeddings",
        s(&data("corpus.txt")),
        "--dataset",
        s(&data("sts_synthetic.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cache_dir_in_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let cache = dir.path().join("cache");
    std::fs::write(&cfg, serde_json::json!({ "cache_dir": cache }).to_string()).unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    ok_json(&[
        "embed",
        "--config",
        s(&cfg),
        "--corpus",
        s(&data("corpus.txt")),
        "--out",
        s(&a),
    ]);
    let cached = std::fs::read_dir(&cache).unwrap().count();
    assert_eq!(cached, 20);
    ok_json(&[
        "embed",
        "--config",
        s(&cfg),
        "--corpus",
        s(&data("corpus.txt")),
        "--out",
        s(&b),
    ]);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), cached);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ok_json(&["embed", "--corpus", s(&data("corpus.txt")), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

use clap::Parser;
use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;
use vulforge::ingest::Split;
use vulforge::learners::{read_round_weights, round_preds_path, write_prediction_rows};
use vulforge::synth::{shaped, vuln_corpus, CorpusConfig};
use vulforge::{Label, PredictionSet, ProbVector};
use vulforge_cli::{exit, run, Cli, CliError};

fn cli(args: &[&str]) -> Result<(), CliError> {
    let mut full = vec!["vulforge"];
    full.extend_from_slice(args);
    run(&Cli::parse_from(full))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, samples: usize) -> PathBuf {
    let path = dir.join("dataset.jsonl");
    let d = vuln_corpus(&CorpusConfig {
        samples,
        ..CorpusConfig::default()
    })
    .unwrap();
    d.write_jsonl(&path).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn accuracy_of(report: &Path, method: &str) -> f64 {
    let v = json(report);
    v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["method"] == method)
        .unwrap()["metrics"]["accuracy"]
        .as_f64()
        .unwrap()
}

#[test]
fn split_hundred_samples_seed_seven() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fixture.jsonl");
    shaped("fx", &[50, 50]).unwrap().write_jsonl(&data).unwrap();
    let out = dir.path().join("out");
    cli(&["split", "--seed", "7", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    let v = json(&out.join("splits.json"));
    assert_eq!(v["seed"], 7);
    let len = |k: &str| v[k].as_array().unwrap().len();
    assert_eq!((len("train"), len("val"), len("test")), (80, 10, 10));
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn boost_twice_gives_identical_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 600);
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        cli(&["split", "--dataset", s(&data), "--out", s(&out)]).unwrap();
        cli(&["boost", "--rounds", "10", "--dataset", s(&data), "--out", s(&out)]).unwrap();
        bytes.push(fs::read(out.join("boosting/ensemble.json")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let out = dir.path().join("a");
    let manifest = fs::read(out.join("manifest.json")).unwrap();
    cli(&["boost", "--rounds", "10", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    assert_eq!(fs::read(out.join("boosting/ensemble.json")).unwrap(), bytes[0]);
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), manifest);
    let v = json(&out.join("boosting/ensemble.json"));
    assert_eq!(v["ensemble"]["strategy"], "boosting");
    assert!(out.join("boosting/boost_weights_round_1.csv").exists());
}

#[test]
fn soft_bagging_matches_or_beats_single_member() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    cli(&["synth", "--out", s(&data_dir)]).unwrap();
    let data = data_dir.join("dataset.jsonl");
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..10 {
        let seed = seed.to_string();
        let out = dir.path().join(format!("s{seed}"));
        let common = ["--seed", seed.as_str(), "--dataset", s(&data)];
        let m5 = out.join("m5");
        let m1 = out.join("m1");
        for (o, members) in [(&m5, "5"), (&m1, "1")] {
            let mut args = vec!["split", "--out", s(o)];
            args.extend_from_slice(&common);
            cli(&args).unwrap();
            let mut args = vec!["bag", "--mode", "soft", "--members", members, "--out", s(o)];
            args.extend_from_slice(&common);
            cli(&args).unwrap();
        }
        let a5 = accuracy_of(&m5.join("bagging_soft/report.json"), "bagging_soft");
        let a1 = accuracy_of(&m1.join("bagging_soft/report.json"), "bagging_soft");
        lines.push(format!("seed {seed}: M=5 {a5:.3}  M=1 {a1:.3}"));
        if a5 >= a1 {
            wins += 1;
        }
    }
    println!("{}", lines.join("\n"));
    assert!(wins >= 8, "soft bagging won {wins} of 10 seeds:\n{}", lines.join("\n"));
}

#[test]
fn verify_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 300);
    let out = dir.path().join("out");
    cli(&["split", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    cli(&["train-base", "--model-id", "a", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    cli(&["train-base", "--model-id", "b", "--seed", "3", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    cli(&["stack", "--bases", "a,b", "--meta", "knn", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    cli(&["eval", "--models", "a,b,stacking_knn", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    cli(&["overlap", "--models", "a,b,stacking_knn", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    cli(&["divergence", "--members", "a,b", "--methods", "stacking_knn", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    cli(&["verify", "--out", s(&out)]).unwrap();

    let overlap = fs::read_to_string(out.join("overlap.csv")).unwrap();
    assert!(overlap.starts_with("bitmask,count\n001,"));
    assert_eq!(overlap.lines().count(), 8);

    let report = out.join("report.json");
    let text = fs::read_to_string(&report).unwrap().replace("\"split\": \"test\"", "\"split\": \"val\"");
    fs::write(&report, text).unwrap();
    let err = cli(&["verify", "--out", s(&out)]).unwrap_err();
    assert_eq!(err.exit_code(), exit::VERIFY);
    assert!(err.to_string().contains("report.json"));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 400);
    let mut outs = Vec::new();
    for threads in ["1", "2", "8"] {
        let out = dir.path().join(format!("t{threads}"));
        let base = ["--threads", threads, "--dataset", s(&data), "--out", s(&out)];
        let with = |cmd: &[&str]| {
            let mut a = cmd.to_vec();
            a.extend_from_slice(&base);
            cli(&a).unwrap();
        };
        with(&["split"]);
        with(&["bag", "--members", "3"]);
        with(&["boost", "--rounds", "4"]);
        with(&["train-base", "--model-id", "x"]);
        with(&["train-base", "--model-id", "y", "--seed", "5"]);
        with(&["dgs", "--bases", "x,y"]);
        with(&["stack", "--bases", "x,y", "--meta", "rf"]);
        outs.push(out);
    }
    for rel in [
        "bagging_soft/ensemble.json",
        "boosting/ensemble.json",
        "dgs_hard/ensemble.json",
        "stacking_rf/ensemble.json",
        "manifest.json",
    ] {
        let first = fs::read(outs[0].join(rel)).unwrap();
        for o in &outs[1..] {
            assert_eq!(fs::read(o.join(rel)).unwrap(), first, "{rel}");
        }
    }
}

#[test]
fn rank_from_score_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    fs::write(
        &scores,
        "instance,method,accuracy,f1\nd1,a,0.9,0.5\nd1,b,0.8,0.5\nd2,a,0.7,0.6\nd2,b,0.75,0.4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    cli(&["rank", "--scores", s(&scores), "--out", s(&out)]).unwrap();
    let text = fs::read_to_string(out.join("ranks.csv")).unwrap();
    assert_eq!(text, "method,accuracy,f1\na,1.5,1.25\nb,1.5,1.75\n");
}

fn bin() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_vulforge"))
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 200);
    let out = dir.path().join("out");

    let code = |args: &[&str]| bin().args(args).output().unwrap().status.code().unwrap();
    assert_eq!(code(&["bag", "--dataset", s(&data), "--out", s(&out)]), exit::PROTOCOL_ORDER);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seeed = 3\n").unwrap();
    assert_eq!(code(&["split", "--config", s(&bad), "--dataset", s(&data), "--out", s(&out)]), exit::CONFIG);
    assert_eq!(code(&["split", "--dataset", "/nonexistent/x.jsonl", "--out", s(&out)]), exit::IO);
    assert_eq!(code(&["split", "--dataset", s(&data), "--out", s(&out)]), exit::OK);
    assert_eq!(code(&["bag", "--members", "0", "--dataset", s(&data), "--out", s(&out)]), exit::CONFIG);

    let help = bin().arg("--help").output().unwrap();
    let help = String::from_utf8(help.stdout).unwrap();
    for c in ["75", "protocol order", "config error"] {
        assert!(help.contains(c), "{c}");
    }
}

fn perfect_set(model: &str, split: Split, ids: &[String], truth: &dyn Fn(&str) -> Label, flip: &dyn Fn(usize) -> bool) -> PredictionSet {
    let mut set = PredictionSet::new(model, split, 2);
    for (i, id) in ids.iter().enumerate() {
        let mut y = truth(id).0;
        if flip(i) {
            y = 1 - y;
        }
        let mut p = [0.2, 0.2];
        p[y] = 0.8;
        set.insert(id.clone(), ProbVector::validate(&p).unwrap()).unwrap();
    }
    set
}

#[test]
fn external_boost_round_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 300);
    let d = vulforge::ingest::load_dataset(&data, vulforge::ingest::Schema::Binary).unwrap();
    let out = dir.path().join("out");
    let ext = dir.path().join("ext");
    let args = ["boost", "--rounds", "3", "--dataset", s(&data), "--out", s(&out), "--external", s(&ext)];
    cli(&["split", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    let splits = json(&out.join("splits.json"));
    let ids = |k: &str| -> Vec<String> {
        splits[k].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
    };
    let (train, test) = (ids("train"), ids("test"));
    let truth = |id: &str| d.label_of(id).unwrap();

    for t in 1..=3 {
        let err = cli(&args).unwrap_err();
        assert_eq!(err.exit_code(), exit::PENDING, "{err}");
        let w = read_round_weights(&ext, t).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-9);
        // rounds miss disjoint stripes, so any two outvote the third
        let preds = perfect_set(&format!("base.r{t}"), Split::Train, &train, &truth, &|i| i % 5 == t);
        write_prediction_rows(&round_preds_path(&ext, t, Split::Train), &preds).unwrap();
        let preds = perfect_set(&format!("base.r{t}"), Split::Test, &test, &truth, &|i| i % 5 == t);
        write_prediction_rows(&round_preds_path(&ext, t, Split::Test), &preds).unwrap();
    }
    cli(&args).unwrap();
    let v = json(&out.join("boosting/ensemble.json"));
    assert_eq!(v["ensemble"]["rounds"].as_array().unwrap().len(), 3);
    assert_eq!(accuracy_of(&out.join("boosting/report.json"), "boosting"), 1.0);
}

#[test]
fn external_bagging_waits_for_members() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 300);
    let d = vulforge::ingest::load_dataset(&data, vulforge::ingest::Schema::Binary).unwrap();
    let out = dir.path().join("out");
    let ext = dir.path().join("ext");
    cli(&["split", "--dataset", s(&data), "--out", s(&out)]).unwrap();
    let args = ["bag", "--members", "3", "--mode", "hard", "--dataset", s(&data), "--out", s(&out), "--external", s(&ext)];
    let err = cli(&args).unwrap_err();
    assert_eq!(err.exit_code(), exit::PENDING);
    assert!(out.join("bagging_hard/bootstrap_plan.json").exists());
    let splits = json(&out.join("splits.json"));
    let test: Vec<String> = splits["test"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let truth = |id: &str| d.label_of(id).unwrap();
    for j in 0..3 {
        let set = perfect_set(&format!("base.m{j}"), Split::Test, &test, &truth, &|_| false);
        vulforge::learners::write_predictions(&ext, &set).unwrap();
    }
    cli(&args).unwrap();
    assert_eq!(accuracy_of(&out.join("bagging_hard/report.json"), "bagging_hard"), 1.0);
}

#[test]
fn cwe_subsets_and_features() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    cli(&["synth", "--samples", "800", "--paired", "--multiclass", "--out", s(&data_dir)]).unwrap();
    let data = data_dir.join("dataset.jsonl");
    let out = dir.path().join("out");
    let common = ["--schema", "multiclass", "--dataset", s(&data), "--out", s(&out)];
    let mut args = vec!["cwe-subsets", "--top", "3"];
    args.extend_from_slice(&common);
    cli(&args).unwrap();
    let v = json(&out.join("cwe/subsets.json"));
    let subsets = v["subsets"].as_array().unwrap();
    assert_eq!(subsets.len(), 3);
    for sub in subsets {
        let n = sub["vulnerable"].as_u64().unwrap();
        assert_eq!(sub["samples"].as_u64().unwrap(), 2 * n);
        let d = vulforge::ingest::load_dataset(&out.join(sub["path"].as_str().unwrap()), vulforge::ingest::Schema::Binary)
            .unwrap();
        assert_eq!(d.class_counts(), vec![n as usize, n as usize]);
    }
    let mut args = vec!["featurize"];
    args.extend_from_slice(&common);
    cli(&args).unwrap();
    let rows = fs::read_to_string(out.join("features.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 800);
    cli(&["verify", "--out", s(&out)]).unwrap();
}

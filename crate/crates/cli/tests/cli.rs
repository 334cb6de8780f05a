use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fuseser::dataio::{reference_labels, LabelVocabulary};
use fuseser::evalens::{balanced_subsets, ensemble_search, evaluate, PredictionSet, SearchResult};
use serde_json::Value;

fn fuseser(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuseser")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fuseser(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fuseser(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small corpus plus a config tuned so that a run takes a fraction of a second.
fn corpus(root: &Path, extra: &[&str]) -> PathBuf {
    let dir = root.join("corpus");
    let mut args = vec!["gen-synthetic", "--out", s(&dir), "--per-class", "40"];
    args.extend_from_slice(extra);
    ok(&args);
    let cfg_path = dir.join("config.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["train"]["warmup_steps"] = 20.into();
    cfg["head"]["model_dim"] = 16.into();
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    dir
}

fn vocab(dir: &Path) -> LabelVocabulary {
    LabelVocabulary::load(dir.join("vocab.json")).unwrap()
}

fn refs(dir: &Path) -> BTreeMap<String, usize> {
    reference_labels(dir.join("val.jsonl"), &vocab(dir)).unwrap().into_iter().collect()
}

#[test]
fn gen_synthetic_is_repeatable_and_validates() {
    let t = tempfile::tempdir().unwrap();
    let a = ok(&["gen-synthetic", "--out", s(&t.path().join("a")), "--seed", "4"]);
    let b = ok(&["gen-synthetic", "--out", s(&t.path().join("b")), "--seed", "4"]);
    let digests = |o: &str| o.lines().filter(|l| l.contains("digest")).map(|l| l.split_whitespace().last().unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(digests(&a).len(), 3);
    assert_eq!(digests(&a), digests(&b));
    assert!(t.path().join("a/config.json").is_file());
    assert_eq!(code(&["gen-synthetic", "--out", s(&t.path().join("c")), "--per-class", "0"]), 2);
}

#[test]
fn train_predict_evaluate_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let dir = corpus(t.path(), &[]);
    let run = t.path().join("run");
    let table = ok(&["train", "--config", s(&dir.join("config.json")), "--out", s(&run)]);
    assert!(table.lines().any(|l| l.trim_start().starts_with("20 ")));
    let log = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);

    let manifest = run.join("run_manifest.json");
    let preds = t.path().join("simple.jsonl");
    let val = dir.join("val.jsonl");
    let args = ["predict", "--config", s(&manifest), "--manifest", s(&val), "--out", s(&preds)];
    ok(&args);
    let first = fs::read(&preds).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), refs(&dir).len());
    ok(&args);
    assert_eq!(first, fs::read(&preds).unwrap());

    let set = PredictionSet::read(&preds, &vocab(&dir)).unwrap();
    let m = evaluate(&set, &refs(&dir), 4).unwrap();
    let out = ok(&["evaluate", "--predictions", s(&preds), "--manifest", s(&dir.join("val.jsonl"))]);
    let want = format!("{:>8.3}  {:>8.3}  {:>8.3}  {:>8.3}", m.macro_f1, m.micro_f1, m.macro_precision, m.macro_recall);
    assert_eq!(out.lines().nth(1).unwrap(), want);
}

#[test]
fn strategy_flag_is_recorded_in_the_manifest() {
    let t = tempfile::tempdir().unwrap();
    let dir = corpus(t.path(), &[]);
    let cfg_path = dir.join("config.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["train"]["epochs"] = 1.into();
    cfg["train"]["warmup_steps"] = 2.into();
    cfg["head"]["model_dim"] = 8.into();
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let run = t.path().join("mdat");
    ok(&["train", "--config", s(&cfg_path), "--out", s(&run), "--strategy", "mdat", "--seed", "9"]);
    let m: Value = serde_json::from_str(&fs::read_to_string(run.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["head"]["strategy"], "MDAT");
    assert_eq!(m["config"]["train"]["seed"], 9);
    assert_eq!(code(&["train", "--config", s(&cfg_path), "--out", s(&run), "--strategy", "LSTM"]), 2);
}

#[test]
fn prediction_failures_map_to_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let dir = corpus(t.path(), &[]);
    let cfg = dir.join("config.json");
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--out", s(&a), "--seed", "1"]);
    ok(&["train", "--config", s(&cfg), "--out", s(&b), "--seed", "2"]);
    let val = dir.join("val.jsonl");
    let out = t.path().join("p.jsonl");
    let (manifest_a, checkpoint_b) = (a.join("run_manifest.json"), b.join("checkpoint.bin"));
    let mismatched = [
        "predict", "--config", s(&manifest_a), "--checkpoint", s(&checkpoint_b),
        "--manifest", s(&val), "--out", s(&out),
    ];
    assert_eq!(code(&mismatched), 2);

    let broken = dir.join("broken.jsonl");
    let text = fs::read_to_string(&val).unwrap().replacen(".speech.ft", ".missing.ft", 1);
    fs::write(&broken, text).unwrap();
    let missing = ["predict", "--config", s(&manifest_a), "--manifest", s(&broken), "--out", s(&out)];
    assert_eq!(code(&missing), 1);
}

#[test]
fn evaluate_scores_perfect_shuffled_and_empty_files() {
    let t = tempfile::tempdir().unwrap();
    let dir = corpus(t.path(), &[]);
    let v = vocab(&dir);
    let r = refs(&dir);
    let val = dir.join("val.jsonl");

    let perfect = t.path().join("perfect.jsonl");
    PredictionSet::new("perfect", r.clone()).write(&perfect, &v).unwrap();
    let out = ok(&["evaluate", "--predictions", s(&perfect), "--manifest", s(&val)]);
    assert_eq!(out.lines().nth(1).unwrap().split_whitespace().collect::<Vec<_>>(), ["1.000"; 4]);

    let labels: Vec<usize> = r.values().copied().collect();
    let shuffled: BTreeMap<String, usize> = r.keys().cloned().zip(labels.iter().cycle().skip(7).copied()).collect();
    let path = t.path().join("shuffled.jsonl");
    let set = PredictionSet::new("shuffled", shuffled);
    set.write(&path, &v).unwrap();
    let m = evaluate(&set, &r, v.num_classes()).unwrap();
    let out = ok(&["evaluate", "--predictions", s(&path), "--manifest", s(&val), "--vocab", s(&dir.join("vocab.json"))]);
    let got: Vec<f64> = out.lines().nth(1).unwrap().split_whitespace().map(|x| x.parse().unwrap()).collect();
    let want = [m.macro_f1, m.micro_f1, m.macro_precision, m.macro_recall];
    for (g, w) in got.iter().zip(want) {
        assert_eq!(format!("{g:.3}"), format!("{w:.3}"));
    }

    let empty = t.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&["evaluate", "--predictions", s(&empty), "--manifest", s(&val)]), 2);
}

#[test]
fn ensemble_search_matches_the_library_and_is_stable() {
    let t = tempfile::tempdir().unwrap();
    let dir = corpus(t.path(), &["--separation", "1.5"]);
    let preds = t.path().join("preds");
    fs::create_dir(&preds).unwrap();
    for seed in 1..=5 {
        let run = t.path().join(format!("run{seed}"));
        ok(&["train", "--config", s(&dir.join("config.json")), "--out", s(&run), "--seed", &seed.to_string()]);
        ok(&[
            "predict", "--config", s(&run.join("run_manifest.json")), "--manifest", s(&dir.join("val.jsonl")),
            "--out", s(&preds.join(format!("seed{seed}.jsonl"))),
        ]);
    }
    let val = dir.join("val.jsonl");
    let json = t.path().join("search.json");
    let args = ["ensemble-search", "--predictions", s(&preds), "--best-model", "seed2", "--manifest", s(&val), "--seed", "3", "--out", s(&json)];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    let got: SearchResult = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();

    let v = vocab(&dir);
    let r = refs(&dir);
    let sets: Vec<PredictionSet> = (1..=5)
        .map(|i| PredictionSet::read(preds.join(format!("seed{i}.jsonl")), &v).unwrap())
        .collect();
    let subsets = balanced_subsets(&r, 4, 100, 3).unwrap();
    let want = ensemble_search(&sets, "seed2", &r, &subsets, 4).unwrap();
    assert_eq!(got, want);
    assert_eq!(got.table.len(), 11);
    assert!(got.spec.members.contains(&"seed2".to_string()));

    for i in [4, 5] {
        fs::rename(preds.join(format!("seed{i}.jsonl")), t.path().join(format!("seed{i}.jsonl"))).unwrap();
    }
    let three = ok(&args);
    assert_eq!(three.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 1);
    fs::rename(t.path().join("seed4.jsonl"), t.path().join("x.jsonl")).unwrap();
    fs::remove_file(preds.join("seed3.jsonl")).unwrap();
    assert_eq!(code(&args), 2);
}

#[test]
fn gradcheck_reports_and_fails_on_injected_faults() {
    let out = ok(&["gradcheck", "gat_layer"]);
    assert!(out.contains("gat_layer") && out.contains("PASS"));
    let line = out.lines().find(|l| l.starts_with("gat_layer")).unwrap();
    let err: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(err < 1e-4);
    assert_eq!(code(&["gradcheck", "linear", "--inject-fault"]), 1);
    assert_eq!(code(&["gradcheck", "no_such_layer"]), 2);
}

#[test]
fn gradcheck_all_passes() {
    let out = ok(&["gradcheck", "all"]);
    assert!(out.contains("all passed"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn thread_count_must_be_positive() {
    let out = Command::new(env!("CARGO_BIN_EXE_fuseser"))
        .args(["gradcheck", "linear"])
        .env("FUSESER_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_fuseser"))
        .args(["gradcheck", "linear", "--seeds", "2"])
        .env("FUSESER_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
}

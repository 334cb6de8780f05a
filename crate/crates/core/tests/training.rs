use std::fs;
use std::path::Path;

use fuseser::dataio::{gen_synthetic, SynthConfig};
use fuseser::fusion::{FusionModel, Strategy};
use fuseser::trainer::{
    load_trained, predict_split, read_checkpoint_header, run_training, LossKind, RunConfig,
    RunManifest, SamplerKind, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE,
};
use fuseser::Error;

fn small_run(dir: &Path) -> RunConfig {
    let synth = SynthConfig {
        per_class: 60,
        ..Default::default()
    };
    let corpus = gen_synthetic(&synth, dir.join("corpus")).unwrap();
    let mut cfg = RunConfig::for_corpus(&corpus, &synth);
    cfg.head.model_dim = 16;
    cfg.train.epochs = 5;
    cfg.train.warmup_steps = 20;
    cfg
}

#[test]
fn training_loss_falls_for_every_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_run(dir.path());
    for s in Strategy::ALL {
        let mut cfg = base.clone();
        cfg.head.strategy = s;
        let summary = run_training(&cfg, dir.path().join(s.name()), |_| {}).unwrap();
        let log = &summary.outcome.log;
        assert_eq!(log.len(), 5);
        assert!(log[4].train_loss < log[0].train_loss, "{s}: {} -> {}", log[0].train_loss, log[4].train_loss);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_and_metrics_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path());
    cfg.train.lr_max = 0.0;
    cfg.train.lr_min = 0.0;
    let summary = run_training(&cfg, dir.path().join("run"), |_| {}).unwrap();
    let (_, init) = FusionModel::build(&cfg.head, cfg.train.seed).unwrap();
    for ((_, a), (_, b)) in init.iter().zip(summary.outcome.best_params.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    let first = summary.outcome.log[0].val_macro_f1;
    assert!(summary.outcome.log.iter().all(|m| m.val_macro_f1 == first));
}

#[test]
fn run_manifest_alone_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path());
    cfg.head.use_f0 = true;
    cfg.head.f0_variant = fuseser::fusion::F0Variant::Cnn;
    cfg.head.f0.cnn_channels = 8;
    cfg.head.f0.out_dim = 8;
    cfg.augment.apply_prob = 0.5;
    cfg.train.sampler = SamplerKind::Balanced;
    cfg.train.loss = LossKind::Focal;
    let a = dir.path().join("a");
    let first = run_training(&cfg, &a, |_| {}).unwrap();

    let replay = RunConfig::load(a.join(MANIFEST_FILE)).unwrap();
    let b = dir.path().join("b");
    let second = run_training(&replay, &b, |_| {}).unwrap();
    assert_eq!(first.manifest_hash, second.manifest_hash);
    for f in [MANIFEST_FILE, METRICS_FILE, CHECKPOINT_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let header = read_checkpoint_header(a.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(header.manifest_hash, first.manifest_hash);
    assert_eq!(header.epoch, first.outcome.best_epoch);
}

#[test]
fn predictions_come_from_the_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path());
    let out = dir.path().join("run");
    let summary = run_training(&cfg, &out, |_| {}).unwrap();
    let set = predict_split(&summary.manifest, out.join(CHECKPOINT_FILE), &cfg.val_manifest, "m").unwrap();
    let vocab = cfg.load_vocab().unwrap();
    let refs: std::collections::BTreeMap<_, _> =
        fuseser::dataio::reference_labels(&cfg.val_manifest, &vocab).unwrap().into_iter().collect();
    let m = fuseser::evalens::evaluate(&set, &refs, vocab.num_classes()).unwrap();
    let best = &summary.outcome.log[summary.outcome.best_epoch - 1];
    assert_eq!(m.macro_f1, best.val_macro_f1);
}

#[test]
fn checkpoint_from_another_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run(dir.path());
    let out = dir.path().join("run");
    run_training(&cfg, &out, |_| {}).unwrap();
    let mut other: RunManifest = RunManifest::load(out.join(MANIFEST_FILE)).unwrap();
    other.config.train.seed += 1;
    let err = load_trained(&other, out.join(CHECKPOINT_FILE)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn divergent_rate_aborts_with_a_data_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path());
    cfg.train.lr_max = 1e300;
    cfg.train.clip_norm = 1e300;
    let err = run_training(&cfg, dir.path().join("run"), |_| {}).err().expect("training must abort");
    assert!(
        matches!(err, Error::NonFiniteLoss { .. } | Error::NonFiniteGrad(_)),
        "{err}"
    );
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn vocabulary_and_head_class_count_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_run(dir.path());
    cfg.head.num_classes = 8;
    let err = run_training(&cfg, dir.path().join("run"), |_| {}).err().unwrap();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn config_errors_name_the_offending_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    fs::write(&p, r#"{"train_manifest":"a","val_manifest":"b","train":{"epochs":"many"}}"#).unwrap();
    let err = RunConfig::load(&p).unwrap_err();
    assert!(err.to_string().contains("train.epochs"), "{err}");
    fs::write(&p, r#"{"train_manifest":"a","val_manifest":"b","head":{"stratgy":"MDAT"}}"#).unwrap();
    assert!(RunConfig::load(&p).unwrap_err().to_string().contains("stratgy"));
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fuseser::dataio::{gen_synthetic, reference_labels, LabelVocabulary, SynthConfig};
use fuseser::diffcore::{GradCheckConfig, GRADCHECK_TOL};
use fuseser::evalens::{
    balanced_subsets, ensemble_search, evaluate, PredictionSet, DEFAULT_SUBSETS, MIN_ENSEMBLE,
};
use fuseser::fusion::Strategy;
use fuseser::gradsuite::{self, DEFAULT_SEEDS};
use fuseser::trainer::{
    predict_split, run_training, EpochMetrics, RunConfig, RunManifest, CHECKPOINT_FILE,
};
use fuseser::{Error, Result};

#[derive(Parser)]
#[command(name = "fuseser", version, about = "Multimodal emotion recognition heads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and a matching run config template.
    GenSynthetic(GenArgs),
    /// Train one head and write its run directory.
    Train(TrainArgs),
    /// Predict a split with a trained checkpoint.
    Predict(PredictArgs),
    /// Score a prediction file against a reference manifest.
    Evaluate(EvaluateArgs),
    /// Search majority-vote ensembles over a directory of prediction files.
    EnsembleSearch(EnsembleArgs),
    /// Finite-difference gradient checks of every layer and head.
    Gradcheck(GradArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator settings as JSON; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    /// Only the F0 track carries the label.
    #[arg(long)]
    f0_only: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Run manifest of the trained head (or the run config it was trained from).
    #[arg(long)]
    config: PathBuf,
    /// Defaults to `checkpoint.bin` next to the config.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Split to predict.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Model name recorded in the set; defaults to the output file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Reference manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to `vocab.json` next to the manifest, else the built-in labels.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Directory of `*.jsonl` prediction files, one per model.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    best_model: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_SUBSETS)]
    subsets: usize,
    /// Write the search result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradArgs {
    /// Case name or `all`.
    #[arg(default_value = "all")]
    layer: String,
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    seeds: u64,
    /// Corrupt one analytic gradient entry per check.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let result = match cli.command {
        Command::GenSynthetic(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::EnsembleSearch(a) => cmd_ensemble(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("FUSESER_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("FUSESER_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("cannot start {n} worker threads: {e}")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn cmd_gen(a: GenArgs) -> Result<ExitCode> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(k) = a.num_classes {
        cfg.num_classes = k;
    }
    if let Some(n) = a.per_class {
        cfg.per_class = n;
    }
    if let Some(s) = a.separation {
        cfg.separation = s;
    }
    cfg.f0_only |= a.f0_only;
    let corpus = gen_synthetic(&cfg, &a.out)?;

    let mut run = RunConfig::for_corpus(&corpus, &cfg);
    run.train_manifest = "train.jsonl".into();
    run.val_manifest = "val.jsonl".into();
    run.vocab = Some("vocab.json".into());
    let template = a.out.join("config.json");
    let mut json = serde_json::to_string_pretty(&run).expect("serializable config");
    json.push('\n');
    std::fs::write(&template, json).map_err(|e| Error::io(&template, e))?;

    for (split, path) in [("train", &corpus.train_manifest), ("val", &corpus.val_manifest)] {
        let refs = reference_labels(path, &corpus.vocab)?;
        let digest = fuseser::dataio::split_digest(refs.iter().map(|(id, _)| id.as_str()));
        println!("{split:<6} {:>5} utterances  digest {digest}", refs.len());
    }
    println!("vocab  {} classes     digest {}", corpus.vocab.num_classes(), corpus.vocab.digest());
    println!("config {}", template.display());
    Ok(ExitCode::SUCCESS)
}

fn print_epoch(m: &EpochMetrics) {
    println!(
        "{:>5}  {:>8.3}  {:>8.3}  {:>8.3}  {:>8.3}  {:>8.3}  {:>9.2e}",
        m.epoch, m.train_loss, m.val_macro_f1, m.val_micro_f1, m.val_precision, m.val_recall, m.lr
    );
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.strategy {
        cfg.head.strategy = s;
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    println!(
        "{:>5}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>9}",
        "epoch", "loss", "macro-F1", "micro-F1", "P", "R", "lr"
    );
    let summary = run_training(&cfg, &a.out, print_epoch)?;
    let best = &summary.outcome.log[summary.outcome.best_epoch - 1];
    println!(
        "best epoch {} (macro-F1 {:.3}), {} steps, manifest {}",
        summary.outcome.best_epoch, best.val_macro_f1, summary.outcome.total_steps, summary.manifest_hash
    );
    Ok(ExitCode::SUCCESS)
}

fn load_manifest(path: &Path) -> Result<RunManifest> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("digests").is_some() {
        RunManifest::load(path)
    } else {
        Ok(RunConfig::load(path)?.prepare()?.manifest)
    }
}

fn cmd_predict(a: PredictArgs) -> Result<ExitCode> {
    let manifest = load_manifest(&a.config)?;
    let checkpoint = a.checkpoint.unwrap_or_else(|| {
        a.config.parent().unwrap_or(Path::new(".")).join(CHECKPOINT_FILE)
    });
    let name = a.name.unwrap_or_else(|| {
        a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let set = predict_split(&manifest, &checkpoint, &a.manifest, &name)?;
    set.write(&a.out, &manifest.config.load_vocab()?)?;
    println!("{} predictions -> {}", set.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn resolve_vocab(explicit: Option<&Path>, manifest: &Path) -> Result<LabelVocabulary> {
    if let Some(p) = explicit {
        return LabelVocabulary::load(p);
    }
    let sibling = manifest.parent().unwrap_or(Path::new(".")).join("vocab.json");
    if sibling.is_file() {
        LabelVocabulary::load(sibling)
    } else {
        Ok(LabelVocabulary::default())
    }
}

fn reference_map(manifest: &Path, vocab: &LabelVocabulary) -> Result<BTreeMap<String, usize>> {
    Ok(reference_labels(manifest, vocab)?.into_iter().collect())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let vocab = resolve_vocab(a.vocab.as_deref(), &a.manifest)?;
    let refs = reference_map(&a.manifest, &vocab)?;
    let set = PredictionSet::read(&a.predictions, &vocab)?;
    if set.is_empty() {
        return Err(Error::config(format!("{} contains no predictions", a.predictions.display())));
    }
    let m = evaluate(&set, &refs, vocab.num_classes())?;
    println!("{:>8}  {:>8}  {:>8}  {:>8}", "macro-F1", "micro-F1", "P", "R");
    println!(
        "{:>8.3}  {:>8.3}  {:>8.3}  {:>8.3}",
        m.macro_f1, m.micro_f1, m.macro_precision, m.macro_recall
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_ensemble(a: EnsembleArgs) -> Result<ExitCode> {
    let vocab = resolve_vocab(a.vocab.as_deref(), &a.manifest)?;
    let refs = reference_map(&a.manifest, &vocab)?;
    let dir = &a.predictions;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.len() < MIN_ENSEMBLE {
        return Err(Error::config(format!(
            "{} holds {} prediction files; ensemble search needs at least {MIN_ENSEMBLE}",
            dir.display(),
            files.len()
        )));
    }
    let sets = files
        .iter()
        .map(|p| PredictionSet::read(p, &vocab))
        .collect::<Result<Vec<_>>>()?;
    let subsets = balanced_subsets(&refs, vocab.num_classes(), a.subsets, a.seed)?;
    let result = ensemble_search(&sets, &a.best_model, &refs, &subsets, vocab.num_classes())?;

    println!("{:>4}  {:>8}  {:>6}  members", "rank", "macro-F1", "std");
    for (i, row) in result.table.iter().enumerate() {
        println!(
            "{:>4}  {:>8.3}  {:>6.3}  {}",
            i + 1,
            row.mean_macro_f1,
            row.std,
            row.members.join(",")
        );
    }
    println!("selected: {} (tiebreaker {})", result.spec.members.join(","), result.spec.tiebreaker);
    if let Some(out) = &a.out {
        let mut json = serde_json::to_string_pretty(&result).expect("serializable result");
        json.push('\n');
        std::fs::write(out, json).map_err(|e| Error::io(out, e))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradArgs) -> Result<ExitCode> {
    let cases = if a.layer == "all" {
        gradsuite::cases()
    } else {
        let case = gradsuite::find(&a.layer).ok_or_else(|| {
            let names: Vec<_> = gradsuite::cases().iter().map(|c| c.name).collect();
            Error::config(format!("unknown gradcheck case {:?}; known: all, {}", a.layer, names.join(", ")))
        })?;
        vec![case]
    };
    let cfg = GradCheckConfig {
        inject_fault: a.inject_fault,
        ..Default::default()
    };
    let mut all_passed = true;
    println!("{:<28} {:>12}  result  worst", "case", "max rel err");
    for case in &cases {
        let s = gradsuite::run_case(case, a.seeds, &cfg);
        let verdict = if s.passed() { "PASS" } else { "FAIL" };
        all_passed &= s.passed();
        let detail = s
            .failure
            .clone()
            .unwrap_or_else(|| format!("{} (seed {})", s.worst_param, s.worst_seed));
        println!("{:<28} {:>12.3e}  {verdict}    {detail}", s.name, s.max_rel_err);
    }
    println!(
        "{} cases x {} seeds, tolerance {GRADCHECK_TOL:e}: {}",
        cases.len(),
        a.seeds,
        if all_passed { "all passed" } else { "FAILED" }
    );
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

//! The `cacheloom` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 contract or input violation, 3 search
//! or training failure (including incomplete eviction-set coverage).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classify::{roc_auc, Dataset, Decision, MetricsReport, Model};
use crate::error::{Error, Result};
use crate::evset::EvictionCatalog;
use crate::experiment::{
    capture_to_dir, featurize_traces, manifest_from_text, manifest_to_text, profiles_sweep, read_labels,
    run_pipeline, sweep_to_csv, train_model, verification_text, write_labels, ClassifierKind, ExperimentConfig,
    Session,
};
use crate::features::{read_feature_csv, write_feature_csv, FeatureKind, FeatureVector};
use crate::profiler::Trace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONTRACT: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cacheloom", version, about = "LLC Prime+Probe profiling and classification on a simulated cache")]
pub struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find and deduplicate eviction sets, then verify them against the oracle.
    FindEvsets(FindArgs),
    /// Capture seeded traces of one victim class.
    Capture(CaptureArgs),
    /// Turn captured traces into a feature CSV.
    Featurize(FeaturizeArgs),
    /// Fit a classifier on a feature CSV.
    Train(TrainArgs),
    /// Accuracy, confusion matrix and optional unknown-class rates.
    Eval(EvalArgs),
    /// ROC curves and AUC.
    Roc(RocArgs),
    /// Full pipeline from discovery to evaluation.
    Run,
    /// Print the default experiment configuration.
    DefaultConfig,
}

#[derive(Debug, Args)]
pub struct FindArgs {
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub tau_jump: Option<f64>,
    #[arg(long)]
    pub r: Option<u32>,
    /// Output directory (default: the configured output directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptureArgs {
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub mode: Option<String>,
    /// Catalog file (default: `<output_dir>/catalog.txt`).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Directory for traces and `manifest.tsv` (default: `<output_dir>/traces/<label>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Re-capture every entry of an existing manifest.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Also write a CSV mirror of each trace.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Capture manifests; trace paths are relative to each manifest.
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long)]
    pub series_len: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub classifier: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Report UNKNOWN-aware rates at this confidence threshold. Labels the
    /// model does not know count as unknown-class inputs.
    #[arg(long)]
    pub unknown_threshold: Option<f64>,
    /// Comma-separated profiles-per-class sizes; retrains on `--train-features`.
    #[arg(long, value_delimiter = ',')]
    pub profiles_sweep: Option<Vec<usize>>,
    #[arg(long)]
    pub train_features: Option<PathBuf>,
    #[arg(long)]
    pub classifier: Option<String>,
    /// Write the sweep CSV here instead of stdout.
    #[arg(long)]
    pub sweep_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::SearchFailed { .. } | Error::Divergence { .. } => EXIT_FAILURE,
        _ => EXIT_CONTRACT,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Feature CSVs do not record their kind; the configured one is assumed.
fn read_features(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<FeatureVector>> {
    read_feature_csv(path, cfg.feature_kind()?)
}

fn load_eval_data(cfg: &ExperimentConfig, model_path: &Path, features: &Path) -> Result<(Model, Vec<String>, Vec<FeatureVector>)> {
    let model = Model::read(model_path)?;
    let labels = read_labels(model_path)?;
    if labels.len() != model.num_classes() {
        return Err(Error::format(
            "labels sidecar",
            format!("{} labels for a {}-class model", labels.len(), model.num_classes()),
        ));
    }
    Ok((model, labels, read_features(cfg, features)?))
}

fn find_evsets(cfg: &mut ExperimentConfig, args: &FindArgs) -> Result<i32> {
    if let Some(p) = &args.policy {
        cfg.cache.policy = Some(p.clone());
    }
    if args.tau_jump.is_some() {
        cfg.search.tau_jump = args.tau_jump;
    }
    if args.r.is_some() {
        cfg.search.r = args.r;
    }
    cfg.validate()?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out)?;
    let (session, report) = Session::discover(cfg)?;
    session.catalog.save(out.join("catalog.txt"))?;
    let text = verification_text(&report, &session.catalog);
    fs::write(out.join("verification.txt"), &text)?;
    print!("{text}");
    if report.coverage_fraction < 1.0 {
        eprintln!("error: catalog does not cover every cache set");
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn capture_cmd(cfg: &ExperimentConfig, args: &CaptureArgs) -> Result<i32> {
    let catalog_path = args.catalog.clone().unwrap_or_else(|| cfg.output_dir.join("catalog.txt"));
    let session = Session::with_catalog(cfg, EvictionCatalog::load(&catalog_path)?)?;
    let (label, mode, seeds) = match &args.replay {
        Some(path) => {
            let entries = manifest_from_text(&fs::read_to_string(path)?)?;
            let first = entries.first().ok_or_else(|| Error::Contract("replay manifest is empty".into()))?;
            if entries.iter().any(|e| e.label != first.label || e.mode != first.mode) {
                return Err(Error::Contract("replay manifest mixes labels or modes".into()));
            }
            (first.label.clone(), first.mode, Some(entries.iter().map(|e| e.seed).collect::<Vec<_>>()))
        }
        None => {
            let label = args
                .label
                .clone()
                .ok_or_else(|| Error::Contract("capture needs --label or --replay".into()))?;
            let mode = match &args.mode {
                Some(m) => m.parse()?,
                None => cfg.capture_mode()?,
            };
            (label, mode, None)
        }
    };
    let dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.join("traces").join(&label));
    let entries = capture_to_dir(&session, cfg, &label, args.count, mode, &dir, seeds.as_deref())?;
    if args.csv {
        for e in &entries {
            let trace = Trace::read(dir.join(&e.file))?;
            fs::write(dir.join(&e.file).with_extension("csv"), trace.to_csv())?;
        }
    }
    fs::write(dir.join("manifest.tsv"), manifest_to_text(&entries))?;
    println!("{} traces in {}", entries.len(), dir.display());
    Ok(EXIT_OK)
}

fn featurize_cmd(cfg: &ExperimentConfig, args: &FeaturizeArgs) -> Result<i32> {
    let kind: FeatureKind = match &args.feature {
        Some(k) => k.parse()?,
        None => cfg.feature_kind()?,
    };
    let mut params = cfg.feature_params();
    if args.series_len.is_some() {
        params.series_len = args.series_len;
    }
    let mut traces = Vec::new();
    for manifest in &args.manifests {
        let base = manifest.parent().unwrap_or(Path::new("."));
        for e in manifest_from_text(&fs::read_to_string(manifest)?)? {
            traces.push((e.label, Trace::read(base.join(&e.file))?));
        }
    }
    let (vectors, params) = featurize_traces(&traces, kind, &params)?;
    write_feature_csv(&args.out, &vectors)?;
    match params.series_len {
        Some(l) if kind == FeatureKind::Virtual => println!("{} {kind} vectors (L = {l})", vectors.len()),
        _ => println!("{} {kind} vectors", vectors.len()),
    }
    Ok(EXIT_OK)
}

fn classifier(cfg: &ExperimentConfig, flag: &Option<String>) -> Result<ClassifierKind> {
    match flag {
        Some(k) => k.parse(),
        None => cfg.classifier_kind(),
    }
}

fn train_cmd(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<i32> {
    let kind = classifier(cfg, &args.classifier)?;
    let data = Dataset::from_vectors(&read_features(cfg, &args.features)?)?;
    let model = train_model(cfg, kind, &data)?;
    model.write(&args.out)?;
    write_labels(&args.out, &data.class_names)?;
    let s = &model.summary;
    let validation = if s.val_loss.is_nan() {
        "no validation split".to_owned()
    } else {
        format!("validation loss {:.4}, accuracy {:.4}", s.val_loss, s.val_accuracy)
    };
    println!(
        "trained on {} examples, {} classes: train loss {:.4}, accuracy {:.4}; {validation}",
        data.len(),
        data.num_classes(),
        s.train_loss,
        s.train_accuracy
    );
    Ok(EXIT_OK)
}

fn eval_cmd(cfg: &ExperimentConfig, args: &EvalArgs) -> Result<i32> {
    let (model, labels, vectors) = load_eval_data(cfg, &args.model, &args.features)?;
    if let Some(sizes) = &args.profiles_sweep {
        let train_path = args
            .train_features
            .as_ref()
            .ok_or_else(|| Error::Contract("--profiles-sweep needs --train-features".into()))?;
        let train = Dataset::with_classes(&read_features(cfg, train_path)?, &labels)?;
        let test = Dataset::with_classes(&vectors, &labels)?;
        let rows = profiles_sweep(cfg, classifier(cfg, &args.classifier)?, &train, &test, sizes)?;
        let csv = sweep_to_csv(&rows);
        match &args.sweep_out {
            Some(p) => fs::write(p, csv)?,
            None => print!("{csv}"),
        }
        return Ok(EXIT_OK);
    }
    let (known, unknown): (Vec<_>, Vec<_>) = vectors
        .into_iter()
        .partition(|v| v.label.as_ref().is_some_and(|l| labels.contains(l)));
    if let Some(threshold) = args.unknown_threshold {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Contract(format!("threshold {threshold} outside [0, 1]")));
        }
        let known_set = Dataset::with_classes(&known, &labels)?;
        let mut false_unknown = 0;
        let mut wrong = 0;
        for (x, &y) in known_set.features.iter().zip(&known_set.labels) {
            match crate::classify::decide(&model.predict(x)?, threshold) {
                Decision::Unknown => false_unknown += 1,
                Decision::Known(p) if p != y => wrong += 1,
                Decision::Known(_) => {}
            }
        }
        let mut accepted_unknown = 0;
        for v in &unknown {
            if crate::classify::decide(&model.predict(&v.values)?, threshold) != Decision::Unknown {
                accepted_unknown += 1;
            }
        }
        let kn = known_set.len().max(1) as f64;
        println!("threshold            {threshold:.4}");
        println!("known inputs         {}", known_set.len());
        println!("unknown inputs       {}", unknown.len());
        println!("false unknown (FN)   {:.4}", false_unknown as f64 / kn);
        println!("misclassified known  {:.4}", wrong as f64 / kn);
        println!(
            "accepted unknown (FP) {:.4}",
            accepted_unknown as f64 / unknown.len().max(1) as f64
        );
        println!();
    } else if !unknown.is_empty() {
        return Err(Error::Contract(format!(
            "{} feature rows carry labels the model does not know; pass --unknown-threshold to score them",
            unknown.len()
        )));
    }
    let data = Dataset::with_classes(&known, &labels)?;
    print!("{}", MetricsReport::compute(&model, &data)?.to_text());
    Ok(EXIT_OK)
}

fn roc_cmd(cfg: &ExperimentConfig, args: &RocArgs) -> Result<i32> {
    let (model, labels, vectors) = load_eval_data(cfg, &args.model, &args.features)?;
    let data = Dataset::with_classes(&vectors, &labels)?;
    let scores: Vec<Vec<f64>> = model
        .predict_all(&data.features)?
        .into_iter()
        .map(|p| p.probabilities)
        .collect();
    let roc = roc_auc(&scores, &data.labels)?;
    fs::write(&args.out, roc.to_csv(&labels))?;
    println!("AUC {:.6}", roc.auc);
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", ExperimentConfig::default().to_toml());
        return Ok(EXIT_OK);
    }
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::FindEvsets(a) => find_evsets(&mut cfg, a),
        Command::Capture(a) => capture_cmd(&cfg, a),
        Command::Featurize(a) => featurize_cmd(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a),
        Command::Roc(a) => roc_cmd(&cfg, a),
        Command::Run => {
            let report = run_pipeline(&cfg)?;
            println!(
                "coverage {:.4}, accuracy {:.4}, macro AUC {:.4}; artifacts in {}",
                report.verification.coverage_fraction,
                report.metrics.accuracy,
                report.roc.auc,
                report.output_dir.display()
            );
            if report.verification.coverage_fraction < 1.0 {
                return Ok(EXIT_FAILURE);
            }
            Ok(EXIT_OK)
        }
        Command::DefaultConfig => unreachable!(),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

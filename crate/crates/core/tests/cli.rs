//! Drives the `cacheloom` binary through its subcommands on the desk cache.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cacheloom::evset::{verify_catalog, EvictionCatalog};
use cacheloom::experiment::{manifest_from_text, ExperimentConfig, Session};
use cacheloom::cache::Oracle;

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

const CONFIG: &str = r#"
seed = 11
output_dir = "OUT"

[capture]
n_t = 512

[features]
kind = "virtual_fft"
n_fft = 4

[classifier]
kind = "softmax"
softmax_epochs = 200
"#;

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("experiment.toml");
        fs::write(&config, CONFIG.replace("OUT", root.join("out").to_str().unwrap())).unwrap();
        Workspace { _dir: dir, root, config }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cacheloom"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{args:?}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn arg(&self, rel: &str) -> String {
        self.path(rel).to_str().unwrap().to_owned()
    }
}

fn config(ws: &Workspace) -> ExperimentConfig {
    ExperimentConfig::load(&ws.config).unwrap()
}

fn covered_sets(ws: &Workspace, catalog: &Path) -> Vec<usize> {
    let cfg = config(ws);
    let session = Session::with_catalog(&cfg, EvictionCatalog::load(catalog).unwrap()).unwrap();
    let cache = cfg.cache_config().unwrap();
    let report = verify_catalog(&session.catalog, &Oracle::grant(&cache, &session.pool)).unwrap();
    assert_eq!(report.coverage_fraction, 1.0);
    let mut sets: Vec<usize> = report.targets.clone();
    sets.sort_unstable();
    sets
}

#[test]
fn full_command_chain() {
    let ws = Workspace::new();
    let report = ws.ok(&["find-evsets"]);
    assert!(report.contains("coverage"), "{report}");
    assert!(ws.path("out/catalog.txt").exists());

    for label in ["app00", "app03", "app06"] {
        ws.ok(&["capture", "--label", label, "--count", "6", "--out", &ws.arg(&format!("traces/{label}"))]);
    }
    let manifest = fs::read_to_string(ws.path("traces/app00/manifest.tsv")).unwrap();
    let entries = manifest_from_text(&manifest).unwrap();
    assert_eq!(entries.len(), 6);
    let mut seeds: Vec<u64> = entries.iter().map(|e| e.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 6);

    let manifests: Vec<String> = ["app00", "app03", "app06"]
        .iter()
        .flat_map(|l| ["--manifest".to_owned(), ws.arg(&format!("traces/{l}/manifest.tsv"))])
        .collect();
    let mut featurize: Vec<&str> = vec!["featurize"];
    featurize.extend(manifests.iter().map(String::as_str));
    let csv = ws.arg("features.csv");
    let csv_again = ws.arg("features-again.csv");
    ws.ok(&[&featurize[..], &["--out", &csv]].concat());
    ws.ok(&[&featurize[..], &["--feature", "virtual-fft", "--out", &csv_again]].concat());
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&csv_again).unwrap());

    let model = ws.arg("model.cmdl");
    ws.ok(&["train", "--features", &csv, "--out", &model]);
    ws.ok(&["train", "--features", &csv, "--out", &ws.arg("model-again.cmdl")]);
    assert_eq!(fs::read(&model).unwrap(), fs::read(ws.path("model-again.cmdl")).unwrap());
    assert!(ws.path("model.cmdl.labels").exists());

    let eval = ws.ok(&["eval", "--model", &model, "--features", &csv]);
    assert!(eval.contains("accuracy   1.0000"), "{eval}");
    assert!(eval.contains("confusion"), "{eval}");

    let rates = ws.ok(&["eval", "--model", &model, "--features", &csv, "--unknown-threshold", "0"]);
    assert!(rates.contains("false unknown (FN)   0.0000"), "{rates}");

    let sweep = ws.ok(&[
        "eval",
        "--model",
        &model,
        "--features",
        &csv,
        "--train-features",
        &csv,
        "--profiles-sweep",
        "2,4,5",
    ]);
    let rows: Vec<&str> = sweep.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 1 + 3, "{sweep}");

    let roc = ws.arg("roc.csv");
    let auc = ws.ok(&["roc", "--model", &model, "--features", &csv, "--out", &roc]);
    assert!(auc.starts_with("AUC 1.000000"), "{auc}");
    assert!(fs::read_to_string(&roc).unwrap().starts_with("curve,fpr,tpr\n"));
}

#[test]
fn capture_edge_cases_and_replay() {
    let ws = Workspace::new();
    ws.ok(&["find-evsets"]);

    ws.ok(&["capture", "--label", "app02", "--count", "0", "--out", &ws.arg("empty")]);
    let empty = fs::read_to_string(ws.path("empty/manifest.tsv")).unwrap();
    assert!(manifest_from_text(&empty).unwrap().is_empty());

    ws.ok(&["capture", "--label", "app02", "--count", "3", "--csv", "--out", &ws.arg("first")]);
    ws.ok(&["capture", "--replay", &ws.arg("first/manifest.tsv"), "--out", &ws.arg("second")]);
    let first = manifest_from_text(&fs::read_to_string(ws.path("first/manifest.tsv")).unwrap()).unwrap();
    for e in &first {
        let a = fs::read(ws.path("first").join(&e.file)).unwrap();
        let b = fs::read(ws.path("second").join(&e.file)).unwrap();
        assert_eq!(a, b, "{}", e.file);
        assert!(ws.path("first").join(&e.file).with_extension("csv").exists());
    }

    let out = ws.run(&["capture", "--label", "no-such-app", "--out", &ws.arg("bad")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn find_evsets_exit_codes_and_policies() {
    let ws = Workspace::new();
    let out = ws.run(&["find-evsets", "--tau-jump", "1e12", "--out", &ws.arg("tiny")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    ws.ok(&["find-evsets", "--policy", "lru", "--out", &ws.arg("lru")]);
    ws.ok(&["find-evsets", "--policy", "random", "--out", &ws.arg("random")]);
    assert_eq!(
        covered_sets(&ws, &ws.path("lru/catalog.txt")),
        covered_sets(&ws, &ws.path("random/catalog.txt"))
    );
}

#[test]
fn usage_and_format_errors() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["capture", "--count", "many"]).status.code(), Some(1));
    assert_eq!(ws.run(&["no-such-command"]).status.code(), Some(1));

    fs::write(ws.path("junk.cmdl"), b"CMDL\x09").unwrap();
    fs::write(ws.path("junk.cmdl.labels"), "a\n").unwrap();
    fs::write(ws.path("f.csv"), "label,f0\na,1\n").unwrap();
    let out = ws.run(&["eval", "--model", &ws.arg("junk.cmdl"), "--features", &ws.arg("f.csv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let bad = ws.path("bad.toml");
    fs::write(&bad, "[capture]\nn_t = 7\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cacheloom"))
        .args(["--config", bad.to_str().unwrap(), "find-evsets"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

//! Library-level pipeline properties that need real captured data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cacheloom::classify::{holdout_split, train_cnn, CnnConfig, Dataset};
use cacheloom::experiment::{generate_features, run_pipeline, ExperimentConfig, Session};
use cacheloom::features::{FeatureKind, FeatureVector};
use cacheloom::profiler::CaptureMode;

fn fft_vectors(cfg: &ExperimentConfig, per_class: usize) -> Vec<FeatureVector> {
    let (session, _) = Session::discover(cfg).unwrap();
    let kinds = [(FeatureKind::VirtualFft, cfg.feature_params())];
    generate_features(&session, cfg, &cfg.known_labels(), per_class, CaptureMode::Virtual, &kinds)
        .unwrap()
        .remove(0)
}

fn small_cnn(classes: usize) -> CnnConfig {
    CnnConfig {
        conv_filters: [8, 4],
        dense_units: 32,
        epochs: 60,
        seed: 3,
        ..CnnConfig::desk(classes)
    }
}

#[test]
fn permuted_virtual_sets_train_as_well() {
    let cfg = ExperimentConfig {
        seed: 21,
        ..ExperimentConfig::default()
    };
    let vectors = fft_vectors(&cfg, 30);
    let block = cfg.features.n_fft;
    let groups = vectors[0].len() / block;
    let mut order: Vec<usize> = (0..groups).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    let permuted: Vec<FeatureVector> = vectors
        .iter()
        .map(|v| FeatureVector {
            values: order.iter().flat_map(|&g| v.values[g * block..(g + 1) * block].to_vec()).collect(),
            ..v.clone()
        })
        .collect();

    let accuracy = |vs: &[FeatureVector]| {
        let data = Dataset::from_vectors(vs).unwrap();
        let (train, test) = holdout_split(&data, 0.8, 5).unwrap();
        train_cnn(&train, &small_cnn(data.num_classes())).unwrap().evaluate(&test).unwrap().1
    };
    let plain = accuracy(&vectors);
    let shuffled = accuracy(&permuted);
    assert!(plain >= 0.9, "{plain}");
    assert!((plain - shuffled).abs() <= 0.02 + 1e-12, "{plain} vs {shuffled}");
}

#[test]
fn seeded_single_thread_training_is_reproducible() {
    let cfg = ExperimentConfig {
        seed: 22,
        ..ExperimentConfig::default()
    };
    let data = Dataset::from_vectors(&fft_vectors(&cfg, 6)).unwrap();
    let c = CnnConfig {
        epochs: 5,
        ..small_cnn(data.num_classes())
    };
    let a = train_cnn(&data, &c).unwrap();
    let b = train_cnn(&data, &c).unwrap();
    assert_eq!(a.network, b.network);
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn pipeline_writes_replayable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        seed: 23,
        output_dir: dir.path().join("run"),
        ..ExperimentConfig::default()
    };
    cfg.capture.n_t = 512;
    cfg.features.n_fft = 4;
    cfg.roster.classes = 4;
    cfg.roster.unknown = vec!["app03".into()];
    cfg.roster.captures_per_class = 8;
    cfg.roster.train_fraction = 0.75;
    cfg.classifier.kind = "softmax".into();
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.verification.coverage_fraction, 1.0);
    for file in [
        "experiment.toml",
        "catalog.txt",
        "verification.txt",
        "manifest.tsv",
        "features.csv",
        "model.cmdl",
        "model.cmdl.labels",
        "metrics.txt",
        "roc.csv",
    ] {
        assert!(report.output_dir.join(file).exists(), "{file} missing");
    }
    let replayed = ExperimentConfig::load(report.output_dir.join("experiment.toml")).unwrap();
    assert_eq!(replayed, cfg);
    let labels = std::fs::read_to_string(report.output_dir.join("model.cmdl.labels")).unwrap();
    assert!(!labels.contains("app03"));
}

//! ROC analysis of a softmax baseline on virtual FFT features: per-class
//! and macro AUC, plus the curve points as CSV.
//!
//!     cargo run --release --example roc -- [captures_per_class] [csv_path]

use std::path::PathBuf;

use cacheloom::classify::{holdout_split, roc_auc, train_softmax, Dataset};
use cacheloom::experiment::{generate_features, ExperimentConfig, Session};
use cacheloom::features::FeatureKind;
use cacheloom::profiler::CaptureMode;

fn main() -> cacheloom::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cacheloom-roc.csv"));
    let mut cfg = ExperimentConfig::default();
    // weak features make for a curve worth looking at
    cfg.capture.n_t = 256;
    cfg.features.n_fft = 1;
    let (session, _) = Session::discover(&cfg)?;
    let kinds = [(FeatureKind::VirtualFft, cfg.feature_params())];
    let vectors = generate_features(&session, &cfg, &cfg.known_labels(), per_class, CaptureMode::Virtual, &kinds)?.remove(0);
    let data = Dataset::from_vectors(&vectors)?;
    let (train, test) = holdout_split(&data, 0.7, cfg.seed)?;
    let model = train_softmax(&train, &cfg.softmax_hyper())?;

    let scores: Vec<Vec<f64>> = model.predict_all(&test.features)?.into_iter().map(|p| p.probabilities).collect();
    let roc = roc_auc(&scores, &test.labels)?;
    for (name, auc) in test.class_names.iter().zip(&roc.per_class_auc) {
        match auc {
            Some(a) => println!("{name}: AUC {a:.3}"),
            None => println!("{name}: no positives or no negatives in the test split"),
        }
    }
    println!("macro AUC {:.3}, accuracy {:.3}", roc.auc, model.evaluate(&test)?.1);
    std::fs::write(&path, roc.to_csv(&test.class_names))?;
    println!("curve written to {}", path.display());
    Ok(())
}

//! Trains the desk-size CNN on virtual FFT features, prints the learning
//! curve, and checks the saved model reloads to identical predictions.
//!
//!     cargo run --release --example train_cnn -- [captures_per_class] [model_path]

use std::path::PathBuf;

use cacheloom::classify::{holdout_split, train_cnn, Dataset, MetricsReport, Model};
use cacheloom::experiment::{generate_features, ExperimentConfig, Session};
use cacheloom::features::FeatureKind;
use cacheloom::profiler::CaptureMode;

fn main() -> cacheloom::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let path = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cacheloom-example.cmdl"));
    let cfg = ExperimentConfig::default();
    let (session, _) = Session::discover(&cfg)?;
    let kinds = [(FeatureKind::VirtualFft, cfg.feature_params())];
    let vectors = generate_features(&session, &cfg, &cfg.known_labels(), per_class, CaptureMode::Virtual, &kinds)?.remove(0);
    let data = Dataset::from_vectors(&vectors)?;
    let (train, test) = holdout_split(&data, cfg.roster.train_fraction, cfg.seed)?;

    let model = train_cnn(&train, &cfg.cnn_config(train.num_classes()))?;
    for e in model.history.iter().step_by(5) {
        let val = match (e.val_loss, e.val_accuracy) {
            (Some(l), Some(a)) => format!("val loss {l:.4} acc {a:.3}"),
            _ => "no validation".into(),
        };
        println!("epoch {:>3}: train loss {:.4} acc {:.3} | {val}", e.epoch, e.train_loss, e.train_accuracy);
    }
    print!("{}", MetricsReport::compute(&model, &test)?.to_text());

    model.write(&path)?;
    let back = Model::read(&path)?;
    let same = back.predict_all(&test.features)? == model.predict_all(&test.features)?;
    println!("saved {} ({} bytes), reload identical: {same}", path.display(), std::fs::metadata(&path)?.len());
    Ok(())
}

//! Unknown-class rejection: train on seven roster classes, calibrate a
//! confidence threshold on held-back known profiles, then measure how many
//! profiles of the three unseen classes are labelled UNKNOWN.
//!
//!     cargo run --release --example unknown_rejection -- [captures_per_class] [seed] [max_false_unknown]

use std::time::Instant;

use cacheloom::classify::{holdout_split, threshold_for_false_unknown, train_cnn, unknown_report, Dataset, APP_OPERATING_POINT};
use cacheloom::experiment::{generate_features, ExperimentConfig, Session};
use cacheloom::features::FeatureKind;
use cacheloom::profiler::CaptureMode;

fn main() -> cacheloom::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let max_false_unknown: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let mut cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    cfg.roster.unknown = vec!["app07".into(), "app08".into(), "app09".into()];
    let known = cfg.known_labels();
    let params = cfg.feature_params();

    let (session, _) = Session::discover(&cfg)?;
    let start = Instant::now();
    let kinds = [(FeatureKind::VirtualFft, params.clone())];
    let known_vectors = generate_features(&session, &cfg, &known, per_class, CaptureMode::Virtual, &kinds)?.remove(0);
    let unknown_vectors =
        generate_features(&session, &cfg, &cfg.roster.unknown, per_class, CaptureMode::Virtual, &kinds)?.remove(0);
    println!("captured {} known + {} unknown profiles ({:.1?})", known_vectors.len(), unknown_vectors.len(), start.elapsed());

    let data = Dataset::from_vectors(&known_vectors)?;
    let (train, test) = holdout_split(&data, 0.9, seed ^ 0x5eed)?;
    let (fit, calibration) = holdout_split(&train, 0.9, seed ^ 0xca1)?;

    let start = Instant::now();
    let model = train_cnn(&fit, &cfg.cnn_config(fit.num_classes()))?;
    println!("cnn: known test accuracy {:.3} ({:.1?})", model.evaluate(&test)?.1, start.elapsed());

    let confidences: Vec<f64> = model.predict_all(&calibration.features)?.iter().map(|p| p.confidence).collect();
    let threshold = threshold_for_false_unknown(&confidences, max_false_unknown)?;
    let unknown: Vec<Vec<f64>> = unknown_vectors.into_iter().map(|v| v.values).collect();
    for (name, t) in [("calibrated", threshold), ("app preset", APP_OPERATING_POINT.threshold)] {
        let r = unknown_report(&model, &test, &unknown, t)?;
        println!(
            "{name:<11} threshold {:.4}: unknown recall {:.3}, false unknown {:.3}, misclassified {:.3}",
            r.threshold, r.unknown_recall, r.false_unknown_rate, r.misclassified_rate
        );
    }
    Ok(())
}

//! Synthetic end-to-end experiment: discover eviction sets, profile ten
//! victim classes, and compare feature constructions and classifiers.
//!
//!     cargo run --release --example end_to_end -- [captures_per_class] [seed]

use std::time::Instant;

use cacheloom::classify::{holdout_split, train_cnn, train_softmax, Dataset};
use cacheloom::experiment::{generate_features, ExperimentConfig, Session};
use cacheloom::features::{FeatureKind, FeatureParams};
use cacheloom::profiler::CaptureMode;

fn main() -> cacheloom::Result<()> {
    let mut args = std::env::args().skip(1);
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    let labels = cfg.known_labels();
    let params = cfg.feature_params();

    let start = Instant::now();
    let (session, report) = Session::discover(&cfg)?;
    println!(
        "catalog: {} virtual sets, coverage {:.3} ({:.1?})",
        session.catalog.unique_sets.len(),
        report.coverage_fraction,
        start.elapsed()
    );

    let start = Instant::now();
    let virt = generate_features(
        &session,
        &cfg,
        &labels,
        per_class,
        CaptureMode::Virtual,
        &[(FeatureKind::VirtualFft, params.clone()), (FeatureKind::Virtual, params.clone())],
    )?;
    let phys = generate_features(
        &session,
        &cfg,
        &labels,
        per_class,
        CaptureMode::Physical,
        &[(FeatureKind::Physical, FeatureParams::default())],
    )?;
    println!("captured {} profiles per mode ({:.1?})", virt[0].len(), start.elapsed());

    let split_seed = seed ^ 0x5eed;
    for (name, vectors) in [("virtual_fft", &virt[0]), ("virtual", &virt[1]), ("physical", &phys[0])] {
        let data = Dataset::from_vectors(vectors)?;
        let (train, test) = holdout_split(&data, 0.9, split_seed)?;
        let start = Instant::now();
        let soft = train_softmax(&train, &cfg.softmax_hyper())?;
        println!(
            "{name:<12} len {:>6}  softmax {:.3} ({:.1?})",
            data.feature_len(),
            soft.evaluate(&test)?.1,
            start.elapsed()
        );
        if name == "virtual_fft" {
            let start = Instant::now();
            let cnn = train_cnn(&train, &cfg.cnn_config(data.num_classes()))?;
            println!(
                "{name:<12}             cnn     {:.3} ({:.1?}, {} epochs)",
                cnn.evaluate(&test)?.1,
                start.elapsed(),
                cnn.history.len()
            );
        }
    }
    Ok(())
}

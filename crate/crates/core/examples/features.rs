//! Walks one captured row through outlier removal, binarization and burst
//! compression, then builds every feature vector kind from the traces.
//!
//!     cargo run --release --example features -- [class 0-9]

use cacheloom::experiment::{capture_seed, victim_for_capture, ExperimentConfig, Session};
use cacheloom::features::{binarize, build_feature_vector, compress_bursts, remove_outliers, FeatureKind};
use cacheloom::profiler::CaptureMode;

fn main() -> cacheloom::Result<()> {
    let class: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let cfg = ExperimentConfig::default();
    let params = cfg.feature_params();
    let (session, _) = Session::discover(&cfg)?;
    let roster = cfg.roster()?;
    let seed = capture_seed(cfg.seed, class, 0);
    let victim = victim_for_capture(&roster[class], seed);
    let virt = session.capture(&cfg, &victim, seed, CaptureMode::Virtual)?;
    let phys = session.capture(&cfg, &victim, seed, CaptureMode::Physical)?;

    let row = (0..virt.rows)
        .max_by_key(|&r| virt.row(r).iter().map(|&v| u64::from(v)).sum::<u64>())
        .unwrap_or(0);
    let cleaned = remove_outliers(&virt.row_f64(row), params.tau_o)?;
    let bits = binarize(&cleaned, params.tau_h);
    let bursts = compress_bursts(&bits);
    let show = |b: &[u8]| b.iter().take(48).map(|v| char::from(b'0' + v)).collect::<String>();
    println!("busiest slot {:#08x}", virt.slot_ids[row]);
    println!("  raw ns     {:?}", &virt.row(row)[..12]);
    println!("  binarized  {} ({} samples)", show(&bits), bits.len());
    println!("  compressed {} ({} samples)", show(&bursts), bursts.len());

    for (trace, kind) in [
        (&phys, FeatureKind::Physical),
        (&virt, FeatureKind::VirtualCount),
        (&virt, FeatureKind::VirtualFft),
        (&virt, FeatureKind::Virtual),
    ] {
        let fv = build_feature_vector(trace, kind, &params)?;
        let nonzero = fv.values.iter().filter(|&&v| v != 0.0).count();
        println!("{kind:<14} length {:>6}, {nonzero} non-zero", fv.len());
    }
    Ok(())
}

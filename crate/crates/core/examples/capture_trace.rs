//! Captures one victim in both attack views and writes the traces as CTRC
//! and CSV files.
//!
//!     cargo run --release --example capture_trace -- [class 0-9] [out_dir]

use std::path::PathBuf;

use cacheloom::experiment::{capture_seed, victim_for_capture, ExperimentConfig, Session};
use cacheloom::profiler::{CaptureMode, Trace};

fn main() -> cacheloom::Result<()> {
    let mut args = std::env::args().skip(1);
    let class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let out = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let cfg = ExperimentConfig::default();
    let (session, report) = Session::discover(&cfg)?;
    println!("catalog coverage {:.3}", report.coverage_fraction);

    let roster = cfg.roster()?;
    let spec = roster.get(class).ok_or_else(|| cacheloom::Error::Config(format!("class {class} not in roster")))?;
    let seed = capture_seed(cfg.seed, class, 0);
    let victim = victim_for_capture(spec, seed);
    for mode in [CaptureMode::Virtual, CaptureMode::Physical] {
        let trace = session.capture(&cfg, &victim, seed, mode)?;
        let base = out.join(format!("{}-{mode}", spec.class_label));
        trace.write(base.with_extension("ctrc"))?;
        std::fs::write(base.with_extension("csv"), trace.to_csv())?;
        assert_eq!(Trace::read(base.with_extension("ctrc"))?, trace);
        println!("{mode:<8} {} rows x {} samples -> {}.ctrc", trace.rows, trace.cols, base.display());
        let mut busiest: Vec<(f64, u32)> = (0..trace.rows)
            .map(|r| (trace.row_f64(r).iter().sum::<f64>() / trace.cols as f64, trace.slot_ids[r]))
            .collect();
        busiest.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (mean, id) in &busiest[..4] {
            println!("         slot {id:#08x}: mean probe {mean:.0} ns");
        }
    }
    Ok(())
}

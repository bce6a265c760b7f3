//! Runs eviction-set discovery on the full-scale LLC (2 MB, 16-way) and
//! checks the result against the simulator's ground truth.
//!
//!     cargo run --release --example find_evsets -- [lru|random] [seed] [jitter_ns]

use std::time::Instant;

use cacheloom::cache::{allocate_pool, Cache, CacheConfig, Oracle, PageMapping, ReplacementPolicy};
use cacheloom::evset::{build_catalog, verify_catalog, EvSearchParams};

fn main() -> cacheloom::Result<()> {
    let mut args = std::env::args().skip(1);
    let policy: ReplacementPolicy = args.next().as_deref().unwrap_or("lru").parse()?;
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let jitter: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let config = CacheConfig::full_scale()
        .with_policy(policy)
        .with_seed(seed)
        .with_jitter(jitter);
    let params = EvSearchParams::for_config(&config);
    println!(
        "{} sets, {}-way, pool {} pages, r={}, tau_jump={} ns",
        config.set_count(),
        config.associativity,
        params.pool_pages,
        params.r,
        params.tau_jump
    );

    let pool = allocate_pool(&config, params.pool_pages, PageMapping::RandomPermutation, seed)?;
    let mut cache = Cache::new(config.clone())?;
    let start = Instant::now();
    let catalog = build_catalog(&pool, &mut cache, &params)?;
    let elapsed = start.elapsed();

    let report = verify_catalog(&catalog, &Oracle::grant(&config, &pool))?;
    println!(
        "reported {} -> {} unique sets in {:.2?}",
        catalog.reported_count,
        catalog.unique_sets.len(),
        elapsed
    );
    println!(
        "coverage {:.4}  purity {:.4}  duplicates {}",
        report.coverage_fraction, report.purity_fraction, report.duplicate_count
    );
    Ok(())
}

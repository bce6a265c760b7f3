//! One Prime+Probe round against a discovered eviction set: the probe time
//! grows by one miss for every victim line that lands in the monitored set.
//!
//!     cargo run --release --example prime_probe -- [seed]

use cacheloom::cache::{allocate_pool, Cache, CacheConfig, Oracle, PageMapping};
use cacheloom::evset::{build_catalog, oracle_target, EvSearchParams};
use cacheloom::profiler::{prime, probe};

fn main() -> cacheloom::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let config = CacheConfig::desk().with_seed(seed);
    let params = EvSearchParams::for_config(&config);
    let pool = allocate_pool(&config, params.pool_pages, PageMapping::RandomPermutation, seed)?;
    let mut cache = Cache::new(config.clone())?;
    let catalog = build_catalog(&pool, &mut cache, &params)?;
    println!("{} eviction sets for {} colours", catalog.unique_sets.len(), config.page_colors());

    let ev = &catalog.unique_sets[0];
    // The oracle stands in for the MMU when the attacker touches its own
    // pages, and aims the victim; the attacker never reads `set`.
    let oracle = Oracle::grant(&config, &pool);
    let (set, _) = oracle_target(ev, &oracle)?;
    let lines = ev
        .working_addresses(config.associativity)
        .into_iter()
        .map(|a| oracle.physical(a))
        .collect::<cacheloom::Result<Vec<_>>>()?;
    for victim_lines in 0..=config.associativity {
        prime(&mut cache, &lines);
        for k in 0..victim_lines {
            cache.access(config.victim_line(set, k));
        }
        let ns = probe(&mut cache, &lines);
        println!("victim touched {victim_lines:>2} line(s) of the set -> probe {ns:>6.0} ns");
    }
    Ok(())
}

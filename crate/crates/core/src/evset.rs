//! Eviction-set discovery from virtual addresses and a coarse timer.
//!
//! [`search`] grows a candidate set page by page and watches for a jump in
//! the average access-cycle time; on a jump it filters the candidates whose
//! removal makes the contention disappear. [`remove_duplicates`] then drops
//! reported sets that contend with an earlier one, and [`derive_adjacent`]
//! expands each survivor to every line offset within a page.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::cache::{timed_access_cycle, Cache, CacheConfig, MemoryPool, Oracle, TimingRole, VirtAddr};
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EvSearchParams {
    /// Access cycles averaged per measurement.
    pub r: u32,
    /// Contention threshold in ns of average-cycle difference.
    pub tau_jump: f64,
    /// Number of pool pages walked by the search.
    pub pool_pages: usize,
}

impl EvSearchParams {
    /// r = 1000, τ_jump = 0.8 (t_miss - t_hit), pool of twice the LLC.
    pub fn for_config(config: &CacheConfig) -> Self {
        EvSearchParams {
            r: 1000,
            tau_jump: config.default_tau_jump(),
            pool_pages: (2 * config.total_size / config.page_size) as usize,
        }
    }

    pub fn with_r(mut self, r: u32) -> Self {
        self.r = r;
        self
    }

    pub fn with_tau_jump(mut self, tau_jump: f64) -> Self {
        self.tau_jump = tau_jump;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(Error::Config("r must be at least 1".into()));
        }
        if !(self.tau_jump > 0.0) {
            return Err(Error::Config("tau_jump must be positive".into()));
        }
        Ok(())
    }
}

/// Pages whose line at `base_line_offset` maps to one cache set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvictionSet {
    pub members: Vec<VirtAddr>,
    pub base_line_offset: u64,
}

impl EvictionSet {
    pub fn new(members: Vec<VirtAddr>) -> Self {
        EvictionSet {
            members,
            base_line_offset: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member pages shifted to the set's line offset.
    pub fn addresses(&self) -> Vec<VirtAddr> {
        self.members.iter().map(|m| m.offset(self.base_line_offset)).collect()
    }

    /// The first `ways` addresses: exactly fills the set. An over-full set
    /// (W + 1 members as found by the search) would evict itself.
    pub fn working_addresses(&self, ways: usize) -> Vec<VirtAddr> {
        self.members
            .iter()
            .take(ways)
            .map(|m| m.offset(self.base_line_offset))
            .collect()
    }
}

/// Deduplicated eviction sets, in discovery order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EvictionCatalog {
    pub unique_sets: Vec<EvictionSet>,
    /// Number of sets the pool walk reported before deduplication (m).
    pub reported_count: usize,
}

/// One outer-loop iteration of the search.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpStep {
    pub added: VirtAddr,
    pub t_total: f64,
    pub t_old: f64,
    /// Index into the reported sets when this step detected contention.
    pub report: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub reported: Vec<EvictionSet>,
    /// Filter results with fewer than W members; removed from T but unusable.
    pub discarded: Vec<EvictionSet>,
    pub steps: Vec<JumpStep>,
    pub max_jump: f64,
}

fn measure(cache: &mut Cache, pool: &MemoryPool, pages: &[VirtAddr], r: u32, role: TimingRole) -> Result<f64> {
    if pages.is_empty() {
        return Ok(0.0);
    }
    Ok(timed_access_cycle(cache, pool, pages, r, role)?.t_avg)
}

/// The pool walk with a per-iteration log.
pub fn search(pool: &MemoryPool, cache: &mut Cache, params: &EvSearchParams) -> Result<SearchOutcome> {
    params.validate()?;
    let config = cache.config().clone();
    let pages = pool.virtual_pages();
    let n = params.pool_pages.min(pages.len());
    if (n as u64) * config.page_size < 2 * config.total_size {
        warn!(
            "pool of {n} pages ({} bytes) is smaller than twice the LLC ({} bytes)",
            n as u64 * config.page_size,
            config.total_size
        );
    }

    let mut outcome = SearchOutcome {
        reported: Vec::new(),
        discarded: Vec::new(),
        steps: Vec::with_capacity(n),
        max_jump: f64::NEG_INFINITY,
    };
    let mut candidates: Vec<VirtAddr> = Vec::new();
    let mut t_old = 0.0;
    let mut reduced = Vec::new();

    for &page in &pages[..n] {
        candidates.push(page);
        let t_total = measure(cache, pool, &candidates, params.r, TimingRole::Total)?;
        let jump = t_total - t_old;
        outcome.max_jump = outcome.max_jump.max(jump);
        let mut step = JumpStep {
            added: page,
            t_total,
            t_old,
            report: None,
        };
        if jump > params.tau_jump {
            let mut members = Vec::new();
            for (i, &p) in candidates.iter().enumerate() {
                reduced.clear();
                reduced.extend(candidates.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &q)| q));
                let t_without = measure(cache, pool, &reduced, params.r, TimingRole::Without)?;
                if t_total - t_without > params.tau_jump {
                    members.push(p);
                }
            }
            let removed: HashSet<VirtAddr> = members.iter().copied().collect();
            candidates.retain(|p| !removed.contains(p));
            if members.len() >= config.associativity {
                step.report = Some(outcome.reported.len());
                outcome.reported.push(EvictionSet::new(members));
            } else if !members.is_empty() {
                outcome.discarded.push(EvictionSet::new(members));
            }
            t_old = measure(cache, pool, &candidates, params.r, TimingRole::Old)?;
        } else {
            t_old = t_total;
        }
        outcome.steps.push(step);
    }

    if outcome.reported.is_empty() {
        return Err(Error::SearchFailed {
            tau_jump: params.tau_jump,
            max_jump: outcome.max_jump,
        });
    }
    Ok(outcome)
}

/// The eviction sets reported while walking the pool.
pub fn find_eviction_sets(pool: &MemoryPool, cache: &mut Cache, params: &EvSearchParams) -> Result<Vec<EvictionSet>> {
    search(pool, cache, params).map(|o| o.reported)
}

/// Duplicate removal: keeps the first of every group of mutually contending sets.
pub fn remove_duplicates(
    reported: &[EvictionSet],
    cache: &mut Cache,
    pool: &MemoryPool,
    params: &EvSearchParams,
) -> Result<EvictionCatalog> {
    params.validate()?;
    let ways = cache.config().associativity;
    let mut pending: Vec<usize> = (0..reported.len()).collect();
    let mut unique = Vec::new();
    let mut probe = Vec::new();
    while !pending.is_empty() {
        let first = pending.remove(0);
        let head = reported[first].addresses();
        let mut survivors = Vec::with_capacity(pending.len());
        for &s in &pending {
            let others = reported[s].working_addresses(ways);
            // a page of E_f that E_s does not already contain; if E_s holds
            // all of them the two sets are trivially the same
            let Some(&one_page) = head.iter().find(|a| !others.contains(a)) else {
                continue;
            };
            probe.clear();
            probe.push(one_page);
            probe.extend(others);
            let t_pair = measure(cache, pool, &probe, params.r, TimingRole::Pair)?;
            if t_pair <= params.tau_jump {
                survivors.push(s);
            }
        }
        pending = survivors;
        unique.push(reported[first].clone());
    }
    Ok(EvictionCatalog {
        unique_sets: unique,
        reported_count: reported.len(),
    })
}

/// Pool walk followed by duplicate removal.
pub fn build_catalog(pool: &MemoryPool, cache: &mut Cache, params: &EvSearchParams) -> Result<EvictionCatalog> {
    let reported = find_eviction_sets(pool, cache, params)?;
    remove_duplicates(&reported, cache, pool, params)
}

/// The eviction set for line offset `k` of the same pages.
pub fn derive_adjacent(ev: &EvictionSet, k: usize, config: &CacheConfig) -> Result<EvictionSet> {
    if k >= config.lines_per_page() {
        return Err(Error::Contract(format!(
            "line offset index {k} out of range 0..{}",
            config.lines_per_page()
        )));
    }
    Ok(EvictionSet {
        members: ev.members.clone(),
        base_line_offset: k as u64 * config.line_size,
    })
}

impl EvictionCatalog {
    /// Every derived set as (virtual set, offset index, set), in discovery order.
    pub fn derived_sets(&self, config: &CacheConfig) -> Vec<(usize, usize, EvictionSet)> {
        let mut out = Vec::with_capacity(self.unique_sets.len() * config.lines_per_page());
        for (v, ev) in self.unique_sets.iter().enumerate() {
            for k in 0..config.lines_per_page() {
                out.push((v, k, derive_adjacent(ev, k, config).expect("k within page")));
            }
        }
        out
    }

    /// One line per set: `set_id offset member,member,...` with hex addresses.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, ev) in self.unique_sets.iter().enumerate() {
            let members: Vec<String> = ev.members.iter().map(|m| format!("{:#x}", m.0)).collect();
            writeln!(out, "{id} {} {}", ev.base_line_offset, members.join(",")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut sets = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: &str| Error::format("catalog", format!("line {}: {d}", lineno + 1));
            let mut fields = line.split_whitespace();
            let (Some(id), Some(offset), Some(members), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected `set_id offset members`"));
            };
            let id: usize = id.parse().map_err(|_| bad("bad set id"))?;
            if id != sets.len() {
                return Err(bad("set ids must be consecutive from 0"));
            }
            let offset: u64 = offset.parse().map_err(|_| bad("bad offset"))?;
            let members = members
                .split(',')
                .map(|m| {
                    u64::from_str_radix(m.trim_start_matches("0x"), 16)
                        .map(VirtAddr)
                        .map_err(|_| bad("bad hex address"))
                })
                .collect::<Result<Vec<_>>>()?;
            sets.push(EvictionSet {
                members,
                base_line_offset: offset,
            });
        }
        Ok(EvictionCatalog {
            reported_count: sets.len(),
            unique_sets: sets,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    /// Fraction of LLC sets owned by exactly one derived eviction set.
    pub coverage_fraction: f64,
    /// Fraction of catalog members mapping to their set's majority index.
    pub purity_fraction: f64,
    /// Catalog sets whose target was already claimed by an earlier set.
    pub duplicate_count: usize,
    pub per_set_purity: Vec<f64>,
    /// Majority target set index of every catalog set at its base offset.
    pub targets: Vec<usize>,
}

/// Majority oracle set index of an eviction set and how many members agree.
pub fn oracle_target(ev: &EvictionSet, oracle: &Oracle<'_>) -> Result<(usize, usize)> {
    let mut sets = ev
        .addresses()
        .into_iter()
        .map(|a| oracle.set_of(a))
        .collect::<Result<Vec<_>>>()?;
    sets.sort_unstable();
    let best = sets
        .chunk_by(|a, b| a == b)
        .max_by_key(|run| run.len())
        .map(|run| (run[0], run.len()))
        .unwrap_or((0, 0));
    Ok(best)
}

/// Checks a catalog against the ground-truth mapping.
pub fn verify_catalog(catalog: &EvictionCatalog, oracle: &Oracle<'_>) -> Result<VerificationReport> {
    let config = oracle.config();
    let set_count = config.set_count();
    let mut owners = vec![0usize; set_count];
    let mut per_set_purity = Vec::with_capacity(catalog.unique_sets.len());
    let mut targets = Vec::with_capacity(catalog.unique_sets.len());
    let (mut pure, mut total) = (0usize, 0usize);
    let mut claimed = HashSet::new();
    let mut duplicate_count = 0;

    for ev in &catalog.unique_sets {
        let (target, agree) = oracle_target(ev, oracle)?;
        pure += agree;
        total += ev.len();
        per_set_purity.push(if ev.is_empty() { 0.0 } else { agree as f64 / ev.len() as f64 });
        targets.push(target);
        if !claimed.insert(target) {
            duplicate_count += 1;
        }
        for k in 0..config.lines_per_page() {
            let derived = derive_adjacent(ev, k, config)?;
            let (t, _) = oracle_target(&derived, oracle)?;
            owners[t] += 1;
        }
    }

    Ok(VerificationReport {
        coverage_fraction: owners.iter().filter(|&&c| c == 1).count() as f64 / set_count as f64,
        purity_fraction: if total == 0 { 0.0 } else { pure as f64 / total as f64 },
        duplicate_count,
        per_set_purity,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{allocate_pool, PageMapping, ReplacementPolicy};

    fn desk_run(policy: ReplacementPolicy, seed: u64) -> (CacheConfig, MemoryPool, EvictionCatalog) {
        let cfg = CacheConfig::desk().with_policy(policy).with_seed(seed);
        let params = EvSearchParams::for_config(&cfg);
        let pool = allocate_pool(&cfg, params.pool_pages, PageMapping::RandomPermutation, seed).unwrap();
        let mut cache = Cache::new(cfg.clone()).unwrap();
        let catalog = build_catalog(&pool, &mut cache, &params).unwrap();
        (cfg, pool, catalog)
    }

    #[test]
    fn desk_catalog_is_complete_and_pure() {
        let (cfg, pool, catalog) = desk_run(ReplacementPolicy::Lru, 3);
        assert_eq!(catalog.unique_sets.len(), cfg.page_colors());
        assert!(catalog.unique_sets.iter().all(|s| s.len() >= cfg.associativity));
        let report = verify_catalog(&catalog, &Oracle::grant(&cfg, &pool)).unwrap();
        assert_eq!(report.coverage_fraction, 1.0);
        assert_eq!(report.purity_fraction, 1.0);
        assert_eq!(report.duplicate_count, 0);
    }

    #[test]
    fn random_policy_finds_same_catalog_as_lru() {
        let (_, _, lru) = desk_run(ReplacementPolicy::Lru, 8);
        let (_, _, random) = desk_run(ReplacementPolicy::Random, 8);
        assert_eq!(lru, random);
    }

    #[test]
    fn contention_fires_when_set_overflows() {
        // identity mapping: frame f has color f % 4; color 0 gets its
        // ninth page (W + 1) at pool index 32
        let cfg = CacheConfig::desk();
        let pool = allocate_pool(&cfg, 36, PageMapping::Identity, 0).unwrap();
        let params = EvSearchParams::for_config(&cfg);
        let mut cache = Cache::new(cfg.clone()).unwrap();
        let outcome = search(&pool, &mut cache, &params).unwrap();
        let fired: Vec<usize> = outcome
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.report.is_some())
            .map(|(i, _)| i)
            .collect();
        assert_eq!(fired[0], 32);
        let oracle = Oracle::grant(&cfg, &pool);
        let first = &outcome.reported[0];
        assert_eq!(first.len(), cfg.associativity + 1);
        assert!(first.members.iter().all(|&m| oracle.set_of(m).unwrap() == 0));
    }

    #[test]
    fn jumps_only_when_a_set_overflows() {
        let cfg = CacheConfig::desk();
        let params = EvSearchParams::for_config(&cfg);
        let pool = allocate_pool(&cfg, params.pool_pages, PageMapping::RandomPermutation, 21).unwrap();
        let mut cache = Cache::new(cfg.clone()).unwrap();
        let outcome = search(&pool, &mut cache, &params).unwrap();
        let oracle = Oracle::grant(&cfg, &pool);
        let mut candidates: Vec<VirtAddr> = Vec::new();
        for step in &outcome.steps {
            candidates.push(step.added);
            let mut per_set = vec![0usize; cfg.set_count()];
            for &c in &candidates {
                per_set[oracle.set_of(c).unwrap()] += 1;
            }
            let overflow = per_set.iter().any(|&n| n > cfg.associativity);
            let jumped = step.t_total - step.t_old > params.tau_jump;
            assert_eq!(jumped, overflow);
            if let Some(idx) = step.report {
                let gone: HashSet<_> = outcome.reported[idx].members.iter().copied().collect();
                candidates.retain(|c| !gone.contains(c));
            }
        }
    }

    #[test]
    fn search_failure_reports_max_jump() {
        let cfg = CacheConfig::desk();
        let params = EvSearchParams::for_config(&cfg).with_tau_jump(1e9);
        let pool = allocate_pool(&cfg, params.pool_pages, PageMapping::RandomPermutation, 1).unwrap();
        let mut cache = Cache::new(cfg).unwrap();
        match find_eviction_sets(&pool, &mut cache, &params) {
            Err(Error::SearchFailed { max_jump, .. }) => assert!(max_jump > 0.0 && max_jump < 1e9),
            other => panic!("expected search failure, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_removal() {
        let (cfg, pool, catalog) = desk_run(ReplacementPolicy::Lru, 4);
        let params = EvSearchParams::for_config(&cfg);
        let mut cache = Cache::new(cfg.clone()).unwrap();

        let doubled = vec![catalog.unique_sets[0].clone(), catalog.unique_sets[0].clone()];
        assert_eq!(remove_duplicates(&doubled, &mut cache, &pool, &params).unwrap().unique_sets.len(), 1);

        let single = vec![catalog.unique_sets[1].clone()];
        let out = remove_duplicates(&single, &mut cache, &pool, &params).unwrap();
        assert_eq!(out.unique_sets, single);

        // every unique set plus duplicates built from a rotated member list
        let mut noisy = catalog.unique_sets.clone();
        for i in [0, 2, 3, 1, 0] {
            let mut dup = catalog.unique_sets[i].clone();
            dup.members.rotate_left(1);
            noisy.push(dup);
        }
        let dedup = remove_duplicates(&noisy, &mut cache, &pool, &params).unwrap();
        assert_eq!(dedup.reported_count, noisy.len());
        assert_eq!(dedup.unique_sets, catalog.unique_sets);

        let empty = remove_duplicates(&[], &mut cache, &pool, &params).unwrap();
        assert!(empty.unique_sets.is_empty());
    }

    #[test]
    fn adjacent_sets_follow_line_offsets() {
        let (cfg, pool, catalog) = desk_run(ReplacementPolicy::Lru, 5);
        let oracle = Oracle::grant(&cfg, &pool);
        let ev = &catalog.unique_sets[0];
        let base = oracle_target(ev, &oracle).unwrap().0;
        assert_eq!(derive_adjacent(ev, 0, &cfg).unwrap(), *ev);
        let one = derive_adjacent(ev, 1, &cfg).unwrap();
        assert_eq!(oracle_target(&one, &oracle).unwrap(), (base + 1, ev.len()));
        let last = derive_adjacent(ev, 63, &cfg).unwrap();
        assert_eq!(last.base_line_offset, 4032);
        assert_eq!(oracle_target(&last, &oracle).unwrap().0, base + 63);
        assert!(derive_adjacent(ev, 64, &cfg).is_err());
    }

    #[test]
    fn verification_counts() {
        let (cfg, pool, catalog) = desk_run(ReplacementPolicy::Lru, 6);
        let oracle = Oracle::grant(&cfg, &pool);

        let mut missing = catalog.clone();
        missing.unique_sets.pop();
        let report = verify_catalog(&missing, &oracle).unwrap();
        assert_eq!(report.coverage_fraction, (256.0 - 64.0) / 256.0);

        let mut tainted = catalog.clone();
        let foreign = tainted.unique_sets[1].members[0];
        tainted.unique_sets[0].members.push(foreign);
        let n = tainted.unique_sets[0].len();
        let report = verify_catalog(&tainted, &oracle).unwrap();
        assert_eq!(report.per_set_purity[0], (n - 1) as f64 / n as f64);
        assert_eq!(report.coverage_fraction, 1.0);

        let mut dup = catalog.clone();
        dup.unique_sets.push(catalog.unique_sets[2].clone());
        let report = verify_catalog(&dup, &oracle).unwrap();
        assert_eq!(report.duplicate_count, 1);
        assert!(report.coverage_fraction < 1.0);
    }

    #[test]
    fn catalog_text_format() {
        let catalog = EvictionCatalog {
            unique_sets: vec![
                EvictionSet::new(vec![VirtAddr(0x7f00_0000_0000), VirtAddr(0x7f00_0000_4000)]),
                EvictionSet {
                    members: vec![VirtAddr(0x1000)],
                    base_line_offset: 128,
                },
            ],
            reported_count: 2,
        };
        let text = catalog.to_text();
        assert_eq!(text, "0 0 0x7f0000000000,0x7f0000004000\n1 128 0x1000\n");
        assert_eq!(EvictionCatalog::from_text(&text).unwrap(), catalog);
        assert!(EvictionCatalog::from_text("0 0 zz").is_err());
        assert!(EvictionCatalog::from_text("3 0 0x1").is_err());
    }
}

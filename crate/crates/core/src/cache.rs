//! Set-associative last-level cache model.
//!
//! The model is deterministic for a given [`CacheConfig::seed`]: random
//! replacement draws from one seeded stream per set, timer jitter from a
//! separate stream. Attack code sees only virtual addresses through a
//! [`MemoryPool`]; the true set mapping is available through [`Oracle`].

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Base of the attacker's virtual address range.
pub const VIRTUAL_BASE: u64 = 0x7f00_0000_0000;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VirtAddr(pub u64);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhysAddr(pub u64);

impl VirtAddr {
    pub fn offset(self, bytes: u64) -> VirtAddr {
        VirtAddr(self.0 + bytes)
    }
}

impl fmt::LowerHex for VirtAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ReplacementPolicy {
    Lru,
    Random,
}

impl FromStr for ReplacementPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lru" => Ok(ReplacementPolicy::Lru),
            "random" => Ok(ReplacementPolicy::Random),
            other => Err(Error::Config(format!("unknown replacement policy `{other}`"))),
        }
    }
}

impl fmt::Display for ReplacementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplacementPolicy::Lru => "lru",
            ReplacementPolicy::Random => "random",
        })
    }
}

/// Geometry, policy and timing of the modeled LLC. Sizes in bytes, times in ns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheConfig {
    pub total_size: u64,
    pub line_size: u64,
    pub associativity: usize,
    pub page_size: u64,
    pub replacement: ReplacementPolicy,
    pub t_hit: u64,
    pub t_miss: u64,
    pub timer_precision: u64,
    pub jitter_stddev: u64,
    pub seed: u64,
    /// Size of the flat, fully backed physical address space.
    pub physical_memory: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl CacheConfig {
    /// 2 MB, 16-way, 64 B lines, 4 KB pages, 52 ns timer.
    pub fn full_scale() -> Self {
        CacheConfig {
            total_size: 2 * 1024 * 1024,
            line_size: 64,
            associativity: 16,
            page_size: 4096,
            replacement: ReplacementPolicy::Lru,
            t_hit: 20,
            t_miss: 700,
            timer_precision: 52,
            jitter_stddev: 0,
            seed: 0,
            physical_memory: 1 << 30,
        }
    }

    /// 256 sets, 8-way, 64 B lines (128 KB): small enough for the whole
    /// pipeline to run in seconds.
    pub fn desk() -> Self {
        CacheConfig {
            total_size: 256 * 8 * 64,
            associativity: 8,
            ..Self::full_scale()
        }
    }

    pub fn with_policy(mut self, policy: ReplacementPolicy) -> Self {
        self.replacement = policy;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_jitter(mut self, stddev: u64) -> Self {
        self.jitter_stddev = stddev;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.line_size == 0 || self.associativity == 0 || self.page_size == 0 {
            return bad("line_size, associativity and page_size must be positive".into());
        }
        let way_bytes = self.line_size * self.associativity as u64;
        if self.total_size == 0 || self.total_size % way_bytes != 0 {
            return bad(format!(
                "total_size {} is not a multiple of line_size*associativity {way_bytes}",
                self.total_size
            ));
        }
        if !(self.total_size / way_bytes).is_power_of_two() {
            return bad(format!("set count {} is not a power of two", self.total_size / way_bytes));
        }
        if self.page_size % self.line_size != 0 {
            return bad("page_size must be a multiple of line_size".into());
        }
        if self.t_hit == 0 || self.t_miss <= self.t_hit {
            return bad("latencies must satisfy t_miss > t_hit > 0".into());
        }
        if self.timer_precision == 0 {
            return bad("timer_precision must be positive".into());
        }
        if self.physical_memory < self.victim_region_size() + self.page_size {
            return bad("physical_memory too small for the victim region".into());
        }
        Ok(())
    }

    pub fn set_count(&self) -> usize {
        (self.total_size / (self.line_size * self.associativity as u64)) as usize
    }

    pub fn lines_per_page(&self) -> usize {
        (self.page_size / self.line_size) as usize
    }

    /// Number of distinct page-aligned set groups ("virtual cache sets").
    pub fn page_colors(&self) -> usize {
        (self.set_count() / self.lines_per_page()).max(1)
    }

    /// Default τ_jump: slightly below the hit/miss gap.
    pub fn default_tau_jump(&self) -> f64 {
        0.8 * (self.t_miss - self.t_hit) as f64
    }

    /// Set index of a physical address.
    pub fn set_index(&self, addr: PhysAddr) -> Result<usize> {
        if addr.0 >= self.physical_memory {
            return Err(Error::Range {
                address: addr.0,
                limit: self.physical_memory,
            });
        }
        Ok(self.set_of_unchecked(addr))
    }

    fn set_of_unchecked(&self, addr: PhysAddr) -> usize {
        ((addr.0 / self.line_size) % self.set_count() as u64) as usize
    }

    fn victim_region_size(&self) -> u64 {
        self.total_size * self.associativity as u64
    }

    /// Physical address of the victim's `k`-th line in `set`. The victim
    /// region sits at the top of physical memory, away from attacker frames.
    pub fn victim_line(&self, set: usize, k: usize) -> PhysAddr {
        let base = self.physical_memory - self.victim_region_size();
        let k = (k % self.associativity) as u64;
        PhysAddr(base + k * self.total_size + set as u64 * self.line_size)
    }

    /// `key=value` text using the field names as keys.
    pub fn to_kv_string(&self) -> String {
        format!(
            "total_size={}\nline_size={}\nassociativity={}\npage_size={}\nreplacement={}\n\
             t_hit={}\nt_miss={}\ntimer_precision={}\njitter_stddev={}\nseed={}\nphysical_memory={}\n",
            self.total_size,
            self.line_size,
            self.associativity,
            self.page_size,
            self.replacement,
            self.t_hit,
            self.t_miss,
            self.timer_precision,
            self.jitter_stddev,
            self.seed,
            self.physical_memory
        )
    }

    /// Parses `key=value` lines. Missing keys keep the desk defaults; `#`
    /// starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = CacheConfig::desk();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| Error::Config(format!("line {}: `{key}` expects an integer", lineno + 1)))
            };
            match key {
                "total_size" => cfg.total_size = int(value)?,
                "line_size" => cfg.line_size = int(value)?,
                "associativity" => cfg.associativity = int(value)? as usize,
                "page_size" => cfg.page_size = int(value)?,
                "replacement" => cfg.replacement = value.parse()?,
                "t_hit" => cfg.t_hit = int(value)?,
                "t_miss" => cfg.t_miss = int(value)?,
                "timer_precision" => cfg.timer_precision = int(value)?,
                "jitter_stddev" => cfg.jitter_stddev = int(value)?,
                "seed" => cfg.seed = int(value)?,
                "physical_memory" => cfg.physical_memory = int(value)?,
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_kv_string())?;
        Ok(())
    }
}

pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AccessOutcome {
    pub hit: bool,
    /// Way now holding the line.
    pub way: usize,
    pub latency: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TimingRole {
    /// `t_T`: the growing candidate set.
    Total,
    /// `t_old`: previous iteration, or re-measured after a report.
    Old,
    /// `t_p`: candidate set without page `p`.
    Without,
    /// `t_E`: duplicate test between two eviction sets.
    Pair,
}

/// Average latency of one access cycle, as read from the coarse timer.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct AccessTiming {
    pub t_avg: f64,
    pub role: TimingRole,
}

const EMPTY: u64 = u64::MAX;

#[derive(Clone, Debug)]
struct CacheSet {
    tags: Vec<u64>,
    /// 0 = most recently used. Only meaningful for occupied ways.
    ranks: Vec<u32>,
    occupancy: usize,
    rng: ChaCha8Rng,
}

impl CacheSet {
    fn new(ways: usize, seed: u64) -> Self {
        CacheSet {
            tags: vec![EMPTY; ways],
            ranks: vec![0; ways],
            occupancy: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Returns (hit, way).
    fn touch(&mut self, tag: u64, policy: ReplacementPolicy) -> (bool, usize) {
        let ways = self.tags.len();
        if let Some(way) = self.tags.iter().position(|&t| t == tag) {
            let rank = self.ranks[way];
            for j in 0..ways {
                if self.tags[j] != EMPTY && self.ranks[j] < rank {
                    self.ranks[j] += 1;
                }
            }
            self.ranks[way] = 0;
            return (true, way);
        }
        let (way, victim_rank) = if self.occupancy < ways {
            let way = self.tags.iter().position(|&t| t == EMPTY).expect("free way");
            self.occupancy += 1;
            (way, u32::MAX)
        } else {
            let way = match policy {
                ReplacementPolicy::Lru => (0..ways).max_by_key(|&j| self.ranks[j]).expect("ways > 0"),
                ReplacementPolicy::Random => self.rng.gen_range(0..ways),
            };
            (way, self.ranks[way])
        };
        for j in 0..ways {
            if j != way && self.tags[j] != EMPTY && self.ranks[j] < victim_rank {
                self.ranks[j] += 1;
            }
        }
        self.tags[way] = tag;
        self.ranks[way] = 0;
        (false, way)
    }

    fn snapshot(&self) -> (Vec<u64>, Vec<u32>) {
        (self.tags.clone(), self.ranks.clone())
    }
}

/// The modeled LLC and its contents (the cache *state*).
#[derive(Clone, Debug)]
pub struct Cache {
    config: CacheConfig,
    sets: Vec<CacheSet>,
    timer_rng: ChaCha8Rng,
    jitter: Option<Normal<f64>>,
}

impl Cache {
    pub fn new(config: CacheConfig) -> Result<Self> {
        config.validate()?;
        let sets = (0..config.set_count())
            .map(|s| CacheSet::new(config.associativity, mix_seed(config.seed, s as u64)))
            .collect();
        let jitter = (config.jitter_stddev > 0)
            .then(|| Normal::new(0.0, config.jitter_stddev as f64).expect("finite stddev"));
        Ok(Cache {
            timer_rng: ChaCha8Rng::seed_from_u64(mix_seed(config.seed, u64::MAX)),
            sets,
            jitter,
            config,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    /// One access to the line containing `addr`.
    pub fn access(&mut self, addr: PhysAddr) -> AccessOutcome {
        debug_assert!(addr.0 < self.config.physical_memory);
        let set = self.config.set_of_unchecked(addr);
        let tag = addr.0 / self.config.line_size;
        let (hit, way) = self.sets[set].touch(tag, self.config.replacement);
        AccessOutcome {
            hit,
            way,
            latency: if hit { self.config.t_hit } else { self.config.t_miss },
        }
    }

    pub fn resident_lines(&self) -> usize {
        self.sets.iter().map(|s| s.occupancy).sum()
    }

    pub fn set_occupancy(&self, set: usize) -> usize {
        self.sets[set].occupancy
    }

    /// True if the line holding `addr` is resident.
    pub fn contains(&self, addr: PhysAddr) -> bool {
        let set = self.config.set_of_unchecked(addr);
        let tag = addr.0 / self.config.line_size;
        self.sets[set].tags.contains(&tag)
    }

    /// Total latency of `r` cycles, each accessing every address of `lines`
    /// once in order. Equivalent to the naive nested loop: sets evolve
    /// independently, so each set's subsequence is replayed on its own and
    /// extrapolated once it reaches a steady state.
    pub fn run_cycles(&mut self, lines: &[PhysAddr], r: u32) -> u64 {
        let mut keyed: Vec<(usize, u64)> = lines
            .iter()
            .map(|&a| (self.config.set_of_unchecked(a), a.0 / self.config.line_size))
            .collect();
        keyed.sort_by_key(|&(set, _)| set);
        let mut total = 0;
        let mut tags = Vec::new();
        for group in keyed.chunk_by(|a, b| a.0 == b.0) {
            tags.clear();
            tags.extend(group.iter().map(|&(_, t)| t));
            total += self.run_set_cycles(group[0].0, &tags, r);
        }
        total
    }

    fn run_set_cycles(&mut self, set: usize, tags: &[u64], r: u32) -> u64 {
        let policy = self.config.replacement;
        let (t_hit, t_miss) = (self.config.t_hit, self.config.t_miss);
        let state = &mut self.sets[set];
        let mut total = 0;
        let mut prev = None;
        for cycle in 0..r {
            let misses = tags.iter().filter(|&&t| !state.touch(t, policy).0).count() as u64;
            let latency = misses * t_miss + (tags.len() as u64 - misses) * t_hit;
            total += latency;
            let remaining = (r - cycle - 1) as u64;
            if remaining == 0 {
                break;
            }
            if misses == 0 {
                // nothing can be evicted any more
                return total + latency * remaining;
            }
            if policy == ReplacementPolicy::Lru {
                let snap = state.snapshot();
                if prev.as_ref() == Some(&snap) {
                    return total + latency * remaining;
                }
                prev = Some(snap);
            }
        }
        total
    }

    /// Reads a duration through the coarse timer: optional Gaussian jitter,
    /// clamp at zero, floor to a multiple of `timer_precision`.
    pub fn quantize(&mut self, raw_ns: f64) -> f64 {
        let mut value = raw_ns;
        if let Some(noise) = &self.jitter {
            value += noise.sample(&mut self.timer_rng);
        }
        let precision = self.config.timer_precision as f64;
        (value.max(0.0) / precision).floor() * precision
    }

    /// Physical `timed_access_cycle`: average cycle latency of `r` cycles
    /// over `lines`, read through the timer.
    pub fn timed_cycles(&mut self, lines: &[PhysAddr], r: u32) -> f64 {
        let total = self.run_cycles(lines, r);
        self.quantize(total as f64 / r as f64)
    }
}

/// Accesses the first byte of each address in `pages` (full subset per
/// cycle, `r` cycles) and returns the timer's reading of the average cycle.
pub fn timed_access_cycle(
    cache: &mut Cache,
    pool: &MemoryPool,
    pages: &[VirtAddr],
    r: u32,
    role: TimingRole,
) -> Result<AccessTiming> {
    if r == 0 {
        return Err(Error::Contract("repeat count r must be at least 1".into()));
    }
    if pages.is_empty() {
        return Err(Error::Contract("timed access cycle over an empty page subset".into()));
    }
    let lines = pool.translate_all(pages)?;
    Ok(AccessTiming {
        t_avg: cache.timed_cycles(&lines, r),
        role,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PageMapping {
    Identity,
    RandomPermutation,
}

impl FromStr for PageMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(PageMapping::Identity),
            "random" | "random_permutation" | "random-permutation" => Ok(PageMapping::RandomPermutation),
            other => Err(Error::Config(format!("unknown page mapping `{other}`"))),
        }
    }
}

/// Pages requested by the attacker. The virtual side is public; the
/// physical side is only reachable through address translation (the MMU)
/// or an [`Oracle`].
#[derive(Clone, Debug)]
pub struct MemoryPool {
    pages: Vec<(VirtAddr, PhysAddr)>,
    index: HashMap<u64, u64>,
    page_size: u64,
    mapping_seed: u64,
}

/// Allocates `n_pages` pages backed by a frame range of exactly `n_pages`.
pub fn allocate_pool(config: &CacheConfig, n_pages: usize, mapping: PageMapping, seed: u64) -> Result<MemoryPool> {
    allocate_pool_in(config, n_pages, n_pages, mapping, seed)
}

/// Allocates `n_pages` pages whose frames are drawn from `0..frame_range`.
pub fn allocate_pool_in(
    config: &CacheConfig,
    n_pages: usize,
    frame_range: usize,
    mapping: PageMapping,
    seed: u64,
) -> Result<MemoryPool> {
    config.validate()?;
    if n_pages == 0 {
        return Err(Error::Config("memory pool needs at least one page".into()));
    }
    let frames_available = (config.physical_memory - config.victim_region_size()) / config.page_size;
    if n_pages > frame_range || frame_range as u64 > frames_available {
        return Err(Error::Capacity(format!(
            "{n_pages} pages over {frame_range} frames exceeds the {frames_available} modeled physical frames"
        )));
    }
    let frames: Vec<u64> = match mapping {
        PageMapping::Identity => (0..n_pages as u64).collect(),
        PageMapping::RandomPermutation => {
            let mut all: Vec<u64> = (0..frame_range as u64).collect();
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            all.truncate(n_pages);
            all
        }
    };
    let pages: Vec<(VirtAddr, PhysAddr)> = frames
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            (
                VirtAddr(VIRTUAL_BASE + i as u64 * config.page_size),
                PhysAddr(f * config.page_size),
            )
        })
        .collect();
    let index = pages.iter().map(|(v, p)| (v.0, p.0)).collect();
    Ok(MemoryPool {
        pages,
        index,
        page_size: config.page_size,
        mapping_seed: seed,
    })
}

impl MemoryPool {
    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn mapping_seed(&self) -> u64 {
        self.mapping_seed
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    /// Virtual page addresses in allocation order.
    pub fn virtual_pages(&self) -> Vec<VirtAddr> {
        self.pages.iter().map(|&(v, _)| v).collect()
    }

    pub(crate) fn translate(&self, addr: VirtAddr) -> Result<PhysAddr> {
        let offset = addr.0 % self.page_size;
        self.index
            .get(&(addr.0 - offset))
            .map(|&frame| PhysAddr(frame + offset))
            .ok_or(Error::Unmapped(addr.0))
    }

    pub(crate) fn translate_all(&self, addrs: &[VirtAddr]) -> Result<Vec<PhysAddr>> {
        addrs.iter().map(|&a| self.translate(a)).collect()
    }
}

/// Privileged view of the ground truth: physical addresses and true set
/// indices. Attack routines never take one; verification and the
/// comparison attack do.
#[derive(Copy, Clone, Debug)]
pub struct Oracle<'a> {
    config: &'a CacheConfig,
    pool: &'a MemoryPool,
}

impl<'a> Oracle<'a> {
    pub fn grant(config: &'a CacheConfig, pool: &'a MemoryPool) -> Self {
        Oracle { config, pool }
    }

    pub fn config(&self) -> &CacheConfig {
        self.config
    }

    pub fn physical(&self, addr: VirtAddr) -> Result<PhysAddr> {
        self.pool.translate(addr)
    }

    pub fn set_of(&self, addr: VirtAddr) -> Result<usize> {
        self.config.set_index(self.pool.translate(addr)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(policy: ReplacementPolicy) -> CacheConfig {
        // 4 sets, 2 ways
        CacheConfig {
            total_size: 4 * 2 * 64,
            line_size: 64,
            associativity: 2,
            page_size: 64,
            replacement: policy,
            physical_memory: 1 << 20,
            ..CacheConfig::full_scale()
        }
    }

    #[test]
    fn set_index_examples() {
        let cfg = CacheConfig::full_scale();
        assert_eq!(cfg.set_count(), 2048);
        assert_eq!(cfg.set_index(PhysAddr(0)).unwrap(), 0);
        for addr in [64u64, 131072, 4032, 12345 * 64] {
            assert_eq!(cfg.set_index(PhysAddr(addr)).unwrap(), ((addr / 64) % 2048) as usize);
        }
        assert!(matches!(cfg.set_index(PhysAddr(1 << 30)), Err(Error::Range { .. })));
    }

    #[test]
    fn config_invariants_rejected() {
        let mut cfg = CacheConfig::desk();
        cfg.total_size = 3 * 8 * 64;
        assert!(cfg.validate().is_err());
        let mut cfg = CacheConfig::desk();
        cfg.t_miss = cfg.t_hit;
        assert!(cfg.validate().is_err());
        let mut cfg = CacheConfig::desk();
        cfg.timer_precision = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = CacheConfig::desk();
        cfg.page_size = 100;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kv_config_roundtrip_and_errors() {
        let cfg = CacheConfig::full_scale().with_policy(ReplacementPolicy::Random).with_seed(99);
        let back = CacheConfig::from_kv_str(&cfg.to_kv_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(CacheConfig::from_kv_str("bogus=1").is_err());
        assert!(CacheConfig::from_kv_str("t_hit=fast").is_err());
        let partial = CacheConfig::from_kv_str("# comment\nseed = 7\n").unwrap();
        assert_eq!(partial.seed, 7);
    }

    #[test]
    fn cold_miss_then_hit() {
        let mut cache = Cache::new(CacheConfig::desk()).unwrap();
        let a = cache.access(PhysAddr(4096));
        assert!(!a.hit);
        assert_eq!(a.latency, 700);
        let b = cache.access(PhysAddr(4096 + 8));
        assert!(b.hit);
        assert_eq!(b.latency, 20);
    }

    #[test]
    fn lru_thrash_with_w_plus_one() {
        let cfg = CacheConfig::desk();
        let stride = cfg.set_count() as u64 * cfg.line_size;
        let addrs: Vec<PhysAddr> = (0..=cfg.associativity as u64).map(|i| PhysAddr(i * stride)).collect();
        let mut cache = Cache::new(cfg).unwrap();
        for &a in &addrs {
            cache.access(a);
        }
        let hits = (0..50)
            .flat_map(|_| addrs.clone())
            .filter(|&a| cache.access(a).hit)
            .count();
        assert_eq!(hits, 0);
    }

    /// Explicit recency lists, one per set.
    fn reference_lru(cfg: &CacheConfig, seq: &[u64]) -> Vec<bool> {
        let mut lists: Vec<Vec<u64>> = vec![Vec::new(); cfg.set_count()];
        seq.iter()
            .map(|&addr| {
                let line = addr / cfg.line_size;
                let list = &mut lists[(line % cfg.set_count() as u64) as usize];
                if let Some(pos) = list.iter().position(|&l| l == line) {
                    list.remove(pos);
                    list.push(line);
                    true
                } else {
                    if list.len() == cfg.associativity {
                        list.remove(0);
                    }
                    list.push(line);
                    false
                }
            })
            .collect()
    }

    #[test]
    fn lru_matches_reference_on_random_sequence() {
        let cfg = tiny(ReplacementPolicy::Lru);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq: Vec<u64> = (0..10_000).map(|_| rng.gen_range(0..24u64) * 64).collect();
        let expected = reference_lru(&cfg, &seq);
        let mut cache = Cache::new(cfg).unwrap();
        let got: Vec<bool> = seq.iter().map(|&a| cache.access(PhysAddr(a)).hit).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn random_eviction_is_uniform_over_ways() {
        let cfg = CacheConfig::full_scale().with_policy(ReplacementPolicy::Random);
        let stride = cfg.set_count() as u64 * cfg.line_size;
        let ways = cfg.associativity;
        let mut cache = Cache::new(cfg).unwrap();
        for i in 0..ways as u64 {
            cache.access(PhysAddr(i * stride));
        }
        let n = 100_000u64;
        let mut counts = vec![0u64; ways];
        for i in 0..n {
            // a fresh line every time forces an eviction
            let out = cache.access(PhysAddr((ways as u64 + i) * stride % (1 << 29)));
            assert!(!out.hit);
            counts[out.way] += 1;
        }
        let p = 1.0 / ways as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn fast_cycles_equal_naive_simulation() {
        for policy in [ReplacementPolicy::Lru, ReplacementPolicy::Random] {
            let cfg = CacheConfig::desk().with_policy(policy).with_seed(17);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let lines: Vec<PhysAddr> = (0..60).map(|_| PhysAddr(rng.gen_range(0..2048u64) * 4096)).collect();
            let mut fast = Cache::new(cfg.clone()).unwrap();
            let mut naive = Cache::new(cfg).unwrap();
            for r in [1u32, 7, 300] {
                let got = fast.run_cycles(&lines, r);
                let mut want = 0;
                for _ in 0..r {
                    for &a in &lines {
                        want += naive.access(a).latency;
                    }
                }
                assert_eq!(got, want, "{policy} r={r}");
            }
            for set in 0..fast.config().set_count() {
                assert_eq!(fast.sets[set].snapshot(), naive.sets[set].snapshot());
            }
        }
    }

    #[test]
    fn timed_cycle_closed_form_warm_cache() {
        let cfg = CacheConfig::full_scale();
        let pool = allocate_pool(&cfg, 10, PageMapping::Identity, 0).unwrap();
        let pages: Vec<VirtAddr> = pool
            .virtual_pages()
            .iter()
            .enumerate()
            .map(|(i, p)| p.offset(i as u64 * 64))
            .collect();
        let mut cache = Cache::new(cfg.clone()).unwrap();
        timed_access_cycle(&mut cache, &pool, &pages, 1, TimingRole::Total).unwrap();
        let warm = timed_access_cycle(&mut cache, &pool, &pages, 1000, TimingRole::Total).unwrap();
        let expected = ((10 * cfg.t_hit) as f64 / 52.0).floor() * 52.0;
        assert_eq!(warm.t_avg, expected);
        let again = timed_access_cycle(&mut cache, &pool, &pages, 1000, TimingRole::Total).unwrap();
        assert_eq!(again, warm);
    }

    #[test]
    fn quantization_floor() {
        let mut cache = Cache::new(CacheConfig::desk()).unwrap();
        assert_eq!(cache.quantize(600.0), 572.0);
        assert_eq!(cache.quantize(52.0), 52.0);
        assert_eq!(cache.quantize(51.9), 0.0);
    }

    #[test]
    fn timed_cycle_preconditions() {
        let cfg = CacheConfig::desk();
        let pool = allocate_pool(&cfg, 2, PageMapping::Identity, 0).unwrap();
        let mut cache = Cache::new(cfg).unwrap();
        assert!(timed_access_cycle(&mut cache, &pool, &[], 1, TimingRole::Total).is_err());
        assert!(timed_access_cycle(&mut cache, &pool, &pool.virtual_pages(), 0, TimingRole::Total).is_err());
        assert!(matches!(
            timed_access_cycle(&mut cache, &pool, &[VirtAddr(12)], 1, TimingRole::Total),
            Err(Error::Unmapped(12))
        ));
    }

    #[test]
    fn pool_allocation() {
        let cfg = CacheConfig::full_scale();
        assert_eq!(2 * cfg.total_size / cfg.page_size, 1024);
        let ident = allocate_pool(&cfg, 16, PageMapping::Identity, 0).unwrap();
        let oracle = Oracle::grant(&cfg, &ident);
        for (i, v) in ident.virtual_pages().into_iter().enumerate() {
            assert_eq!(oracle.physical(v).unwrap(), PhysAddr(i as u64 * 4096));
        }
        let a = allocate_pool(&cfg, 1024, PageMapping::RandomPermutation, 11).unwrap();
        let b = allocate_pool(&cfg, 1024, PageMapping::RandomPermutation, 11).unwrap();
        assert_eq!(a.pages, b.pages);
        let mut frames: Vec<u64> = a.pages.iter().map(|p| p.1 .0).collect();
        frames.sort_unstable();
        frames.dedup();
        assert_eq!(frames.len(), 1024);
        assert!(matches!(
            allocate_pool(&cfg, 1 << 20, PageMapping::Identity, 0),
            Err(Error::Capacity(_))
        ));
        assert!(allocate_pool(&cfg, 0, PageMapping::Identity, 0).is_err());
    }

    #[test]
    fn victim_lines_map_to_their_set() {
        let cfg = CacheConfig::desk();
        for set in [0, 5, 255] {
            for k in 0..cfg.associativity {
                assert_eq!(cfg.set_index(cfg.victim_line(set, k)).unwrap(), set);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn occupancy_and_rank_invariants(seq in proptest::collection::vec(0u64..64, 1..400), random in any::<bool>()) {
                let policy = if random { ReplacementPolicy::Random } else { ReplacementPolicy::Lru };
                let cfg = tiny(policy);
                let mut cache = Cache::new(cfg.clone()).unwrap();
                for a in seq {
                    cache.access(PhysAddr(a * 64));
                }
                prop_assert!(cache.resident_lines() <= cfg.set_count() * cfg.associativity);
                for set in &cache.sets {
                    let mut ranks: Vec<u32> = (0..set.tags.len())
                        .filter(|&j| set.tags[j] != EMPTY)
                        .map(|j| set.ranks[j])
                        .collect();
                    ranks.sort_unstable();
                    prop_assert_eq!(ranks, (0..set.occupancy as u32).collect::<Vec<_>>());
                }
            }

            #[test]
            fn determinism(seq in proptest::collection::vec(0u64..4096, 1..300), seed in any::<u64>()) {
                let cfg = CacheConfig::desk().with_policy(ReplacementPolicy::Random).with_seed(seed).with_jitter(30);
                let mut a = Cache::new(cfg.clone()).unwrap();
                let mut b = Cache::new(cfg).unwrap();
                let lines: Vec<PhysAddr> = seq.iter().map(|&x| PhysAddr(x * 64)).collect();
                let ta: Vec<_> = lines.iter().map(|&l| a.access(l)).collect();
                let tb: Vec<_> = lines.iter().map(|&l| b.access(l)).collect();
                prop_assert_eq!(ta, tb);
                prop_assert_eq!(a.timed_cycles(&lines, 5), b.timed_cycles(&lines, 5));
            }

            #[test]
            fn jitter_free_timings_are_multiples_of_precision(raw in 0.0f64..1e6) {
                let mut cache = Cache::new(CacheConfig::desk()).unwrap();
                let q = cache.quantize(raw);
                prop_assert_eq!(q % 52.0, 0.0);
                prop_assert!(q <= raw && raw - q < 52.0);
            }
        }
    }
}

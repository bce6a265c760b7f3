//! Prime+Probe capture of LLC activity into per-set time series.
//!
//! Each derived eviction set is one *slot*. A capture runs sample rounds;
//! in every round each slot is primed, the victim gets its turn, and the
//! slot is probed (in reverse order) with the probe time as the sample.
//! Virtual mode keeps slots in discovery order, physical mode (the
//! privileged comparison attack) sorts them by true set index.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::cache::{mix_seed, Cache, CacheConfig, MemoryPool, Oracle, PhysAddr};
use crate::error::{Error, Result};
use crate::evset::{oracle_target, EvictionCatalog, EvictionSet};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CaptureMode {
    Virtual,
    Physical,
}

impl CaptureMode {
    fn code(self) -> u8 {
        match self {
            CaptureMode::Virtual => 0,
            CaptureMode::Physical => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(CaptureMode::Virtual),
            1 => Ok(CaptureMode::Physical),
            other => Err(Error::format("trace", format!("unknown mode byte {other}"))),
        }
    }
}

impl std::fmt::Display for CaptureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            CaptureMode::Virtual => "virtual",
            CaptureMode::Physical => "physical",
        })
    }
}

impl FromStr for CaptureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "virtual" => Ok(CaptureMode::Virtual),
            "physical" => Ok(CaptureMode::Physical),
            other => Err(Error::Config(format!("unknown capture mode `{other}`"))),
        }
    }
}

/// How victim activity is interleaved with Prime+Probe windows.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Interleave {
    /// Per sample round the victim runs one step per slot; its accesses are
    /// grouped by set and land inside the window of the slot covering that
    /// set. Independent of slot order.
    Bucketed,
    /// A Poisson number of victim steps runs inside every window, touching
    /// whatever sets they touch at that moment.
    Poisson { mean_steps: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureConfig {
    /// Samples per virtual cache set (split evenly over its slots).
    pub n_t: usize,
    pub mode: CaptureMode,
    pub seed: u64,
    pub interleave: Interleave,
}

impl CaptureConfig {
    pub fn desk(mode: CaptureMode, seed: u64) -> Self {
        CaptureConfig {
            n_t: 4096,
            mode,
            seed,
            interleave: Interleave::Bucketed,
        }
    }

    pub fn samples_per_slot(&self, config: &CacheConfig) -> usize {
        self.n_t / config.lines_per_page()
    }

    pub fn validate(&self, config: &CacheConfig) -> Result<()> {
        let lpp = config.lines_per_page();
        if self.n_t < 2 || self.n_t % 2 != 0 {
            return Err(Error::Config(format!("n_T = {} must be even and at least 2", self.n_t)));
        }
        if self.n_t % lpp != 0 || (self.n_t / lpp) % 2 != 0 {
            return Err(Error::Config(format!(
                "n_T = {} must split into an even number of samples for each of the {lpp} slots",
                self.n_t
            )));
        }
        if let Interleave::Poisson { mean_steps } = self.interleave {
            if !(mean_steps > 0.0) {
                return Err(Error::Config("Poisson interleave needs a positive mean".into()));
            }
        }
        Ok(())
    }
}

/// A weight shift applied for `duration` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase {
    pub duration: u32,
    /// Rotates the set weights by this many sets.
    pub shift: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TemporalPattern {
    Constant,
    /// Active for `duty * period` out of every `period` steps.
    Burst { period: u32, duty: f64, phase: u32 },
    /// Cycles through the phases.
    Phased(Vec<Phase>),
}

/// Synthetic victim workload.
#[derive(Clone, Debug, PartialEq)]
pub struct VictimSpec {
    pub class_label: String,
    /// Probability of each LLC set per access.
    pub set_weights: Vec<f64>,
    pub accesses_per_step: u32,
    pub temporal_pattern: TemporalPattern,
    pub seed: u64,
}

impl VictimSpec {
    /// A victim that never touches memory.
    pub fn idle(label: &str, set_count: usize) -> Self {
        let mut weights = vec![0.0; set_count];
        weights[0] = 1.0;
        VictimSpec {
            class_label: label.to_string(),
            set_weights: weights,
            accesses_per_step: 0,
            temporal_pattern: TemporalPattern::Constant,
            seed: 0,
        }
    }

    /// All weight on one set.
    pub fn single_set(label: &str, set_count: usize, set: usize, accesses_per_step: u32) -> Self {
        let mut weights = vec![0.0; set_count];
        weights[set] = 1.0;
        VictimSpec {
            class_label: label.to_string(),
            set_weights: weights,
            accesses_per_step,
            temporal_pattern: TemporalPattern::Constant,
            seed: 0,
        }
    }

    pub fn with_pattern(mut self, pattern: TemporalPattern) -> Self {
        self.temporal_pattern = pattern;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.set_weights.iter().sum();
        if self.set_weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "victim `{}`: set weights must be non-negative and sum to 1 (sum {sum})",
                self.class_label
            )));
        }
        match &self.temporal_pattern {
            TemporalPattern::Burst { period, duty, .. } if *period == 0 || !(*duty > 0.0 && *duty <= 1.0) => {
                Err(Error::Config("burst needs period >= 1 and 0 < duty <= 1".into()))
            }
            TemporalPattern::Phased(phases) if phases.is_empty() || phases.iter().all(|p| p.duration == 0) => {
                Err(Error::Config("phased pattern needs a phase with positive duration".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn sampler(&self) -> Result<VictimSampler> {
        self.validate()?;
        let dist = WeightedIndex::new(&self.set_weights)
            .map_err(|e| Error::Config(format!("victim `{}`: {e}", self.class_label)))?;
        Ok(VictimSampler {
            spec: self.clone(),
            dist,
        })
    }
}

/// A validated victim ready to draw accesses.
#[derive(Clone, Debug)]
pub struct VictimSampler {
    spec: VictimSpec,
    dist: WeightedIndex<f64>,
}

impl VictimSampler {
    pub fn spec(&self) -> &VictimSpec {
        &self.spec
    }

    /// Whether the victim is active at `time`, and the weight rotation then.
    fn modulation(&self, time: u64) -> (bool, i64) {
        match &self.spec.temporal_pattern {
            TemporalPattern::Constant => (true, 0),
            TemporalPattern::Burst { period, duty, phase } => {
                let period = *period as u64;
                let on = ((duty * period as f64).round() as u64).clamp(1, period);
                ((time + *phase as u64) % period < on, 0)
            }
            TemporalPattern::Phased(phases) => {
                let total: u64 = phases.iter().map(|p| p.duration as u64).sum();
                let mut t = time % total;
                for p in phases {
                    if t < p.duration as u64 {
                        return (true, p.shift);
                    }
                    t -= p.duration as u64;
                }
                unreachable!("time reduced modulo the total duration")
            }
        }
    }
}

/// Set indices the victim touches in one step at `time`.
pub fn victim_step<R: Rng + ?Sized>(victim: &VictimSampler, time: u64, rng: &mut R) -> Vec<usize> {
    let (active, shift) = victim.modulation(time);
    if !active {
        return Vec::new();
    }
    let n = victim.spec.set_weights.len() as i64;
    (0..victim.spec.accesses_per_step)
        .map(|_| {
            let s = victim.dist.sample(rng) as i64;
            (s + shift).rem_euclid(n) as usize
        })
        .collect()
}

/// Fills the set with the eviction set's lines.
pub fn prime(cache: &mut Cache, lines: &[PhysAddr]) {
    for &l in lines {
        cache.access(l);
    }
}

/// Re-accesses the lines in reverse prime order; returns the timer reading
/// of the total probe latency.
pub fn probe(cache: &mut Cache, lines: &[PhysAddr]) -> f64 {
    let total: u64 = lines.iter().rev().map(|&l| cache.access(l).latency).sum();
    cache.quantize(total as f64)
}

/// Primes then immediately probes one eviction set.
pub fn prime_probe(cache: &mut Cache, pool: &MemoryPool, ev: &EvictionSet) -> Result<f64> {
    let ways = cache.config().associativity;
    if ev.len() < ways {
        return Err(Error::Contract(format!(
            "eviction set has {} members, need at least {ways}",
            ev.len()
        )));
    }
    let lines = pool.translate_all(&ev.working_addresses(ways))?;
    prime(cache, &lines);
    Ok(probe(cache, &lines))
}

/// Captured probe durations, one row per slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub mode: CaptureMode,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    /// Virtual mode: `virtual_set << 16 | slot_within_set`. Physical mode:
    /// the true set index.
    pub slot_ids: Vec<u32>,
    /// Row-major, nanoseconds.
    pub samples: Vec<u32>,
}

const TRACE_MAGIC: &[u8; 4] = b"CTRC";
const TRACE_VERSION: u16 = 1;

pub fn virtual_slot_id(virtual_set: usize, slot: usize) -> u32 {
    ((virtual_set as u32) << 16) | slot as u32
}

impl Trace {
    pub fn row(&self, i: usize) -> &[u32] {
        &self.samples[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    /// Virtual set of a row (virtual mode only; physical rows are their own group).
    pub fn group_of(&self, row: usize) -> usize {
        match self.mode {
            CaptureMode::Virtual => (self.slot_ids[row] >> 16) as usize,
            CaptureMode::Physical => self.slot_ids[row] as usize,
        }
    }

    /// Rows grouped by virtual set, groups in first-appearance order.
    pub fn virtual_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for row in 0..self.rows {
            let g = self.group_of(row);
            match groups.iter_mut().find(|(id, _)| *id == g) {
                Some((_, rows)) => rows.push(row),
                None => groups.push((g, vec![row])),
            }
        }
        groups.into_iter().map(|(_, rows)| rows).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(23 + 4 * (self.rows + self.samples.len()));
        out.extend_from_slice(TRACE_MAGIC);
        out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
        out.push(self.mode.code());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for id in &self.slot_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for v in &self.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("trace", d);
        if bytes.len() < 23 || &bytes[..4] != TRACE_MAGIC {
            return Err(bad("missing CTRC header".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != TRACE_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mode = CaptureMode::from_code(bytes[6])?;
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let rows = u32_at(7) as usize;
        let cols = u32_at(11) as usize;
        let seed = u64::from_le_bytes(bytes[15..23].try_into().unwrap());
        let expected = 23 + 4 * (rows + rows * cols);
        if bytes.len() != expected {
            return Err(bad(format!(
                "{rows}x{cols} trace needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let slot_ids = (0..rows).map(|i| u32_at(23 + 4 * i)).collect();
        let base = 23 + 4 * rows;
        let samples = (0..rows * cols).map(|i| u32_at(base + 4 * i)).collect();
        Ok(Trace {
            mode,
            rows,
            cols,
            seed,
            slot_ids,
            samples,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Debug mirror of the binary file: `slot_id,s0,s1,...` per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot_id");
        for c in 0..self.cols {
            write!(out, ",s{c}").unwrap();
        }
        out.push('\n');
        for r in 0..self.rows {
            write!(out, "{}", self.slot_ids[r]).unwrap();
            for v in self.row(r) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

struct Slot {
    id: u32,
    set: usize,
    lines: Vec<PhysAddr>,
}

fn build_slots(
    config: &CacheConfig,
    pool: &MemoryPool,
    catalog: &EvictionCatalog,
    mode: CaptureMode,
    oracle: Option<&Oracle<'_>>,
) -> Result<Vec<Slot>> {
    let ways = config.associativity;
    let mut slots = Vec::new();
    for (v, k, ev) in catalog.derived_sets(config) {
        if ev.len() < ways {
            return Err(Error::Contract(format!(
                "catalog set {v} has {} members, need at least {ways}",
                ev.len()
            )));
        }
        let lines = pool.translate_all(&ev.working_addresses(ways))?;
        let id = match mode {
            CaptureMode::Virtual => virtual_slot_id(v, k),
            CaptureMode::Physical => {
                let oracle = oracle.ok_or(Error::Privilege)?;
                oracle_target(&ev, oracle)?.0 as u32
            }
        };
        // the simulator routes victim accesses by the set the lines occupy
        let set = config.set_index(lines[0])?;
        slots.push(Slot { id, set, lines });
    }
    if mode == CaptureMode::Physical {
        slots.sort_by_key(|s| s.id);
        let ascending = slots.iter().enumerate().all(|(i, s)| s.id as usize == i);
        if slots.len() != config.set_count() || !ascending {
            return Err(Error::Contract(
                "physical-mode capture needs a catalog covering every set exactly once".into(),
            ));
        }
    }
    Ok(slots)
}

/// Profiles the LLC while the victim runs.
pub fn capture(
    cache: &mut Cache,
    pool: &MemoryPool,
    catalog: &EvictionCatalog,
    victim: &VictimSpec,
    cfg: &CaptureConfig,
    oracle: Option<&Oracle<'_>>,
) -> Result<Trace> {
    let config = cache.config().clone();
    cfg.validate(&config)?;
    if cfg.mode == CaptureMode::Physical && oracle.is_none() {
        return Err(Error::Privilege);
    }
    if victim.set_weights.len() != config.set_count() {
        return Err(Error::Shape(format!(
            "victim has {} set weights, cache has {} sets",
            victim.set_weights.len(),
            config.set_count()
        )));
    }
    let sampler = victim.sampler()?;
    let slots = build_slots(&config, pool, catalog, cfg.mode, oracle)?;
    let rows = slots.len();
    let cols = cfg.samples_per_slot(&config);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(victim.seed, cfg.seed));
    let mut samples = vec![0u32; rows * cols];

    let set_count = config.set_count();
    let mut covered = vec![false; set_count];
    for s in &slots {
        covered[s.set] = true;
    }
    let mut pending = vec![0usize; set_count];

    match cfg.interleave {
        Interleave::Bucketed => {
            for round in 0..cols {
                pending.iter_mut().for_each(|c| *c = 0);
                for _ in 0..rows {
                    for s in victim_step(&sampler, round as u64, &mut rng) {
                        pending[s] += 1;
                    }
                }
                for (row, slot) in slots.iter().enumerate() {
                    prime(cache, &slot.lines);
                    for k in 0..pending[slot.set] {
                        cache.access(config.victim_line(slot.set, k));
                    }
                    samples[row * cols + round] = probe(cache, &slot.lines) as u32;
                }
                for set in (0..set_count).filter(|&s| !covered[s]) {
                    for k in 0..pending[set] {
                        cache.access(config.victim_line(set, k));
                    }
                }
            }
        }
        Interleave::Poisson { mean_steps } => {
            let steps = Poisson::new(mean_steps).map_err(|e| Error::Config(e.to_string()))?;
            // rolling line index per set so repeated touches use distinct lines
            let mut next_line = vec![0usize; set_count];
            for round in 0..cols {
                for (row, slot) in slots.iter().enumerate() {
                    prime(cache, &slot.lines);
                    let n: f64 = steps.sample(&mut rng);
                    for _ in 0..n as u64 {
                        for s in victim_step(&sampler, round as u64, &mut rng) {
                            cache.access(config.victim_line(s, next_line[s]));
                            next_line[s] += 1;
                        }
                    }
                    samples[row * cols + round] = probe(cache, &slot.lines) as u32;
                }
            }
        }
    }

    Ok(Trace {
        mode: cfg.mode,
        rows,
        cols,
        seed: cfg.seed,
        slot_ids: slots.iter().map(|s| s.id).collect(),
        samples,
    })
}

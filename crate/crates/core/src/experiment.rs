//! Experiment orchestration behind the `cacheloom` command: configuration,
//! the synthetic victim roster, dataset generation, capture manifests and
//! the full discovery-to-evaluation pipeline.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{allocate_pool, mix_seed, Cache, CacheConfig, MemoryPool, Oracle, PageMapping, ReplacementPolicy};
use crate::classify::{
    holdout_split, roc_auc, train_cnn, train_softmax, CnnConfig, Dataset, MetricsReport, Model, RocCurve,
    SoftmaxHyper,
};
use crate::error::{Error, Result};
use crate::evset::{build_catalog, verify_catalog, EvSearchParams, EvictionCatalog, VerificationReport};
use crate::features::{build_feature_vector, fit_series_length, FeatureKind, FeatureParams, FeatureVector};
use crate::profiler::{capture, CaptureConfig, CaptureMode, Interleave, TemporalPattern, Trace, VictimSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    /// `desk` or `full`.
    pub preset: String,
    /// key=value cache config file; overrides the preset.
    pub file: Option<PathBuf>,
    pub policy: Option<String>,
    pub jitter_stddev: Option<u64>,
}

impl Default for CacheSection {
    fn default() -> Self {
        CacheSection {
            preset: "desk".into(),
            file: None,
            policy: None,
            jitter_stddev: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub r: Option<u32>,
    pub tau_jump: Option<f64>,
    pub pool_pages: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureSection {
    pub n_t: usize,
    pub mode: String,
    /// `bucketed` or `poisson`.
    pub interleave: String,
    pub poisson_mean: f64,
}

impl Default for CaptureSection {
    fn default() -> Self {
        CaptureSection {
            n_t: 4096,
            mode: "virtual".into(),
            interleave: "bucketed".into(),
            poisson_mean: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosterSection {
    /// Size of the synthetic roster (labels `app00`, `app01`, ...).
    pub classes: usize,
    /// Labels held out of training and treated as unknown.
    pub unknown: Vec<String>,
    pub captures_per_class: usize,
    pub train_fraction: f64,
}

impl Default for RosterSection {
    fn default() -> Self {
        RosterSection {
            classes: 10,
            unknown: Vec::new(),
            captures_per_class: 100,
            train_fraction: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub kind: String,
    pub tau_o: f64,
    pub tau_h: f64,
    pub n_fft: usize,
    pub series_len: Option<usize>,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            kind: "virtual_fft".into(),
            tau_o: 5000.0,
            tau_h: 750.0,
            n_fft: 32,
            series_len: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    /// `cnn` or `softmax`.
    pub kind: String,
    pub conv_filters: [usize; 2],
    pub kernel_size: usize,
    pub pool_size: usize,
    pub dropout_rate: f64,
    pub dense_units: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub validation_fraction: f64,
    pub softmax_learning_rate: f64,
    pub softmax_l2: f64,
    pub softmax_epochs: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let cnn = CnnConfig::desk(1);
        let soft = SoftmaxHyper::default();
        ClassifierSection {
            kind: "cnn".into(),
            conv_filters: cnn.conv_filters,
            kernel_size: cnn.kernel_size,
            pool_size: cnn.pool_size,
            dropout_rate: cnn.dropout_rate,
            dense_units: cnn.dense_units,
            batch_size: cnn.batch_size,
            learning_rate: cnn.learning_rate,
            epochs: cnn.epochs,
            patience: cnn.patience,
            min_delta: cnn.min_delta,
            validation_fraction: cnn.validation_fraction,
            softmax_learning_rate: soft.learning_rate,
            softmax_l2: soft.l2,
            softmax_epochs: soft.epochs,
        }
    }
}

/// Whole-experiment configuration, stored as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub cache: CacheSection,
    pub search: SearchSection,
    pub capture: CaptureSection,
    pub roster: RosterSection,
    pub features: FeatureSection,
    pub classifier: ClassifierSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            output_dir: PathBuf::from("cacheloom-out"),
            cache: CacheSection::default(),
            search: SearchSection::default(),
            capture: CaptureSection::default(),
            roster: RosterSection::default(),
            features: FeatureSection::default(),
            classifier: ClassifierSection::default(),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Softmax,
    Cnn,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(ClassifierKind::Softmax),
            "cnn" => Ok(ClassifierKind::Cnn),
            other => Err(Error::Config(format!("unknown classifier `{other}`"))),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let labels = roster_labels(self.roster.classes);
        for (i, u) in self.roster.unknown.iter().enumerate() {
            if !labels.contains(u) {
                return Err(Error::Config(format!("unknown-class label `{u}` is not in the roster")));
            }
            if self.roster.unknown[..i].contains(u) {
                return Err(Error::Config(format!("unknown-class label `{u}` listed twice")));
            }
        }
        if self.known_labels().is_empty() {
            return Err(Error::Config("every roster class is marked unknown".into()));
        }
        let cache = self.cache_config()?;
        self.capture_config(self.capture_mode()?, 0)?.validate(&cache)?;
        self.feature_params().validate()?;
        self.feature_kind()?;
        self.classifier_kind()?;
        self.search_params(&cache).validate()
    }

    pub fn cache_config(&self) -> Result<CacheConfig> {
        let mut config = match &self.cache.file {
            Some(path) => CacheConfig::load(path)?,
            None => match self.cache.preset.as_str() {
                "desk" => CacheConfig::desk(),
                "full" => CacheConfig::full_scale(),
                other => return Err(Error::Config(format!("unknown cache preset `{other}`"))),
            },
        };
        if let Some(policy) = &self.cache.policy {
            config.replacement = policy.parse::<ReplacementPolicy>()?;
        }
        if let Some(j) = self.cache.jitter_stddev {
            config.jitter_stddev = j;
        }
        config.seed = self.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn search_params(&self, cache: &CacheConfig) -> EvSearchParams {
        let mut p = EvSearchParams::for_config(cache);
        if let Some(r) = self.search.r {
            p.r = r;
        }
        if let Some(t) = self.search.tau_jump {
            p.tau_jump = t;
        }
        if let Some(n) = self.search.pool_pages {
            p.pool_pages = n;
        }
        p
    }

    pub fn capture_mode(&self) -> Result<CaptureMode> {
        self.capture.mode.parse()
    }

    pub fn capture_config(&self, mode: CaptureMode, seed: u64) -> Result<CaptureConfig> {
        let interleave = match self.capture.interleave.as_str() {
            "bucketed" => Interleave::Bucketed,
            "poisson" => Interleave::Poisson {
                mean_steps: self.capture.poisson_mean,
            },
            other => return Err(Error::Config(format!("unknown interleave `{other}`"))),
        };
        Ok(CaptureConfig {
            n_t: self.capture.n_t,
            mode,
            seed,
            interleave,
        })
    }

    pub fn feature_kind(&self) -> Result<FeatureKind> {
        self.features.kind.parse()
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            tau_o: self.features.tau_o,
            tau_h: self.features.tau_h,
            n_fft: self.features.n_fft,
            series_len: self.features.series_len,
        }
    }

    pub fn classifier_kind(&self) -> Result<ClassifierKind> {
        self.classifier.kind.parse()
    }

    pub fn cnn_config(&self, num_classes: usize) -> CnnConfig {
        let c = &self.classifier;
        CnnConfig {
            conv_filters: c.conv_filters,
            kernel_size: c.kernel_size,
            pool_size: c.pool_size,
            dropout_rate: c.dropout_rate,
            dense_units: c.dense_units,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            patience: c.patience,
            min_delta: c.min_delta,
            validation_fraction: c.validation_fraction,
            seed: mix_seed(self.seed, 0x636e6e),
            ..CnnConfig::desk(num_classes)
        }
        .with_env_threads()
    }

    pub fn softmax_hyper(&self) -> SoftmaxHyper {
        SoftmaxHyper {
            learning_rate: self.classifier.softmax_learning_rate,
            l2: self.classifier.softmax_l2,
            epochs: self.classifier.softmax_epochs,
            seed: self.seed,
        }
    }

    pub fn roster(&self) -> Result<Vec<VictimSpec>> {
        synthetic_roster(&self.cache_config()?, self.roster.classes)
    }

    pub fn known_labels(&self) -> Vec<String> {
        roster_labels(self.roster.classes)
            .into_iter()
            .filter(|l| !self.roster.unknown.contains(l))
            .collect()
    }
}

pub fn roster_labels(classes: usize) -> Vec<String> {
    (0..classes).map(|i| format!("app{i:02}")).collect()
}

/// Synthetic victims: class `i` puts 90% of its accesses on a block of a
/// quarter of the sets, starting at a class-specific offset, spreads the
/// rest uniformly, and runs in bursts with period `3 + i` sample rounds.
///
/// A round gives the victim one step per probed set, so a hot set sees
/// about 3.6 victim lines per window: well below full eviction, which on
/// the desk cache would exceed the outlier threshold and be discarded.
pub fn synthetic_roster(config: &CacheConfig, classes: usize) -> Result<Vec<VictimSpec>> {
    let sets = config.set_count();
    let block = (sets / 4).max(1);
    roster_labels(classes)
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let start = (i * 37 * sets / 100) % sets;
            let mut weights = vec![0.1 / sets as f64; sets];
            for k in 0..block {
                weights[(start + k) % sets] += 0.9 / block as f64;
            }
            let sum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= sum);
            let spec = VictimSpec {
                class_label: label,
                set_weights: weights,
                accesses_per_step: 1,
                temporal_pattern: TemporalPattern::Burst {
                    period: 3 + i as u32,
                    duty: 0.5,
                    phase: 0,
                },
                seed: 0,
            };
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

/// The victim as run for one capture: own seed and a random burst phase.
pub fn victim_for_capture(spec: &VictimSpec, capture_seed: u64) -> VictimSpec {
    let mut v = spec.clone();
    v.seed = capture_seed;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(capture_seed, 0x7068));
    if let TemporalPattern::Burst { period, phase, .. } = &mut v.temporal_pattern {
        *phase = rng.gen_range(0..*period);
    }
    v
}

/// Seed of the `index`-th capture of roster class `class`.
pub fn capture_seed(experiment_seed: u64, class: usize, index: usize) -> u64 {
    mix_seed(mix_seed(experiment_seed, 0x1000 + class as u64), index as u64)
}

/// A discovered eviction-set catalog with the pool it refers to.
pub struct Session {
    pub config: CacheConfig,
    pub pool: MemoryPool,
    pub catalog: EvictionCatalog,
}

impl Session {
    fn pool_for(cfg: &ExperimentConfig, config: &CacheConfig) -> Result<MemoryPool> {
        let params = cfg.search_params(config);
        allocate_pool(config, params.pool_pages, PageMapping::RandomPermutation, cfg.seed)
    }

    /// Runs eviction-set discovery and verifies it against the oracle.
    pub fn discover(cfg: &ExperimentConfig) -> Result<(Session, VerificationReport)> {
        let config = cfg.cache_config()?;
        let params = cfg.search_params(&config);
        let pool = Self::pool_for(cfg, &config)?;
        let mut cache = Cache::new(config.clone())?;
        let catalog = build_catalog(&pool, &mut cache, &params)?;
        let report = verify_catalog(&catalog, &Oracle::grant(&config, &pool))?;
        Ok((Session { config, pool, catalog }, report))
    }

    /// Rebuilds the pool deterministically and pairs it with a saved catalog.
    pub fn with_catalog(cfg: &ExperimentConfig, catalog: EvictionCatalog) -> Result<Session> {
        let config = cfg.cache_config()?;
        let pool = Self::pool_for(cfg, &config)?;
        Ok(Session { config, pool, catalog })
    }

    pub fn capture(&self, cfg: &ExperimentConfig, victim: &VictimSpec, seed: u64, mode: CaptureMode) -> Result<Trace> {
        let mut cache = Cache::new(self.config.clone().with_seed(mix_seed(seed, 0x6361)))?;
        let oracle = Oracle::grant(&self.config, &self.pool);
        let cc = cfg.capture_config(mode, seed)?;
        capture(&mut cache, &self.pool, &self.catalog, &victim_for_capture(victim, seed), &cc, Some(&oracle))
    }
}

/// One captured trace, as listed in a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub label: String,
    pub seed: u64,
    pub mode: CaptureMode,
}

const MANIFEST_HEADER: &str = "# file\tlabel\tseed\tmode";

pub fn manifest_to_text(entries: &[ManifestEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        writeln!(out, "{}\t{}\t{}\t{}", e.file, e.label, e.seed, e.mode).unwrap();
    }
    out
}

pub fn manifest_from_text(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            let [file, label, seed, mode] = fields[..] else {
                return Err(Error::format("manifest", format!("line {}: expected 4 tab-separated fields", n + 1)));
            };
            Ok(ManifestEntry {
                file: file.to_string(),
                label: label.to_string(),
                seed: seed
                    .parse()
                    .map_err(|e| Error::format("manifest", format!("line {}: seed `{seed}`: {e}", n + 1)))?,
                mode: mode.parse()?,
            })
        })
        .collect()
}

/// Captures `count` traces of `label` and writes them next to a manifest.
/// With `seeds` given, those seeds are replayed instead.
pub fn capture_to_dir(
    session: &Session,
    cfg: &ExperimentConfig,
    label: &str,
    count: usize,
    mode: CaptureMode,
    dir: &Path,
    seeds: Option<&[u64]>,
) -> Result<Vec<ManifestEntry>> {
    let roster = cfg.roster()?;
    let class = roster
        .iter()
        .position(|v| v.class_label == label)
        .ok_or_else(|| Error::Config(format!("no victim class `{label}` in the roster")))?;
    let seeds: Vec<u64> = match seeds {
        Some(s) => s.to_vec(),
        None => (0..count).map(|i| capture_seed(cfg.seed, class, i)).collect(),
    };
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let trace = session.capture(cfg, &roster[class], seed, mode)?;
        let file = format!("{label}-{i:04}.ctrc");
        trace.write(dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            label: label.to_string(),
            seed,
            mode,
        });
    }
    Ok(entries)
}

/// Captures and featurizes `count` profiles per listed class, in memory.
pub fn generate_features(
    session: &Session,
    cfg: &ExperimentConfig,
    labels: &[String],
    count: usize,
    mode: CaptureMode,
    kinds: &[(FeatureKind, FeatureParams)],
) -> Result<Vec<Vec<FeatureVector>>> {
    let roster = cfg.roster()?;
    let mut out = vec![Vec::new(); kinds.len()];
    for label in labels {
        let class = roster
            .iter()
            .position(|v| &v.class_label == label)
            .ok_or_else(|| Error::Config(format!("no victim class `{label}` in the roster")))?;
        for i in 0..count {
            let trace = session.capture(cfg, &roster[class], capture_seed(cfg.seed, class, i), mode)?;
            for (slot, (kind, params)) in out.iter_mut().zip(kinds) {
                slot.push(build_feature_vector(&trace, *kind, params)?.with_label(label.clone()));
            }
        }
    }
    Ok(out)
}

/// Feature vectors from traces, fitting the virtual kind's series length
/// on these traces when it is not fixed.
pub fn featurize_traces(traces: &[(String, Trace)], kind: FeatureKind, params: &FeatureParams) -> Result<(Vec<FeatureVector>, FeatureParams)> {
    let mut params = params.clone();
    if kind == FeatureKind::Virtual && params.series_len.is_none() {
        params.series_len = Some(fit_series_length(traces.iter().map(|(_, t)| t), &params)?);
    }
    let vectors = traces
        .iter()
        .map(|(label, t)| Ok(build_feature_vector(t, kind, &params)?.with_label(label.clone())))
        .collect::<Result<Vec<_>>>()?;
    Ok((vectors, params))
}

pub fn train_model(cfg: &ExperimentConfig, kind: ClassifierKind, train: &Dataset) -> Result<Model> {
    match kind {
        ClassifierKind::Softmax => train_softmax(train, &cfg.softmax_hyper()),
        ClassifierKind::Cnn => train_cnn(train, &cfg.cnn_config(train.num_classes())),
    }
}

/// Accuracy after training on the first `n` training profiles per class,
/// for each `n` in `sizes`.
pub fn profiles_sweep(
    cfg: &ExperimentConfig,
    kind: ClassifierKind,
    train: &Dataset,
    test: &Dataset,
    sizes: &[usize],
) -> Result<Vec<(usize, f64)>> {
    sizes
        .iter()
        .map(|&n| {
            let mut taken = vec![0usize; train.num_classes()];
            let idx: Vec<usize> = (0..train.len())
                .filter(|&i| {
                    let y = train.labels[i];
                    taken[y] += 1;
                    taken[y] <= n
                })
                .collect();
            let model = train_model(cfg, kind, &train.subset(&idx))?;
            Ok((n, model.evaluate(test)?.1))
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("profiles_per_class,accuracy\n");
    for (n, a) in rows {
        writeln!(out, "{n},{a:.6}").unwrap();
    }
    out
}

pub fn write_labels(model_path: &Path, class_names: &[String]) -> Result<()> {
    fs::write(labels_path(model_path), class_names.join("\n") + "\n")?;
    Ok(())
}

pub fn read_labels(model_path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(labels_path(model_path))?
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn labels_path(model_path: &Path) -> PathBuf {
    let mut p = model_path.as_os_str().to_owned();
    p.push(".labels");
    PathBuf::from(p)
}

pub fn verification_text(report: &VerificationReport, catalog: &EvictionCatalog) -> String {
    format!(
        "reported_sets {}\nunique_sets {}\ncoverage {:.6}\npurity {:.6}\nduplicates {}\n",
        catalog.reported_count,
        catalog.unique_sets.len(),
        report.coverage_fraction,
        report.purity_fraction,
        report.duplicate_count
    )
}

/// Outcome of [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub verification: VerificationReport,
    pub metrics: MetricsReport,
    pub roc: RocCurve,
    pub output_dir: PathBuf,
}

/// Discovery, capture, featurization, training and evaluation for the
/// known classes, writing every artifact and a replay manifest.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("experiment.toml"), cfg.to_toml())?;

    let (session, verification) = Session::discover(cfg)?;
    session.catalog.save(dir.join("catalog.txt"))?;
    fs::write(dir.join("verification.txt"), verification_text(&verification, &session.catalog))?;
    if verification.coverage_fraction < 1.0 {
        log::warn!("catalog covers {:.4} of the cache", verification.coverage_fraction);
    }

    let mode = cfg.capture_mode()?;
    let kind = cfg.feature_kind()?;
    let labels = cfg.known_labels();
    let roster = cfg.roster()?;
    let mut manifest = Vec::new();
    let mut traces = Vec::new();
    for label in &labels {
        let class = roster.iter().position(|v| &v.class_label == label).unwrap();
        for i in 0..cfg.roster.captures_per_class {
            let seed = capture_seed(cfg.seed, class, i);
            traces.push((label.clone(), session.capture(cfg, &roster[class], seed, mode)?));
            manifest.push(ManifestEntry {
                file: String::new(),
                label: label.clone(),
                seed,
                mode,
            });
        }
    }
    fs::write(dir.join("manifest.tsv"), manifest_to_text(&manifest))?;
    let (vectors, params) = featurize_traces(&traces, kind, &cfg.feature_params())?;
    drop(traces);
    crate::features::write_feature_csv(dir.join("features.csv"), &vectors)?;
    if let Some(l) = params.series_len {
        fs::write(dir.join("series_len.txt"), format!("{l}\n"))?;
    }

    let data = Dataset::from_vectors(&vectors)?;
    let (train, test) = holdout_split(&data, cfg.roster.train_fraction, mix_seed(cfg.seed, 0x73706c))?;
    let model = train_model(cfg, cfg.classifier_kind()?, &train)?;
    let model_path = dir.join("model.cmdl");
    model.write(&model_path)?;
    write_labels(&model_path, &data.class_names)?;

    let metrics = MetricsReport::compute(&model, &test)?;
    fs::write(dir.join("metrics.txt"), metrics.to_text())?;
    let scores: Vec<Vec<f64>> = model.predict_all(&test.features)?.into_iter().map(|p| p.probabilities).collect();
    let roc = roc_auc(&scores, &test.labels)?;
    fs::write(dir.join("roc.csv"), roc.to_csv(&data.class_names))?;
    Ok(PipelineReport {
        verification,
        metrics,
        roc,
        output_dir: dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("seed = 9\n[roster]\nunknown = [\"app03\"]\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.known_labels().len(), 9);
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[roster]\nunknown = [\"nope\"]\n").is_err());
        assert!(ExperimentConfig::from_toml("[roster]\nunknown = [\"app01\", \"app01\"]\n").is_err());
    }

    #[test]
    fn roster_is_valid_and_distinct() {
        let roster = synthetic_roster(&CacheConfig::desk(), 10).unwrap();
        assert_eq!(roster.len(), 10);
        for (i, a) in roster.iter().enumerate() {
            for b in &roster[i + 1..] {
                assert_ne!(a.set_weights, b.set_weights);
            }
        }
        let v = victim_for_capture(&roster[4], 77);
        let TemporalPattern::Burst { period, phase, .. } = v.temporal_pattern else { panic!() };
        assert!(phase < period);
        assert_eq!(v, victim_for_capture(&roster[4], 77));
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![
            ManifestEntry {
                file: "app00-0000.ctrc".into(),
                label: "app00".into(),
                seed: u64::MAX,
                mode: CaptureMode::Virtual,
            },
            ManifestEntry {
                file: "x".into(),
                label: "app01".into(),
                seed: 3,
                mode: CaptureMode::Physical,
            },
        ];
        let text = manifest_to_text(&entries);
        assert_eq!(manifest_from_text(&text).unwrap(), entries);
        assert!(manifest_from_text("a\tb\n").is_err());
        assert!(manifest_from_text(MANIFEST_HEADER).unwrap().is_empty());
    }

    #[test]
    fn capture_seeds_are_distinct() {
        let mut seeds: Vec<u64> = (0..10).flat_map(|c| (0..50).map(move |i| capture_seed(1, c, i))).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 500);
    }

    #[test]
    fn labels_sidecar_path() {
        assert_eq!(labels_path(Path::new("out/model.cmdl")), PathBuf::from("out/model.cmdl.labels"));
    }
}

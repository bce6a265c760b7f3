//! Classifiers over feature vectors: a softmax-regression baseline and a
//! small 1-D CNN, plus unknown-class rejection and evaluation metrics.

mod model_io;
pub mod network;
pub mod roc;
pub mod softmax;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::mix_seed;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

use network::{evaluate, fit, EpochStats, Network, Optimizer, TrainOptions};

pub use roc::{binary_roc, roc_auc, trapezoid_auc, RocCurve};
pub use softmax::{train_softmax, SoftmaxHyper};

/// Labelled feature matrix; labels index `class_names`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|f| f.len() != first.len()) {
                return Err(Error::Shape("feature vectors of differing lengths".into()));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::Contract(format!("label {y} outside the {} classes", class_names.len())));
        }
        Ok(Dataset {
            features,
            labels,
            class_names,
        })
    }

    /// Classes in order of first appearance.
    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        for v in vectors {
            let label = v.label.as_ref().ok_or_else(|| Error::Contract("unlabelled feature vector".into()))?;
            if !names.contains(label) {
                names.push(label.clone());
            }
        }
        Self::with_classes(vectors, &names)
    }

    /// Maps labels onto an existing class list; unlisted labels are an error.
    pub fn with_classes(vectors: &[FeatureVector], class_names: &[String]) -> Result<Self> {
        let mut labels = Vec::with_capacity(vectors.len());
        for v in vectors {
            let label = v.label.as_deref().unwrap_or("");
            let y = class_names
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| Error::Contract(format!("label `{label}` is not one of the model's classes")))?;
            labels.push(y);
        }
        Self::new(
            vectors.iter().map(|v| v.values.clone()).collect(),
            labels,
            class_names.to_vec(),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_len(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    fn by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in self.labels.iter().enumerate() {
            groups.entry(y).or_default().push(i);
        }
        groups
    }
}

/// Stratified random split. Each class keeps round(fraction * n) training
/// examples, clamped so both sides get at least one.
pub fn holdout_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in data.by_class() {
        if idx.len() < 2 {
            return Err(Error::Split(format!(
                "class `{}` has {} example(s), need at least 2",
                data.class_names[class],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

/// Per-feature z-scoring fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant features get scale 1.
    pub fn fit(xs: &[Vec<f64>]) -> Result<Self> {
        let first = xs.first().ok_or_else(|| Error::Contract("cannot standardize an empty set".into()))?;
        let d = first.len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-18 { v.sqrt() } else { 1.0 }).collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.len() {
            return Err(Error::Shape(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.len()
            )));
        }
        Ok(x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect())
    }

    pub fn apply_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.apply(x)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnShape {
    pub conv_filters: [usize; 2],
    pub kernel_size: usize,
    pub pool_size: usize,
    pub dropout_rate: f64,
    pub dense_units: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    Softmax,
    Cnn(CnnShape),
}

impl Architecture {
    pub fn tag(&self) -> u8 {
        match self {
            Architecture::Softmax => 0,
            Architecture::Cnn(_) => 1,
        }
    }
}

/// Final metrics of the selected parameters; NaN where not measured.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSummary {
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

impl Default for TrainingSummary {
    fn default() -> Self {
        TrainingSummary {
            train_loss: f64::NAN,
            val_loss: f64::NAN,
            train_accuracy: f64::NAN,
            val_accuracy: f64::NAN,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub architecture: Architecture,
    pub network: Network,
    pub scaler: Standardizer,
    pub summary: TrainingSummary,
    /// Per-epoch loss curve; not persisted.
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub predicted: usize,
    pub confidence: f64,
}

impl Model {
    pub fn input_len(&self) -> usize {
        self.scaler.len()
    }

    pub fn num_classes(&self) -> usize {
        self.network.num_classes()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let logits = self.network.logits(&self.scaler.apply(x)?)?;
        let probabilities = network::softmax(&logits);
        let predicted = network::argmax(&probabilities);
        Ok(Prediction {
            confidence: probabilities[predicted],
            predicted,
            probabilities,
        })
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Mean cross-entropy and accuracy.
    pub fn evaluate(&self, data: &Dataset) -> Result<(f64, f64)> {
        evaluate(&self.network, &self.scaler.apply_all(&data.features)?, &data.labels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnConfig {
    pub conv_filters: [usize; 2],
    pub kernel_size: usize,
    pub pool_size: usize,
    pub dropout_rate: f64,
    pub dense_units: usize,
    pub num_classes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Share of the training set held back for model selection.
    pub validation_fraction: f64,
    pub patience: usize,
    /// Smallest validation-loss drop that resets the patience counter.
    pub min_delta: f64,
    /// See [`TrainOptions::threads`].
    pub threads: usize,
}

impl CnnConfig {
    /// The full-size network: 512-256 filters, kernel 9, pool 2, dropout 0.2, dense 200.
    pub fn full_size(num_classes: usize) -> Self {
        CnnConfig {
            conv_filters: [512, 256],
            kernel_size: 9,
            pool_size: 2,
            dropout_rate: 0.2,
            dense_units: 200,
            num_classes,
            batch_size: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 400,
            seed: 0,
            validation_fraction: 0.1,
            patience: 20,
            min_delta: 1e-4,
            threads: 1,
        }
    }

    /// Same shape with 32-16 filters.
    pub fn desk(num_classes: usize) -> Self {
        CnnConfig {
            conv_filters: [32, 16],
            ..Self::full_size(num_classes)
        }
    }

    pub fn shape(&self) -> CnnShape {
        CnnShape {
            conv_filters: self.conv_filters,
            kernel_size: self.kernel_size,
            pool_size: self.pool_size,
            dropout_rate: self.dropout_rate,
            dense_units: self.dense_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.conv_filters[0],
            self.conv_filters[1],
            self.kernel_size,
            self.pool_size,
            self.dense_units,
            self.num_classes,
            self.batch_size,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("CNN sizes must all be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return Err(Error::Config("invalid Adam parameters".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction outside [0, 1)".into()));
        }
        Ok(())
    }

    /// Threads from `CACHELOOM_THREADS` (opt-in parallel batches).
    pub fn with_env_threads(mut self) -> Self {
        if let Some(n) = std::env::var("CACHELOOM_THREADS").ok().and_then(|v| v.parse().ok()) {
            self.threads = n;
        }
        self
    }
}

/// Trains the CNN with Adam on mean cross-entropy. A stratified share of
/// `train` is held back and the epoch with the lowest validation loss wins.
pub fn train_cnn(train: &Dataset, cfg: &CnnConfig) -> Result<Model> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    if let Some(&y) = train.labels.iter().find(|&&y| y >= cfg.num_classes) {
        return Err(Error::Contract(format!("label {y} outside 0..{}", cfg.num_classes)));
    }
    let can_validate = cfg.validation_fraction > 0.0 && train.by_class().values().all(|v| v.len() >= 2);
    let (fit_set, val_set) = if can_validate {
        let (a, b) = holdout_split(train, 1.0 - cfg.validation_fraction, mix_seed(cfg.seed, 0x76616c))?;
        (a, Some(b))
    } else {
        (train.clone(), None)
    };
    let scaler = Standardizer::fit(&fit_set.features)?;
    let xs = scaler.apply_all(&fit_set.features)?;
    let val = match &val_set {
        Some(v) => Some((scaler.apply_all(&v.features)?, v.labels.clone())),
        None => None,
    };
    let mut network = Network::cnn(
        scaler.len(),
        cfg.conv_filters,
        cfg.kernel_size,
        cfg.pool_size,
        cfg.dropout_rate,
        cfg.dense_units,
        cfg.num_classes,
        cfg.seed,
    )?;
    let opts = TrainOptions {
        optimizer: Optimizer::Adam {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        },
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: cfg.seed,
        patience: Some(cfg.patience),
        min_delta: cfg.min_delta,
        threads: cfg.threads.max(1),
    };
    let history = fit(
        &mut network,
        &xs,
        &fit_set.labels,
        val.as_ref().map(|(x, y)| (x.as_slice(), y.as_slice())),
        &opts,
    )?;
    let (train_loss, train_accuracy) = evaluate(&network, &xs, &fit_set.labels)?;
    let (val_loss, val_accuracy) = match &val {
        Some((x, y)) => evaluate(&network, x, y)?,
        None => (f64::NAN, f64::NAN),
    };
    Ok(Model {
        architecture: Architecture::Cnn(cfg.shape()),
        network,
        scaler,
        summary: TrainingSummary {
            train_loss,
            val_loss,
            train_accuracy,
            val_accuracy,
        },
        history,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    Known(usize),
    Unknown,
}

pub const UNKNOWN_LABEL: &str = "UNKNOWN";

/// Argmax class if its probability reaches `threshold`, else unknown.
pub fn decide(prediction: &Prediction, threshold: f64) -> Decision {
    if prediction.confidence >= threshold {
        Decision::Known(prediction.predicted)
    } else {
        Decision::Unknown
    }
}

pub fn classify_with_unknown(model: &Model, x: &[f64], threshold: f64) -> Result<Decision> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Contract(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(decide(&model.predict(x)?, threshold))
}

/// A published threshold with the error rates measured at it.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct OperatingPoint {
    pub name: &'static str,
    pub threshold: f64,
    pub false_positive_rate: f64,
    pub false_negative_rate: f64,
}

pub const APP_OPERATING_POINT: OperatingPoint = OperatingPoint {
    name: "app",
    threshold: 0.84,
    false_positive_rate: 0.03,
    false_negative_rate: 0.01,
};

pub const WEBSITE_OPERATING_POINT: OperatingPoint = OperatingPoint {
    name: "website",
    threshold: 0.74,
    false_positive_rate: 0.16,
    false_negative_rate: 0.03,
};

/// Highest threshold that rejects at most `max_false_unknown` of the given
/// known-class confidences.
pub fn threshold_for_false_unknown(confidences: &[f64], max_false_unknown: f64) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::Contract("no confidences to calibrate on".into()));
    }
    let mut sorted = confidences.to_vec();
    sorted.sort_by(f64::total_cmp);
    let allowed = (max_false_unknown.clamp(0.0, 1.0) * sorted.len() as f64).floor() as usize;
    Ok(sorted[allowed.min(sorted.len() - 1)])
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnknownReport {
    pub threshold: f64,
    /// Share of unknown-class inputs rejected.
    pub unknown_recall: f64,
    /// Share of known-class inputs rejected.
    pub false_unknown_rate: f64,
    /// Share of known-class inputs accepted with the wrong label.
    pub misclassified_rate: f64,
}

pub fn unknown_report(model: &Model, known: &Dataset, unknown: &[Vec<f64>], threshold: f64) -> Result<UnknownReport> {
    let mut rejected_known = 0;
    let mut wrong = 0;
    for (x, &y) in known.features.iter().zip(&known.labels) {
        match classify_with_unknown(model, x, threshold)? {
            Decision::Unknown => rejected_known += 1,
            Decision::Known(p) if p != y => wrong += 1,
            Decision::Known(_) => {}
        }
    }
    let mut rejected_unknown = 0;
    for x in unknown {
        if classify_with_unknown(model, x, threshold)? == Decision::Unknown {
            rejected_unknown += 1;
        }
    }
    let k = known.len().max(1) as f64;
    Ok(UnknownReport {
        threshold,
        unknown_recall: rejected_unknown as f64 / unknown.len().max(1) as f64,
        false_unknown_rate: rejected_known as f64 / k,
        misclassified_rate: wrong as f64 / k,
    })
}

/// `matrix[true][predicted]`.
pub fn confusion_matrix(predicted: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        m[y][p] += 1;
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class_auc: Vec<Option<f64>>,
    pub macro_auc: f64,
    pub confusion: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl MetricsReport {
    pub fn compute(model: &Model, data: &Dataset) -> Result<Self> {
        let preds = model.predict_all(&data.features)?;
        let predicted: Vec<usize> = preds.iter().map(|p| p.predicted).collect();
        let correct = predicted.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
        let scores: Vec<Vec<f64>> = preds.into_iter().map(|p| p.probabilities).collect();
        let roc = roc_auc(&scores, &data.labels)?;
        Ok(MetricsReport {
            accuracy: correct as f64 / data.len().max(1) as f64,
            per_class_auc: roc.per_class_auc,
            macro_auc: roc.auc,
            confusion: confusion_matrix(&predicted, &data.labels, data.num_classes()),
            class_names: data.class_names.clone(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "accuracy   {:.4}", self.accuracy).unwrap();
        writeln!(out, "macro AUC  {:.4}", self.macro_auc).unwrap();
        writeln!(out, "\nclass            AUC").unwrap();
        for (name, auc) in self.class_names.iter().zip(&self.per_class_auc) {
            match auc {
                Some(a) => writeln!(out, "{name:<16} {a:.4}").unwrap(),
                None => writeln!(out, "{name:<16} -").unwrap(),
            }
        }
        writeln!(out, "\nconfusion (rows: true, columns: predicted)").unwrap();
        let width = self.class_names.iter().map(String::len).max().unwrap_or(1).max(5);
        write!(out, "{:width$}", "").unwrap();
        for c in 0..self.class_names.len() {
            write!(out, " {c:>5}").unwrap();
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            write!(out, "{name:width$}").unwrap();
            for v in row {
                write!(out, " {v:>5}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

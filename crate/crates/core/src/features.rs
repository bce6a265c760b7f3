//! Trace post-processing and feature-vector construction.
//!
//! Every slot series goes through the same fixed chain: outlier removal,
//! binarization, burst compression. The FFT variant branches off after
//! binarization so all slots keep the same length.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::profiler::{CaptureMode, Trace};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// One burst count per true set index, ascending.
    Physical,
    /// Compressed binary series per slot, padded or truncated to a fixed length.
    Virtual,
    /// One burst count per slot in discovery order.
    VirtualCount,
    /// `n_fft` frequency bins per virtual set.
    VirtualFft,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Physical => "physical",
            FeatureKind::Virtual => "virtual",
            FeatureKind::VirtualCount => "virtual_count",
            FeatureKind::VirtualFft => "virtual_fft",
        }
    }

    fn required_mode(self) -> CaptureMode {
        match self {
            FeatureKind::Physical => CaptureMode::Physical,
            _ => CaptureMode::Virtual,
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "physical" => Ok(FeatureKind::Physical),
            "virtual" => Ok(FeatureKind::Virtual),
            "virtual_count" | "virtual-count" => Ok(FeatureKind::VirtualCount),
            "virtual_fft" | "virtual-fft" => Ok(FeatureKind::VirtualFft),
            other => Err(Error::Config(format!("unknown feature kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureParams {
    pub tau_o: f64,
    pub tau_h: f64,
    pub n_fft: usize,
    /// Per-slot length L for the virtual kind. `None` keeps every sample
    /// (L = trace columns).
    pub series_len: Option<usize>,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            tau_o: 5000.0,
            tau_h: 750.0,
            n_fft: 15,
            series_len: None,
        }
    }
}

impl FeatureParams {
    pub fn with_n_fft(mut self, n_fft: usize) -> Self {
        self.n_fft = n_fft;
        self
    }

    pub fn with_series_len(mut self, len: usize) -> Self {
        self.series_len = Some(len);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_h > 0.0 && self.tau_o > self.tau_h) {
            return Err(Error::Config(format!(
                "need tau_O > tau_H > 0 (tau_O={}, tau_H={})",
                self.tau_o, self.tau_h
            )));
        }
        if self.n_fft == 0 {
            return Err(Error::Config("n_fft must be at least 1".into()));
        }
        if self.series_len == Some(0) {
            return Err(Error::Config("series length must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
    pub label: Option<String>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Replaces every sample above `tau_o` with the median of the rest.
pub fn remove_outliers(series: &[f64], tau_o: f64) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Contract("outlier removal needs a non-empty series".into()));
    }
    let mut inliers: Vec<f64> = series.iter().copied().filter(|&v| v <= tau_o).collect();
    if inliers.is_empty() {
        return Err(Error::DegenerateSeries);
    }
    if inliers.len() == series.len() {
        return Ok(series.to_vec());
    }
    let m = median(&mut inliers);
    Ok(series.iter().map(|&v| if v > tau_o { m } else { v }).collect())
}

pub fn binarize(series: &[f64], tau_h: f64) -> Vec<u8> {
    series.iter().map(|&v| u8::from(v > tau_h)).collect()
}

/// Collapses each run of ones to a single one.
pub fn compress_bursts(bits: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bits.len());
    let mut previous = 0;
    for &b in bits {
        if b == 0 || previous == 0 {
            out.push(b);
        }
        previous = b;
    }
    out
}

/// Reusable FFT plan for one series length.
pub struct FftBinner {
    len: usize,
    n_fft: usize,
    fft: Arc<dyn Fft<f64>>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl FftBinner {
    pub fn new(len: usize, n_fft: usize) -> Result<Self> {
        if n_fft == 0 || len % 2 != 0 || len < 2 * n_fft {
            return Err(Error::Shape(format!(
                "FFT binning needs an even series of at least 2*n_fft={} samples, got {len}",
                2 * n_fft
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(FftBinner {
            len,
            n_fft,
            fft,
            buffer: vec![Complex::default(); len],
            scratch,
        })
    }

    /// Magnitudes of components 1..=len/2 summed into `n_fft` contiguous bins;
    /// the last bin takes the remainder.
    pub fn bins(&mut self, series: &[f64]) -> Result<Vec<f64>> {
        if series.len() != self.len {
            return Err(Error::Shape(format!(
                "series has {} samples, plan expects {}",
                series.len(),
                self.len
            )));
        }
        for (b, &v) in self.buffer.iter_mut().zip(series) {
            *b = Complex::new(v, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buffer, &mut self.scratch);
        let components = self.len / 2;
        let width = components / self.n_fft;
        let mut bins = vec![0.0; self.n_fft];
        for (i, c) in self.buffer[1..=components].iter().enumerate() {
            bins[(i / width).min(self.n_fft - 1)] += c.norm();
        }
        Ok(bins)
    }
}

pub fn fft_bins(series: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    FftBinner::new(series.len(), n_fft)?.bins(series)
}

fn binary_row(trace: &Trace, row: usize, params: &FeatureParams) -> Result<Vec<u8>> {
    let cleaned = remove_outliers(&trace.row_f64(row), params.tau_o)?;
    Ok(binarize(&cleaned, params.tau_h))
}

fn burst_count(trace: &Trace, row: usize, params: &FeatureParams) -> Result<f64> {
    let bits = compress_bursts(&binary_row(trace, row, params)?);
    Ok(bits.iter().map(|&b| b as f64).sum())
}

pub fn build_feature_vector(trace: &Trace, kind: FeatureKind, params: &FeatureParams) -> Result<FeatureVector> {
    params.validate()?;
    if trace.mode != kind.required_mode() {
        return Err(Error::Contract(format!(
            "{kind} features need a {:?}-mode trace, got {:?}",
            kind.required_mode(),
            trace.mode
        )));
    }
    let values = match kind {
        FeatureKind::Physical | FeatureKind::VirtualCount => {
            (0..trace.rows).map(|r| burst_count(trace, r, params)).collect::<Result<Vec<_>>>()?
        }
        FeatureKind::Virtual => {
            let len = params.series_len.unwrap_or(trace.cols);
            let mut values = Vec::with_capacity(trace.rows * len);
            for r in 0..trace.rows {
                let mut bits = compress_bursts(&binary_row(trace, r, params)?);
                bits.resize(len, 0);
                values.extend(bits.iter().map(|&b| b as f64));
            }
            values
        }
        FeatureKind::VirtualFft => {
            let mut binner = FftBinner::new(trace.cols, params.n_fft)?;
            let mut values = Vec::new();
            for group in trace.virtual_groups() {
                let mut sum = vec![0.0; params.n_fft];
                for r in group {
                    let bits: Vec<f64> = binary_row(trace, r, params)?.iter().map(|&b| b as f64).collect();
                    for (s, b) in sum.iter_mut().zip(binner.bins(&bits)?) {
                        *s += b;
                    }
                }
                values.extend(sum);
            }
            values
        }
    };
    Ok(FeatureVector {
        kind,
        values,
        label: None,
    })
}

/// 95th percentile (nearest rank) of compressed slot lengths over a corpus.
pub fn fit_series_length<'a>(traces: impl IntoIterator<Item = &'a Trace>, params: &FeatureParams) -> Result<usize> {
    let mut lengths = Vec::new();
    for trace in traces {
        for r in 0..trace.rows {
            lengths.push(compress_bursts(&binary_row(trace, r, params)?).len());
        }
    }
    if lengths.is_empty() {
        return Err(Error::Contract("cannot fit a series length on an empty corpus".into()));
    }
    lengths.sort_unstable();
    let rank = (0.95 * lengths.len() as f64).ceil() as usize;
    Ok(lengths[rank.clamp(1, lengths.len()) - 1])
}

/// Feature CSV: `label,f0,f1,...`, one row per vector, 9 significant digits.
pub fn to_feature_csv(vectors: &[FeatureVector]) -> Result<String> {
    let width = vectors.first().map_or(0, |v| v.len());
    let mut out = String::from("label");
    for i in 0..width {
        write!(out, ",f{i}").unwrap();
    }
    out.push('\n');
    for v in vectors {
        if v.len() != width {
            return Err(Error::Shape(format!("feature rows of length {width} and {}", v.len())));
        }
        let label = v.label.as_deref().unwrap_or("");
        if label.contains([',', '\n', '\r', '"']) {
            return Err(Error::format("feature csv", format!("label `{label}` contains a separator")));
        }
        out.push_str(label);
        for x in &v.values {
            write!(out, ",{x:.8e}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn from_feature_csv(text: &str, kind: FeatureKind) -> Result<Vec<FeatureVector>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format("feature csv", "empty file"))?;
    let mut columns = header.split(',');
    if columns.next() != Some("label") {
        return Err(Error::format("feature csv", "header must start with `label`"));
    }
    let width = columns.count();
    lines
        .enumerate()
        .map(|(i, line)| {
            let mut fields = line.split(',');
            let label = fields.next().unwrap_or("");
            let values = fields
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::format("feature csv", format!("row {}: `{f}`: {e}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != width {
                return Err(Error::format(
                    "feature csv",
                    format!("row {} has {} values, header has {width}", i + 1, values.len()),
                ));
            }
            Ok(FeatureVector {
                kind,
                values,
                label: (!label.is_empty()).then(|| label.to_string()),
            })
        })
        .collect()
}

pub fn write_feature_csv(path: impl AsRef<Path>, vectors: &[FeatureVector]) -> Result<()> {
    fs::write(path, to_feature_csv(vectors)?)?;
    Ok(())
}

pub fn read_feature_csv(path: impl AsRef<Path>, kind: FeatureKind) -> Result<Vec<FeatureVector>> {
    from_feature_csv(&fs::read_to_string(path)?, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Direct O(n^2) DFT magnitude of component `k`.
    fn dft_magnitude(series: &[f64], k: usize) -> f64 {
        let n = series.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &x) in series.iter().enumerate() {
            let angle = -2.0 * PI * k as f64 * t as f64 / n;
            re += x * angle.cos();
            im += x * angle.sin();
        }
        (re * re + im * im).sqrt()
    }

    fn reference_bins(series: &[f64], n_fft: usize) -> Vec<f64> {
        let components = series.len() / 2;
        let width = components / n_fft;
        let mut bins = vec![0.0; n_fft];
        for k in 1..=components {
            bins[((k - 1) / width).min(n_fft - 1)] += dft_magnitude(series, k);
        }
        bins
    }

    /// Number of maximal runs of ones.
    fn run_count(bits: &[u8]) -> usize {
        let mut runs = 0;
        let mut inside = false;
        for &b in bits {
            if b == 1 && !inside {
                runs += 1;
            }
            inside = b == 1;
        }
        runs
    }

    fn trace(mode: CaptureMode, slot_ids: Vec<u32>, rows: Vec<Vec<u32>>) -> Trace {
        Trace {
            mode,
            rows: rows.len(),
            cols: rows[0].len(),
            seed: 0,
            slot_ids,
            samples: rows.concat(),
        }
    }

    #[test]
    fn outlier_examples() {
        assert_eq!(remove_outliers(&[700.0, 9000.0, 710.0], 5000.0).unwrap(), vec![700.0, 705.0, 710.0]);
        assert_eq!(remove_outliers(&[1.0, 2.0], 5000.0).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(remove_outliers(&[6000.0, 7000.0], 5000.0), Err(Error::DegenerateSeries)));
        assert!(remove_outliers(&[], 5000.0).is_err());
        assert_eq!(
            remove_outliers(&[100.0, 9000.0, 300.0, 200.0], 5000.0).unwrap(),
            vec![100.0, 200.0, 300.0, 200.0]
        );
    }

    #[test]
    fn binarize_and_compress_examples() {
        assert_eq!(binarize(&[600.0, 800.0, 750.0], 750.0), vec![0, 1, 0]);
        assert_eq!(compress_bursts(&[0, 1, 1, 1, 0, 1]), vec![0, 1, 0, 1]);
        assert_eq!(compress_bursts(&[0, 0, 0]), vec![0, 0, 0]);
        assert_eq!(compress_bursts(&[1, 1, 0, 0, 1, 1]), vec![1, 0, 0, 1]);
    }

    #[test]
    fn fft_constant_and_shape() {
        assert!(fft_bins(&[3.0; 64], 4).unwrap().iter().all(|&b| b.abs() < 1e-9));
        assert!(matches!(fft_bins(&[0.0; 63], 4), Err(Error::Shape(_))));
        assert!(matches!(fft_bins(&[0.0; 6], 4), Err(Error::Shape(_))));
    }

    #[test]
    fn fft_sinusoid_lands_in_its_bin() {
        for k in [1usize, 5, 17, 32] {
            let series: Vec<f64> = (0..64).map(|t| (2.0 * PI * k as f64 * t as f64 / 64.0).cos()).collect();
            let bins = fft_bins(&series, 4).unwrap();
            let expected = reference_bins(&series, 4);
            for (a, b) in bins.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-9, "{bins:?} vs {expected:?}");
            }
            let hot = ((k - 1) / 8).min(3);
            for (i, b) in bins.iter().enumerate() {
                if i == hot {
                    assert!(*b > 1.0);
                } else {
                    assert!(b.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn fft_bin_arithmetic() {
        // 1500 samples: 750 components in 15 bins of 50
        let mut series = vec![0.0; 1500];
        series[0] = 1.0;
        let bins = fft_bins(&series, 15).unwrap();
        assert_eq!(bins.len(), 15);
        for b in bins {
            assert!((b - 50.0).abs() < 1e-9);
        }
        // remainder: 10 components in 3 bins -> widths 3, 3, 4
        let mut delta = vec![0.0; 20];
        delta[0] = 1.0;
        let bins = fft_bins(&delta, 3).unwrap();
        assert_eq!(bins.iter().map(|b| b.round() as i64).collect::<Vec<_>>(), vec![3, 3, 4]);
    }

    #[test]
    fn idle_physical_vector_is_zero() {
        let t = trace(CaptureMode::Physical, vec![0, 1, 2], vec![vec![156; 8]; 3]);
        let fv = build_feature_vector(&t, FeatureKind::Physical, &FeatureParams::default()).unwrap();
        assert_eq!(fv.values, vec![0.0; 3]);
    }

    #[test]
    fn kind_lengths_and_values() {
        let rows = vec![
            vec![156, 832, 832, 156, 156, 832, 156, 156],
            vec![156; 8],
            vec![832, 9000, 156, 156, 156, 156, 156, 832],
        ];
        let ids = vec![0, 1, 1 << 16];
        let t = trace(CaptureMode::Virtual, ids, rows);
        let p = FeatureParams::default().with_n_fft(2);

        let counts = build_feature_vector(&t, FeatureKind::VirtualCount, &p).unwrap();
        // row 2: the 9000 outlier becomes the median 156
        assert_eq!(counts.values, vec![2.0, 0.0, 2.0]);

        let virt = build_feature_vector(&t, FeatureKind::Virtual, &p.clone().with_series_len(7)).unwrap();
        assert_eq!(virt.len(), 3 * 7);
        assert_eq!(&virt.values[..7], &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(&virt.values[7..14], &[0.0; 7]);

        let fft = build_feature_vector(&t, FeatureKind::VirtualFft, &p).unwrap();
        assert_eq!(fft.len(), 2 * 2);
        let g0 = reference_bins(&[0., 1., 1., 0., 0., 1., 0., 0.], 2);
        for (a, b) in fft.values[..2].iter().zip(&g0) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn virtual_fft_length_full_geometry() {
        let ids: Vec<u32> = (0..32).flat_map(|v| (0..4).map(move |k| (v << 16) | k)).collect();
        let t = trace(CaptureMode::Virtual, ids, vec![vec![156; 30]; 128]);
        let fv = build_feature_vector(&t, FeatureKind::VirtualFft, &FeatureParams::default()).unwrap();
        assert_eq!(fv.len(), 480);
    }

    #[test]
    fn mode_mismatch_is_contract_error() {
        let t = trace(CaptureMode::Virtual, vec![0], vec![vec![156; 4]]);
        assert!(matches!(
            build_feature_vector(&t, FeatureKind::Physical, &FeatureParams::default()),
            Err(Error::Contract(_))
        ));
        let t = trace(CaptureMode::Physical, vec![0], vec![vec![156; 4]]);
        assert!(build_feature_vector(&t, FeatureKind::VirtualFft, &FeatureParams::default()).is_err());
    }

    #[test]
    fn series_length_percentile() {
        let mut rows = vec![vec![156u32; 20]; 19];
        rows.push(vec![832; 20]);
        // 19 slots compress to 20, one to 1: 95th percentile (rank 19) is 20
        let t = trace(CaptureMode::Virtual, (0..20).collect(), rows);
        assert_eq!(fit_series_length([&t], &FeatureParams::default()).unwrap(), 20);
        let mut rows = vec![vec![832u32; 20]; 19];
        rows.push(vec![156; 20]);
        let t = trace(CaptureMode::Virtual, (0..20).collect(), rows);
        assert_eq!(fit_series_length([&t], &FeatureParams::default()).unwrap(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let vs = vec![
            FeatureVector {
                kind: FeatureKind::Physical,
                values: vec![1.0, 0.123456789123, -3e-7],
                label: Some("maps".into()),
            },
            FeatureVector {
                kind: FeatureKind::Physical,
                values: vec![0.0, 2.5, 1e12],
                label: None,
            },
        ];
        let text = to_feature_csv(&vs).unwrap();
        assert!(text.starts_with("label,f0,f1,f2\nmaps,1.00000000e0,1.23456789e-1,"));
        let back = from_feature_csv(&text, FeatureKind::Physical).unwrap();
        assert_eq!(back[1], vs[1]);
        assert_eq!(back[0].values[1], 0.123456789);
        assert!(from_feature_csv("label,f0\na,1,2\n", FeatureKind::Physical).is_err());
        let mut bad = vs[0].clone();
        bad.label = Some("a,b".into());
        assert!(to_feature_csv(&[bad]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(FeatureParams::default().validate().is_ok());
        assert!(FeatureParams { tau_o: 500.0, ..FeatureParams::default() }.validate().is_err());
        assert!(FeatureParams::default().with_n_fft(0).validate().is_err());
    }

    proptest! {
        #[test]
        fn outlier_removal_idempotent(series in prop::collection::vec(0.0f64..10_000.0, 1..64)) {
            if let Ok(once) = remove_outliers(&series, 5000.0) {
                prop_assert_eq!(remove_outliers(&once, 5000.0).unwrap(), once.clone());
                prop_assert_eq!(once.len(), series.len());
                prop_assert!(once.iter().all(|&v| v <= 5000.0));
            }
        }

        #[test]
        fn binarize_monotone(series in prop::collection::vec(0.0f64..2000.0, 1..64), i in 0usize..64, bump in 0.0f64..1000.0) {
            let before = binarize(&series, 750.0);
            let mut raised = series.clone();
            let i = i % raised.len();
            raised[i] += bump;
            let after = binarize(&raised, 750.0);
            prop_assert!(before.iter().zip(&after).all(|(b, a)| a >= b));
        }

        #[test]
        fn compress_matches_run_oracle(bits in prop::collection::vec(0u8..2, 0..64)) {
            let out = compress_bursts(&bits);
            prop_assert!(out.len() <= bits.len());
            prop_assert_eq!(out.iter().filter(|&&b| b == 1).count(), run_count(&bits));
            prop_assert_eq!(out.iter().filter(|&&b| b == 0).count(), bits.iter().filter(|&&b| b == 0).count());
            prop_assert_eq!(compress_bursts(&out), out.clone());
        }

        #[test]
        fn fft_energy_conservation(series in prop::collection::vec(-5.0f64..5.0, 16..=16), n_fft in 1usize..=8) {
            let bins = fft_bins(&series, n_fft).unwrap();
            let total: f64 = (1..=8).map(|k| dft_magnitude(&series, k)).sum();
            let sum: f64 = bins.iter().sum();
            prop_assert!((sum - total).abs() <= 1e-9 * total.max(1.0));
        }

        #[test]
        fn row_permutation_permutes_blocks(seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng, Rng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let groups = 4;
            let per = 2;
            let cols = 16;
            let rows: Vec<Vec<u32>> = (0..groups * per)
                .map(|_| (0..cols).map(|_| if rng.gen_bool(0.3) { 832 } else { 156 }).collect())
                .collect();
            let ids: Vec<u32> = (0..groups as u32).flat_map(|v| (0..per as u32).map(move |k| (v << 16) | k)).collect();
            let t = trace(CaptureMode::Virtual, ids.clone(), rows.clone());
            let mut order: Vec<usize> = (0..groups).collect();
            order.shuffle(&mut rng);
            let perm_rows: Vec<Vec<u32>> = order.iter().flat_map(|&g| rows[g * per..(g + 1) * per].to_vec()).collect();
            let perm_ids: Vec<u32> = order.iter().flat_map(|&g| ids[g * per..(g + 1) * per].to_vec()).collect();
            let tp = trace(CaptureMode::Virtual, perm_ids, perm_rows);
            let p = FeatureParams::default().with_n_fft(4);
            for (kind, block) in [(FeatureKind::VirtualFft, 4), (FeatureKind::Virtual, per * cols)] {
                let a = build_feature_vector(&t, kind, &p).unwrap().values;
                let b = build_feature_vector(&tp, kind, &p).unwrap().values;
                for (pos, &g) in order.iter().enumerate() {
                    prop_assert_eq!(&b[pos * block..(pos + 1) * block], &a[g * block..(g + 1) * block]);
                }
            }
        }
    }
}

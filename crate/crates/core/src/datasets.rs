//! Labeled multichannel time series: on-disk format, normalization, splits,
//! decimation, the sinusoid fixture generator and the corruption scenarios
//! used for imputation.
//!
//! Class labels are 0-based in memory and 1-based on disk.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const METADATA_FILE: &str = "metadata.json";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";

/// One labeled series, `T × Nd`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub values: Array2<f64>,
    pub label: usize,
}

impl SequenceSample {
    pub fn new(values: Array2<f64>, label: usize) -> Self {
        SequenceSample { values, label }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        NormStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Fits mean and population std over every time step of every sample.
    /// Channels whose std is zero (or not finite) get std 1.
    pub fn fit(samples: &[SequenceSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot fit normalization on no samples".into()))?;
        let nd = first.channels();
        let mut sum = vec![0.0; nd];
        let mut count = 0usize;
        for s in samples {
            for row in s.values.rows() {
                for (acc, v) in sum.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            count += s.len();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; nd];
        for s in samples {
            for row in s.values.rows() {
                for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn normalize(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn denormalize(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        out
    }
}

/// On-disk descriptor stored as `metadata.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    pub classes: Vec<String>,
    #[serde(rename = "T")]
    pub seq_len: usize,
    #[serde(rename = "Nd")]
    pub channels: usize,
    pub sample_rate: f64,
    pub norm: NormStats,
}

/// Train/test splits in normalized units plus the statistics that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub name: String,
    pub classes: Vec<String>,
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub norm: NormStats,
    pub sample_rate: f64,
    seq_len: usize,
    channels: usize,
}

impl DatasetBundle {
    /// Builds a bundle from samples already in normalized units, checking that
    /// every sample has the declared shape and a valid label.
    pub fn new(
        name: impl Into<String>,
        classes: Vec<String>,
        train: Vec<SequenceSample>,
        test: Vec<SequenceSample>,
        norm: NormStats,
        sample_rate: f64,
    ) -> Result<Self> {
        let first = train
            .first()
            .or(test.first())
            .ok_or_else(|| Error::InvalidArgument("dataset has no samples".into()))?;
        let (seq_len, channels) = first.values.dim();
        if classes.is_empty() {
            return Err(Error::InvalidArgument("dataset declares no classes".into()));
        }
        if seq_len == 0 || channels == 0 {
            return Err(Error::Shape("samples need T ≥ 1 and Nd ≥ 1".into()));
        }
        if norm.mean.len() != channels || norm.std.len() != channels {
            return Err(Error::Shape(format!(
                "normalization has {} channels, samples have {channels}",
                norm.mean.len()
            )));
        }
        for s in train.iter().chain(&test) {
            if s.values.dim() != (seq_len, channels) {
                return Err(Error::Shape(format!(
                    "sample of shape {:?}, expected ({seq_len}, {channels})",
                    s.values.dim()
                )));
            }
            if s.label >= classes.len() {
                return Err(Error::UnknownClass {
                    index: s.label as i64 + 1,
                    classes: classes.len(),
                });
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite sample value".into()));
            }
        }
        Ok(DatasetBundle {
            name: name.into(),
            classes,
            train,
            test,
            norm,
            sample_rate,
            seq_len,
            channels,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            name: self.name.clone(),
            classes: self.classes.clone(),
            seq_len: self.seq_len,
            channels: self.channels,
            sample_rate: self.sample_rate,
            norm: self.norm.clone(),
        }
    }

    /// SHA-256 of the canonical metadata JSON.
    pub fn fingerprint(&self) -> String {
        metadata_fingerprint(&self.metadata())
    }
}

pub fn metadata_fingerprint(meta: &Metadata) -> String {
    let json = serde_json::to_vec(meta).expect("metadata serializes");
    hex::encode(Sha256::digest(&json))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_rows(path: &Path, meta: &Metadata) -> Result<Vec<SequenceSample>> {
    let text = read_to_string(path)?;
    let width = meta.seq_len * meta.channels;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or_default().trim();
        let label: i64 = label_field.parse().map_err(|_| {
            Error::format(path, format!("line {}: bad label {label_field:?}", lineno + 1))
        })?;
        if label < 1 || label as usize > meta.classes.len() {
            return Err(Error::UnknownClass {
                index: label,
                classes: meta.classes.len(),
            });
        }
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        if values.len() != width {
            return Err(Error::Shape(format!(
                "{}: line {} has {} values, metadata declares T·Nd = {width}",
                path.display(),
                lineno + 1,
                values.len()
            )));
        }
        let raw = Array2::from_shape_vec((meta.seq_len, meta.channels), values)
            .expect("width checked");
        samples.push(SequenceSample::new(meta.norm.normalize(&raw), label as usize - 1));
    }
    Ok(samples)
}

/// Reads `metadata.json`, `train.csv` and `test.csv` from `dir`; values are
/// normalized with the stored statistics.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let meta_path = dir.join(METADATA_FILE);
    let meta: Metadata = serde_json::from_str(&read_to_string(&meta_path)?)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.norm.std.iter().any(|s| *s <= 0.0) {
        return Err(Error::format(&meta_path, "normalization std must be positive"));
    }
    let train = parse_rows(&dir.join(TRAIN_FILE), &meta)?;
    let test = parse_rows(&dir.join(TEST_FILE), &meta)?;
    if train.is_empty() && test.is_empty() {
        return Err(Error::format(dir, "dataset has no samples"));
    }
    let bundle = DatasetBundle::new(meta.name, meta.classes, train, test, meta.norm, meta.sample_rate)?;
    if bundle.seq_len != meta.seq_len || bundle.channels != meta.channels {
        return Err(Error::Shape("rows disagree with metadata".into()));
    }
    Ok(bundle)
}

/// Formats with at most 9 significant digits, shortest form.
pub fn format_value(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded}")
}

fn rows_csv(samples: &[SequenceSample], norm: &NormStats) -> String {
    let mut out = String::new();
    for s in samples {
        write!(out, "{}", s.label + 1).unwrap();
        for v in norm.denormalize(&s.values).iter() {
            out.push(',');
            out.push_str(&format_value(*v));
        }
        out.push('\n');
    }
    out
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `bundle` in the on-disk format (raw units, denormalized).
pub fn save_dataset(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = serde_json::to_string_pretty(&bundle.metadata())?;
    write_file(&dir.join(METADATA_FILE), meta)?;
    write_file(&dir.join(TRAIN_FILE), rows_csv(&bundle.train, &bundle.norm))?;
    write_file(&dir.join(TEST_FILE), rows_csv(&bundle.test, &bundle.norm))?;
    Ok(())
}

/// Keeps every `factor`-th step starting at 0.
pub fn subsample(sample: &SequenceSample, factor: usize) -> Result<SequenceSample> {
    if factor == 0 {
        return Err(Error::InvalidArgument("subsample factor must be ≥ 1".into()));
    }
    let values = sample.values.slice(ndarray::s![..;factor, ..]).to_owned();
    Ok(SequenceSample::new(values, sample.label))
}

/// Class-stratified deterministic split. Each class contributes
/// `round(ratio · n_class)` samples to train.
pub fn split(
    samples: &[SequenceSample],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty sample list".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} outside (0, 1)")));
    }
    let classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..classes {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        idx.shuffle(&mut rng);
        let n_train = (ratio * idx.len() as f64).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            if k < n_train {
                train.push(samples[i].clone());
            } else {
                test.push(samples[i].clone());
            }
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

/// Parameters of the class-conditional sinusoid fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    /// `(frequency in cycles per window, amplitude)` per class.
    pub classes: Vec<(f64, f64)>,
    pub seq_len: usize,
    pub channels: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise_std: f64,
    /// Per-sample phase offset drawn uniformly from `[−phase_jitter, phase_jitter]` radians.
    pub phase_jitter: f64,
    /// Per-sample amplitude factor drawn uniformly from `[1 − a, 1 + a]`.
    pub amplitude_jitter: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            classes: vec![(2.0, 1.0), (5.0, 1.0)],
            seq_len: 32,
            channels: 1,
            train_per_class: 200,
            test_per_class: 50,
            noise_std: 0.05,
            phase_jitter: std::f64::consts::PI,
            amplitude_jitter: 0.3,
            seed: 0,
        }
    }
}

/// Class `k` samples are `a · amplitude_k · sin(2π f_k t / T + φ)` with
/// per-sample jitter `a` and `φ`, plus independent Gaussian noise on every
/// channel. Values are normalized with train statistics.
pub fn make_toy_dataset(spec: &ToySpec) -> Result<DatasetBundle> {
    if spec.classes.is_empty() {
        return Err(Error::InvalidArgument("toy dataset needs at least one class".into()));
    }
    for (i, a) in spec.classes.iter().enumerate() {
        if spec.classes[..i].iter().any(|b| b.0 == a.0) {
            return Err(Error::InvalidArgument(format!("duplicate frequency {}", a.0)));
        }
    }
    if !(spec.noise_std >= 0.0) {
        return Err(Error::InvalidArgument("noise_std must be ≥ 0".into()));
    }
    if !(spec.phase_jitter >= 0.0) || !(0.0..1.0).contains(&spec.amplitude_jitter) {
        return Err(Error::InvalidArgument("phase jitter must be ≥ 0 and amplitude jitter in [0, 1)".into()));
    }
    if spec.seq_len == 0 || spec.channels == 0 || spec.train_per_class == 0 {
        return Err(Error::InvalidArgument("toy dataset dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("valid std");
    let draw = |label: usize, rng: &mut ChaCha8Rng| {
        let (freq, amp) = spec.classes[label];
        let phase = if spec.phase_jitter > 0.0 { rng.random_range(-spec.phase_jitter..=spec.phase_jitter) } else { 0.0 };
        let amp = if spec.amplitude_jitter > 0.0 {
            amp * rng.random_range(1.0 - spec.amplitude_jitter..=1.0 + spec.amplitude_jitter)
        } else {
            amp
        };
        let values = Array2::from_shape_fn((spec.seq_len, spec.channels), |(t, _)| {
            let clean =
                amp * (2.0 * std::f64::consts::PI * freq * t as f64 / spec.seq_len as f64 + phase).sin();
            if spec.noise_std > 0.0 {
                clean + noise.sample(rng)
            } else {
                clean
            }
        });
        SequenceSample::new(values, label)
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in 0..spec.classes.len() {
        for _ in 0..spec.train_per_class {
            train.push(draw(label, &mut rng));
        }
        for _ in 0..spec.test_per_class {
            test.push(draw(label, &mut rng));
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let norm = NormStats::fit(&train)?;
    for s in train.iter_mut().chain(test.iter_mut()) {
        s.values = norm.normalize(&s.values);
    }
    let classes = spec.classes.iter().map(|(f, _)| format!("sin_f{f}")).collect();
    DatasetBundle::new("toy-sinusoids", classes, train, test, norm, spec.seq_len as f64)
}

/// How missing values were introduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Mcar,
    Segment,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Mcar => "mcar",
            Scenario::Segment => "segment",
        })
    }
}

/// A corrupted sample: missing steps are zero in `observed` and `false` in `mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSample {
    pub observed: Array2<f64>,
    pub mask: Vec<bool>,
    pub label: usize,
    pub scenario: Scenario,
}

impl MaskedSample {
    pub fn from_mask(sample: &SequenceSample, mask: Vec<bool>, scenario: Scenario) -> Self {
        let mut observed = sample.values.clone();
        for (mut row, &keep) in observed.axis_iter_mut(Axis(0)).zip(&mask) {
            if !keep {
                row.fill(0.0);
            }
        }
        MaskedSample {
            observed,
            mask,
            label: sample.label,
            scenario,
        }
    }

    pub fn missing(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }
}

/// Drops each time step independently with probability `rate`.
pub fn apply_mcar_mask(sample: &SequenceSample, rate: f64, seed: u64) -> Result<MaskedSample> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("MCAR rate {rate} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = (0..sample.len()).map(|_| rng.random::<f64>() >= rate).collect();
    Ok(MaskedSample::from_mask(sample, mask, Scenario::Mcar))
}

/// Zeroes one contiguous run of `round(rate · T)` steps starting uniformly in
/// `[0, T − run]`.
pub fn apply_segment_mask(sample: &SequenceSample, rate: f64, seed: u64) -> Result<MaskedSample> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!("segment rate {rate} outside (0, 1)")));
    }
    let t = sample.len();
    let run = (rate * t as f64).round() as usize;
    if run < 1 {
        return Err(Error::InvalidArgument(format!(
            "segment of rate {rate} over {t} steps is shorter than one step"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=t - run);
    let mask = (0..t).map(|i| i < start || i >= start + run).collect();
    Ok(MaskedSample::from_mask(sample, mask, Scenario::Segment))
}

pub fn apply_mask(
    sample: &SequenceSample,
    scenario: Scenario,
    rate: f64,
    seed: u64,
) -> Result<MaskedSample> {
    match scenario {
        Scenario::Mcar => apply_mcar_mask(sample, rate, seed),
        Scenario::Segment => apply_segment_mask(sample, rate, seed),
    }
}

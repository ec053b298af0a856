//! DTW and the dataset-level quality scores.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{write_file, SequenceSample};
use crate::error::{Error, Result};
use crate::nets::{ModelKind, RecurrentClassifier};
use crate::training::TstrReport;

/// Generated samples with the condition label of each recorded in `label`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub samples: Vec<SequenceSample>,
    pub source: ModelKind,
    pub checkpoint_fingerprint: String,
}

/// Unnormalized DTW path cost with Euclidean frame cost and no window.
pub fn dtw_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("DTW channel mismatch: {} vs {}", a.ncols(), b.ncols())));
    }
    let (n, m, d) = (a.nrows(), b.nrows(), a.ncols());
    if n == 0 || m == 0 {
        return Err(Error::Shape("DTW needs nonempty sequences".into()));
    }
    let (sa, sb) = (a.as_standard_layout(), b.as_standard_layout());
    let (fa, fb) = (sa.as_slice().expect("contiguous"), sb.as_slice().expect("contiguous"));
    let cost = |i: usize, j: usize| -> f64 {
        let (x, y) = (&fa[i * d..(i + 1) * d], &fb[j * d..(j + 1) * d]);
        if d == 1 {
            (x[0] - y[0]).abs()
        } else {
            x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        }
    };
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(cur[j - 1]).min(prev[j - 1]),
            };
            cur[j] = best + cost(i, j);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Subsampling for the quadratic DTW scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    /// Sets larger than this are replaced by a seeded uniform subsample of this size.
    pub cap: usize,
    pub seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { cap: 500, seed: 0 }
    }
}

/// Sorted indices of the seeded subsample (all indices when `n ≤ cap`).
pub fn subsample_indices(n: usize, opts: &MetricOptions) -> Vec<usize> {
    if n <= opts.cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let picked: BTreeSet<usize> = rand::seq::index::sample(&mut rng, n, opts.cap).into_iter().collect();
    picked.into_iter().collect()
}

fn capped<'a>(set: &'a [SequenceSample], opts: &MetricOptions) -> Vec<&'a Array2<f64>> {
    subsample_indices(set.len(), opts).into_iter().map(|i| &set[i].values).collect()
}

/// Mean distance from each member to its nearest other member.
fn mean_nearest_other(set: &[&Array2<f64>]) -> Result<f64> {
    let n = set.len();
    let mut nearest = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = dtw_distance(set[i], set[j])?;
            nearest[i] = nearest[i].min(d);
            nearest[j] = nearest[j].min(d);
        }
    }
    Ok(nearest.iter().sum::<f64>() / n as f64)
}

/// Normalizer Λ: mean nearest-neighbor DTW within the reference set.
pub fn normalizer(reference: &[SequenceSample], opts: &MetricOptions) -> Result<f64> {
    if reference.len() < 2 {
        return Err(Error::InvalidArgument("normalizer needs at least 2 reference samples".into()));
    }
    let lambda = mean_nearest_other(&capped(reference, opts))?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("reference set has zero nearest-neighbor spread".into()));
    }
    Ok(lambda)
}

/// Returns `(score, Λ)`.
pub fn diversity_score(
    synthetic: &[SequenceSample],
    reference: &[SequenceSample],
    opts: &MetricOptions,
) -> Result<(f64, f64)> {
    let lambda = normalizer(reference, opts)?;
    Ok((diversity_with(synthetic, lambda, opts)?, lambda))
}

pub fn diversity_with(synthetic: &[SequenceSample], lambda: f64, opts: &MetricOptions) -> Result<f64> {
    if synthetic.len() < 2 {
        return Err(Error::InvalidArgument("diversity needs at least 2 synthetic samples".into()));
    }
    Ok(mean_nearest_other(&capped(synthetic, opts))? / lambda)
}

/// Returns `(score, per-sample scores)`, each normalized by `lambda`.
pub fn novelty_score(
    synthetic: &[SequenceSample],
    train: &[SequenceSample],
    lambda: f64,
    opts: &MetricOptions,
) -> Result<(f64, Vec<f64>)> {
    if synthetic.is_empty() || train.is_empty() {
        return Err(Error::InvalidArgument("novelty needs nonempty sets".into()));
    }
    let per_sample = capped(synthetic, opts)
        .into_iter()
        .map(|s| {
            let mut best = f64::INFINITY;
            for t in train {
                best = best.min(dtw_distance(s, &t.values)?);
            }
            Ok(best / lambda)
        })
        .collect::<Result<Vec<f64>>>()?;
    let score = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((score, per_sample))
}

/// Fraction of samples whose oracle argmax equals the recorded label.
pub fn conditional_accuracy(synthetic: &[SequenceSample], oracle: &RecurrentClassifier) -> Result<f64> {
    if synthetic.is_empty() {
        return Err(Error::InvalidArgument("no synthetic samples".into()));
    }
    if let Some(s) = synthetic.iter().find(|s| s.label >= oracle.num_classes()) {
        return Err(Error::UnknownClass {
            index: s.label as i64 + 1,
            classes: oracle.num_classes(),
        });
    }
    let values: Vec<&Array2<f64>> = synthetic.iter().map(|s| &s.values).collect();
    let predicted = oracle.predict(&values)?;
    let hits = predicted.iter().zip(synthetic).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / synthetic.len() as f64)
}

/// Probability that a positive outranks a negative; ties count half.
pub fn auc_score(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney with average ranks over tie groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|p| **p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Conditional,
    Diversity,
    Novelty,
    Tstr,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Conditional, Metric::Diversity, Metric::Novelty, Metric::Tstr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Conditional => "conditional",
            Metric::Diversity => "diversity",
            Metric::Novelty => "novelty",
            Metric::Tstr => "tstr",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric {s:?}")))
    }
}

/// Scores of one synthetic set; absent entries were not requested.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub conditional_accuracy: Option<f64>,
    pub diversity: Option<f64>,
    pub novelty: Option<f64>,
    /// Shared by diversity and novelty.
    pub normalizer: Option<f64>,
    pub novelty_per_sample: Vec<f64>,
    pub tstr: Option<TstrReport>,
}

impl ScoreReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_file(path.as_ref(), text.as_bytes())
    }
}

/// Equal-width histogram over `[min, max]`; returns `(start, end, count)` rows.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

pub fn histogram_csv(values: &[f64], bins: usize) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for (a, b, c) in histogram(values, bins) {
        out.push_str(&format!("{a},{b},{c}\n"));
    }
    out
}

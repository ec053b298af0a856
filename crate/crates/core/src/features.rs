//! Fixed engineered features and a one-vs-rest linear SVM over them.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::SequenceSample;
use crate::error::{Error, Result};
use crate::nets::argmax;

/// Autocorrelation lags included per channel.
pub const AUTOCORR_LAGS: [usize; 5] = [1, 2, 3, 4, 5];

/// Features per channel: mean, std, min, max, median, IQR, energy,
/// zero crossings, then one autocorrelation per lag.
pub const PER_CHANNEL: usize = 8 + AUTOCORR_LAGS.len();

pub const FEATURE_NAMES: [&str; PER_CHANNEL] = [
    "mean", "std", "min", "max", "median", "iqr", "energy", "zero_crossings", "acf1", "acf2", "acf3", "acf4", "acf5",
];

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn channel_features(x: &[f64], out: &mut Vec<f64>) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let energy = x.iter().map(|v| v * v).sum::<f64>() / n;
    let crossings = x.windows(2).filter(|w| w[0] * w[1] < 0.0).count() as f64;
    out.extend([
        mean,
        var.sqrt(),
        sorted[0],
        sorted[sorted.len() - 1],
        quantile(&sorted, 0.5),
        quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
        energy,
        crossings,
    ]);
    let denom = var * n;
    for &lag in &AUTOCORR_LAGS {
        let acf = if denom > 0.0 && lag < x.len() {
            (0..x.len() - lag).map(|t| (x[t] - mean) * (x[t + lag] - mean)).sum::<f64>() / denom
        } else {
            0.0
        };
        out.push(acf);
    }
}

/// Feature vector of length `Nd · PER_CHANNEL`, channel-major.
pub fn extract(values: &Array2<f64>) -> Array1<f64> {
    let mut out = Vec::with_capacity(values.ncols() * PER_CHANNEL);
    for col in values.columns() {
        channel_features(&col.to_vec(), &mut out);
    }
    Array1::from(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty on the weights.
    pub lambda: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            epochs: 100,
            learning_rate: 0.05,
            lambda: 1e-3,
        }
    }
}

/// One-vs-rest hinge-loss linear classifier on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    /// `classes × features`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearSvm {
    pub fn fit(samples: &[SequenceSample], classes: usize, cfg: &SvmConfig, seed: u64) -> Result<Self> {
        if samples.is_empty() || classes == 0 {
            return Err(Error::InvalidArgument("SVM needs samples and classes".into()));
        }
        let feats: Vec<Array1<f64>> = samples.iter().map(|s| extract(&s.values)).collect();
        let dim = feats[0].len();
        let n = feats.len() as f64;
        let mean = feats.iter().fold(Array1::zeros(dim), |a, f| a + f) / n;
        let var = feats.iter().fold(Array1::zeros(dim), |a: Array1<f64>, f| a + (f - &mean).mapv(|v| v * v)) / n;
        let scale = var.mapv(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
        let xs: Vec<Array1<f64>> = feats.iter().map(|f| (f - &mean) / &scale).collect();

        let mut weights = Array2::zeros((classes, dim));
        let mut bias = Array1::zeros(classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        for epoch in 0..cfg.epochs {
            let lr = cfg.learning_rate / (1.0 + epoch as f64).sqrt();
            order.shuffle(&mut rng);
            for &i in &order {
                for c in 0..classes {
                    let y = if samples[i].label == c { 1.0 } else { -1.0 };
                    let mut w = weights.row_mut(c);
                    let margin = y * (w.dot(&xs[i]) + bias[c]);
                    w.mapv_inplace(|v| v * (1.0 - lr * cfg.lambda));
                    if margin < 1.0 {
                        w.scaled_add(lr * y, &xs[i]);
                        bias[c] += lr * y;
                    }
                }
            }
        }
        Ok(LinearSvm {
            mean,
            scale,
            weights,
            bias,
        })
    }

    pub fn margins(&self, features: &Array1<f64>) -> Result<Vec<f64>> {
        if features.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "{} features, classifier expects {}",
                features.len(),
                self.mean.len()
            )));
        }
        let x = (features - &self.mean) / &self.scale;
        Ok((self.weights.dot(&x) + &self.bias).to_vec())
    }

    pub fn predict(&self, values: &Array2<f64>) -> Result<usize> {
        Ok(argmax(&self.margins(&extract(values))?))
    }

    pub fn accuracy(&self, samples: &[SequenceSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no samples to score".into()));
        }
        let mut correct = 0;
        for s in samples {
            if self.predict(&s.values)? == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

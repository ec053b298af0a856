//! Sampling synthetic sets from a trained generator.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::SequenceSample;
use crate::error::{Error, Result};
use crate::nets::GeneratorSuite;
use crate::training::standard_normal;

/// How condition labels are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPlan {
    /// Independent uniform draws over the classes.
    Uniform,
    /// Exactly `n / L` per class (remainder to the lowest classes), shuffled.
    Stratified,
    /// Independent draws from the given class frequencies.
    Matched(Vec<f64>),
}

impl LabelPlan {
    /// Class frequencies of `samples` as a [`LabelPlan::Matched`].
    pub fn matched_to(samples: &[SequenceSample], classes: usize) -> Self {
        let mut counts = vec![0.0; classes];
        for s in samples {
            counts[s.label] += 1.0;
        }
        LabelPlan::Matched(counts)
    }

    pub fn draw<R: Rng>(&self, n: usize, classes: usize, rng: &mut R) -> Result<Vec<usize>> {
        if classes == 0 {
            return Err(Error::InvalidArgument("no classes to draw from".into()));
        }
        Ok(match self {
            LabelPlan::Uniform => (0..n).map(|_| rng.random_range(0..classes)).collect(),
            LabelPlan::Stratified => {
                let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
                labels.shuffle(rng);
                labels
            }
            LabelPlan::Matched(weights) => {
                if weights.len() != classes {
                    return Err(Error::Shape(format!("{} class weights for {classes} classes", weights.len())));
                }
                let dist = rand::distr::weighted::WeightedIndex::new(weights)
                    .map_err(|e| Error::InvalidArgument(format!("class weights: {e}")))?;
                (0..n).map(|_| rng.sample(&dist)).collect()
            }
        })
    }
}

/// Generates `n` samples of `steps` frames with labels from `plan`. The
/// recorded label of each sample is its condition.
pub fn generate_set(
    suite: &GeneratorSuite,
    classes: usize,
    n: usize,
    steps: usize,
    plan: &LabelPlan,
    seed: u64,
) -> Result<Vec<SequenceSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = plan.draw(n, classes, &mut rng)?;
    let mut out = Vec::with_capacity(n);
    for chunk in labels.chunks(256) {
        let z: Array2<f64> = standard_normal(chunk.len(), suite.latent_dim(), &mut rng);
        let values = suite.generate(&z, chunk, steps)?;
        out.extend(values.into_iter().zip(chunk).map(|(v, &y)| SequenceSample::new(v, y)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{ModelKind, NetConfig};

    #[test]
    fn label_plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let strat = LabelPlan::Stratified.draw(100, 2, &mut rng).unwrap();
        assert_eq!(strat.iter().filter(|&&l| l == 0).count(), 50);
        let uni = LabelPlan::Uniform.draw(10_000, 2, &mut rng).unwrap();
        let ones = uni.iter().filter(|&&l| l == 1).count() as f64 / 10_000.0;
        assert!((ones - 0.5).abs() < 0.015);
        let skewed = LabelPlan::Matched(vec![0.0, 1.0]).draw(50, 2, &mut rng).unwrap();
        assert!(skewed.iter().all(|&l| l == 1));
        assert!(LabelPlan::Matched(vec![1.0]).draw(5, 2, &mut rng).is_err());
    }

    #[test]
    fn generated_set_shapes_and_determinism() {
        let net = NetConfig {
            latent_dim: 3,
            enc_hidden: 4,
            dec_hidden: 5,
            seq_len: 7,
            ..NetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let suite = GeneratorSuite::init(ModelKind::Crnn, &net, &mut rng).unwrap();
        let a = generate_set(&suite, 2, 300, 20, &LabelPlan::Uniform, 9).unwrap();
        assert_eq!(a.len(), 300);
        assert!(a.iter().all(|s| s.values.dim() == (20, 1)));
        assert_eq!(a, generate_set(&suite, 2, 300, 20, &LabelPlan::Uniform, 9).unwrap());
    }
}

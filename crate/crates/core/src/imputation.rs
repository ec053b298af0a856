//! Repairing masked samples and scoring the repairs.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{apply_mask, MaskedSample, NormStats, Scenario, SequenceSample};
use crate::error::{Error, Result};
use crate::nets::{GeneratorSuite, RecurrentClassifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    Physiogan,
    Knn,
}

impl std::fmt::Display for ImputeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ImputeMethod::Physiogan => "physiogan",
            ImputeMethod::Knn => "knn",
        })
    }
}

/// A repaired sample; rows where `mask` is set are the observed rows, bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct ImputationResult {
    pub repaired: Array2<f64>,
    pub method: ImputeMethod,
    pub scenario: Scenario,
    pub mask: Vec<bool>,
}

/// Encodes the zero-filled observation, takes the posterior mean, and decodes
/// with observed frames substituted wherever the mask is set.
pub fn impute_physiogan(suite: &GeneratorSuite, ms: &MaskedSample) -> Result<ImputationResult> {
    let (encoder, decoder) = match (suite.encoder(), suite.decoder()) {
        (Some(e), Some(d)) => (e, d),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{} checkpoints have no encoder to impute with",
                suite.kind()
            )))
        }
    };
    let steps = ms.observed.nrows();
    if ms.mask.len() != steps {
        return Err(Error::Shape(format!("mask has {} steps, sample has {steps}", ms.mask.len())));
    }
    let post = encoder.encode(&ms.observed)?;
    let z = post.mu.to_vec();
    let repaired = decoder.decode(&z, ms.label, steps, Some((&ms.observed, &ms.mask)))?;
    Ok(ImputationResult {
        repaired,
        method: ImputeMethod::Physiogan,
        scenario: ms.scenario,
        mask: ms.mask.clone(),
    })
}

/// Fills missing frames with the mean of the `k` same-label train samples
/// nearest over the observed steps. Ties in distance keep train order.
pub fn impute_knn(train: &[SequenceSample], ms: &MaskedSample, k: usize) -> Result<ImputationResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let mut ranked: Vec<(f64, &SequenceSample)> = Vec::new();
    for s in train.iter().filter(|s| s.label == ms.label) {
        if s.values.dim() != ms.observed.dim() {
            return Err(Error::Shape(format!(
                "train sample {:?} vs masked sample {:?}",
                s.values.dim(),
                ms.observed.dim()
            )));
        }
        let mut d = 0.0;
        for (t, _) in ms.mask.iter().enumerate().filter(|(_, m)| **m) {
            d += (&s.values.row(t) - &ms.observed.row(t)).mapv(|v| v * v).sum();
        }
        ranked.push((d.sqrt(), s));
    }
    if ranked.is_empty() {
        return Err(Error::MissingClass(ms.label + 1));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let neighbors = &ranked[..k.min(ranked.len())];
    let mut repaired = ms.observed.clone();
    for (t, _) in ms.mask.iter().enumerate().filter(|(_, m)| !**m) {
        let mut row = repaired.row_mut(t);
        row.fill(0.0);
        for (_, s) in neighbors {
            row += &s.values.row(t);
        }
        row /= neighbors.len() as f64;
    }
    Ok(ImputationResult {
        repaired,
        method: ImputeMethod::Knn,
        scenario: ms.scenario,
        mask: ms.mask.clone(),
    })
}

/// Mean absolute error over all `T·Nd` entries.
pub fn mae(original: &Array2<f64>, repaired: &Array2<f64>) -> Result<f64> {
    if original.dim() != repaired.dim() {
        return Err(Error::Shape(format!("mae: {:?} vs {:?}", original.dim(), repaired.dim())));
    }
    if original.is_empty() {
        return Ok(0.0);
    }
    Ok((original - repaired).mapv(f64::abs).sum() / original.len() as f64)
}

/// Semantic repair with the accuracies it was computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticRepair {
    /// `None` when complete and corrupted accuracies coincide.
    pub value: Option<f64>,
    pub accuracy_complete: f64,
    pub accuracy_corrupted: f64,
    pub accuracy_repaired: f64,
}

fn accuracy(samples: &[SequenceSample], oracle: &RecurrentClassifier) -> Result<f64> {
    let values: Vec<&Array2<f64>> = samples.iter().map(|s| &s.values).collect();
    let predicted = oracle.predict(&values)?;
    let hits = predicted.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// `(Acc(repaired) − Acc(corrupted)) / (Acc(complete) − Acc(corrupted))`,
/// reported raw. The three sets align sample for sample; `corrupted` holds
/// zero-filled observations.
pub fn semantic_repair(
    complete: &[SequenceSample],
    corrupted: &[SequenceSample],
    repaired: &[SequenceSample],
    oracle: &RecurrentClassifier,
) -> Result<SemanticRepair> {
    if complete.is_empty() || complete.len() != corrupted.len() || complete.len() != repaired.len() {
        return Err(Error::InvalidArgument("semantic repair needs three aligned nonempty sets".into()));
    }
    let accuracy_complete = accuracy(complete, oracle)?;
    let accuracy_corrupted = accuracy(corrupted, oracle)?;
    let accuracy_repaired = accuracy(repaired, oracle)?;
    let gap = accuracy_complete - accuracy_corrupted;
    Ok(SemanticRepair {
        value: (gap != 0.0).then(|| (accuracy_repaired - accuracy_corrupted) / gap),
        accuracy_complete,
        accuracy_corrupted,
        accuracy_repaired,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub method: ImputeMethod,
    pub scenario: Scenario,
    pub rate: f64,
    pub samples: usize,
    pub mae: f64,
    /// Absent without an oracle.
    pub semantic_repair: Option<SemanticRepair>,
}

/// What a repair uses besides the masked sample.
pub enum Repairer<'a> {
    Physiogan(&'a GeneratorSuite),
    Knn { train: &'a [SequenceSample], k: usize },
}

impl Repairer<'_> {
    pub fn method(&self) -> ImputeMethod {
        match self {
            Repairer::Physiogan(_) => ImputeMethod::Physiogan,
            Repairer::Knn { .. } => ImputeMethod::Knn,
        }
    }

    pub fn repair(&self, ms: &MaskedSample) -> Result<ImputationResult> {
        match self {
            Repairer::Physiogan(suite) => impute_physiogan(suite, ms),
            Repairer::Knn { train, k } => impute_knn(train, ms, *k),
        }
    }
}

/// One evaluated sample: original, corruption and repair.
#[derive(Clone, Debug, PartialEq)]
pub struct Triptych {
    pub complete: SequenceSample,
    pub masked: MaskedSample,
    pub repaired: Array2<f64>,
}

/// Corrupts every sample (per-sample seeds drawn from `seed`), repairs it and
/// scores the repairs. A rate of 0 leaves samples intact for both scenarios.
pub fn evaluate_imputation(
    samples: &[SequenceSample],
    scenario: Scenario,
    rate: f64,
    seed: u64,
    repairer: &Repairer<'_>,
    oracle: Option<&RecurrentClassifier>,
) -> Result<(RepairReport, Vec<Triptych>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("missing rate {rate} outside [0, 1)")));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to impute".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triptychs = Vec::with_capacity(samples.len());
    for s in samples {
        let sample_seed: u64 = rng.random();
        let masked = if rate == 0.0 {
            MaskedSample::from_mask(s, vec![true; s.len()], scenario)
        } else {
            apply_mask(s, scenario, rate, sample_seed)?
        };
        let repaired = repairer.repair(&masked)?.repaired;
        triptychs.push(Triptych {
            complete: s.clone(),
            masked,
            repaired,
        });
    }
    let mut total = 0.0;
    for t in &triptychs {
        total += mae(&t.complete.values, &t.repaired)?;
    }
    let semantic_repair = match oracle {
        Some(oracle) => {
            let complete: Vec<_> = triptychs.iter().map(|t| t.complete.clone()).collect();
            let corrupted: Vec<_> = triptychs
                .iter()
                .map(|t| SequenceSample::new(t.masked.observed.clone(), t.masked.label))
                .collect();
            let repaired: Vec<_> = triptychs
                .iter()
                .map(|t| SequenceSample::new(t.repaired.clone(), t.complete.label))
                .collect();
            Some(semantic_repair(&complete, &corrupted, &repaired, oracle)?)
        }
        None => None,
    };
    let report = RepairReport {
        method: repairer.method(),
        scenario,
        rate,
        samples: samples.len(),
        mae: total / triptychs.len() as f64,
        semantic_repair,
    };
    Ok((report, triptychs))
}

/// Three blocks (complete, corrupted, repaired) in raw units, one row per
/// time step: `block,t,observed,<channel values>`.
pub fn triptych_csv(t: &Triptych, norm: &NormStats) -> String {
    let nd = t.complete.channels();
    let mut out = String::from("block,t,observed");
    for j in 1..=nd {
        let _ = write!(out, ",c{j}");
    }
    out.push('\n');
    let corrupted = {
        // Missing frames stay zero in raw units too.
        let mut raw = norm.denormalize(&t.masked.observed);
        for (step, m) in t.masked.mask.iter().enumerate() {
            if !m {
                raw.row_mut(step).fill(0.0);
            }
        }
        raw
    };
    let blocks = [
        ("complete", norm.denormalize(&t.complete.values)),
        ("corrupted", corrupted),
        ("repaired", norm.denormalize(&t.repaired)),
    ];
    for (name, values) in &blocks {
        for (step, row) in values.rows().into_iter().enumerate() {
            let _ = write!(out, "{name},{step},{}", u8::from(t.masked.mask[step]));
            for v in row {
                let _ = write!(out, ",{}", crate::datasets::format_value(*v));
            }
            out.push('\n');
        }
    }
    out
}

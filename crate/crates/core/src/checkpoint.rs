//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! loaded checkpoint reproduces forward passes bit for bit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{write_file, DatasetBundle, NormStats};
use crate::error::{Error, Result};
use crate::nets::{GeneratorSuite, ModelKind, NetConfig, Parameterized, RecurrentClassifier};

pub const FORMAT_VERSION: u32 = 1;

/// The dataset a checkpoint was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub classes: Vec<String>,
    pub seq_len: usize,
    pub channels: usize,
    pub norm: NormStats,
    pub fingerprint: String,
    #[serde(default)]
    pub sample_rate: f64,
    /// Training samples per class, in class order.
    #[serde(default)]
    pub train_class_counts: Vec<usize>,
}

impl From<&DatasetBundle> for DatasetInfo {
    fn from(b: &DatasetBundle) -> Self {
        DatasetInfo {
            name: b.name.clone(),
            classes: b.classes.clone(),
            seq_len: b.seq_len(),
            channels: b.channels(),
            norm: b.norm.clone(),
            fingerprint: b.fingerprint(),
            sample_rate: b.sample_rate,
            train_class_counts: (0..b.num_classes())
                .map(|c| b.train.iter().filter(|s| s.label == c).count())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum ModelParams {
    Generator(GeneratorSuite),
    Oracle(RecurrentClassifier),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub net: NetConfig,
    pub net_fingerprint: String,
    pub dataset: DatasetInfo,
    pub params: ModelParams,
}

pub fn net_fingerprint(net: &NetConfig) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(net).expect("net config serializes")))
}

impl Checkpoint {
    pub fn new(params: ModelParams, net: NetConfig, dataset: DatasetInfo) -> Self {
        let kind = match &params {
            ModelParams::Generator(s) => s.kind(),
            ModelParams::Oracle(_) => ModelKind::Oracle,
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind,
            net_fingerprint: net_fingerprint(&net),
            net,
            dataset,
            params,
        }
    }

    pub fn suite(&self) -> Result<&GeneratorSuite> {
        match &self.params {
            ModelParams::Generator(s) => Ok(s),
            ModelParams::Oracle(_) => Err(Error::Checkpoint("expected a generator, found an oracle".into())),
        }
    }

    pub fn oracle(&self) -> Result<&RecurrentClassifier> {
        match &self.params {
            ModelParams::Oracle(o) => Ok(o),
            ModelParams::Generator(s) => Err(Error::Checkpoint(format!("expected an oracle, found {}", s.kind()))),
        }
    }

    /// Checks internal consistency: fingerprint, kind, and parameter shapes
    /// against a freshly initialized model of the stored config.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", self.format_version)));
        }
        if net_fingerprint(&self.net) != self.net_fingerprint {
            return Err(Error::Checkpoint("net config does not match its fingerprint".into()));
        }
        let net = &self.net;
        if (net.num_classes, net.channels, net.seq_len)
            != (self.dataset.classes.len(), self.dataset.channels, self.dataset.seq_len)
        {
            return Err(Error::Checkpoint("net config disagrees with dataset info".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (stored, fresh): (Vec<_>, Vec<_>) = match &self.params {
            ModelParams::Generator(s) => {
                if s.kind() != self.kind {
                    return Err(Error::Checkpoint(format!("kind {} but parameters of {}", self.kind, s.kind())));
                }
                let fresh = GeneratorSuite::init(self.kind, net, &mut rng)?;
                (shapes(s), shapes(&fresh))
            }
            ModelParams::Oracle(o) => {
                if self.kind != ModelKind::Oracle {
                    return Err(Error::Checkpoint(format!("kind {} but oracle parameters", self.kind)));
                }
                let fresh = RecurrentClassifier::new(net.channels, net.oracle_hidden, net.num_classes, &mut rng);
                (shapes(o), shapes(&fresh))
            }
        };
        if stored != fresh {
            return Err(Error::Checkpoint("parameter shapes do not match the net config".into()));
        }
        Ok(())
    }
}

fn shapes<P: Parameterized>(p: &P) -> Vec<(usize, usize)> {
    p.params().iter().map(|a| a.dim()).collect()
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = serde_json::to_vec(checkpoint)?;
    write_file(path.as_ref(), &bytes)
}

/// Loads and validates a checkpoint; with `expected`, also requires that
/// exact net config.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&NetConfig>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint =
        serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    checkpoint.validate()?;
    if let Some(net) = expected {
        if *net != checkpoint.net {
            return Err(Error::Checkpoint(format!(
                "{}: net config mismatch (stored {:?}, expected {:?})",
                path.display(),
                checkpoint.net,
                net
            )));
        }
    }
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_toy_dataset, ToySpec};
    use ndarray::Array2;

    fn fixture() -> (DatasetBundle, NetConfig) {
        let bundle = make_toy_dataset(&ToySpec {
            seq_len: 10,
            train_per_class: 3,
            test_per_class: 1,
            ..ToySpec::default()
        })
        .unwrap();
        let net = NetConfig {
            latent_dim: 3,
            enc_hidden: 4,
            dec_hidden: 5,
            oracle_hidden: 3,
            num_classes: 2,
            channels: 1,
            seq_len: 10,
            ..NetConfig::default()
        };
        (bundle, net)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (bundle, net) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in ModelKind::GENERATORS {
            let suite = GeneratorSuite::init(kind, &net, &mut rng).unwrap();
            let ck = Checkpoint::new(ModelParams::Generator(suite), net.clone(), DatasetInfo::from(&bundle));
            let path = dir.path().join(format!("{kind}.json"));
            save_checkpoint(&ck, &path).unwrap();
            let loaded = load_checkpoint(&path, Some(&net)).unwrap();
            assert_eq!(loaded, ck);
            let z = Array2::from_shape_fn((2, 3), |(i, j)| (i as f64 - j as f64) * 0.37);
            let a = ck.suite().unwrap().generate(&z, &[0, 1], 10).unwrap();
            let b = loaded.suite().unwrap().generate(&z, &[0, 1], 10).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
            assert_eq!(loaded.dataset.fingerprint, bundle.fingerprint());
        }
    }

    #[test]
    fn mismatches_are_rejected() {
        let (bundle, net) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let oracle = RecurrentClassifier::new(1, 3, 2, &mut rng);
        let ck = Checkpoint::new(ModelParams::Oracle(oracle), net.clone(), DatasetInfo::from(&bundle));
        let path = dir.path().join("oracle.json");
        save_checkpoint(&ck, &path).unwrap();
        assert!(load_checkpoint(&path, Some(&net)).unwrap().oracle().is_ok());
        let other = NetConfig { latent_dim: 4, ..net.clone() };
        assert!(matches!(load_checkpoint(&path, Some(&other)), Err(Error::Checkpoint(_))));

        let mut tampered = ck.clone();
        tampered.net.oracle_hidden = 7;
        save_checkpoint(&tampered, &path).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(Error::Checkpoint(_))));

        std::fs::write(&path, b"{not json").unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(Error::Checkpoint(_))));
    }
}

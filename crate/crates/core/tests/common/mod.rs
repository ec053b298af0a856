#![allow(dead_code)]

pub mod grads;

use ndarray::Array2;
use physiogan::datasets::{make_toy_dataset, DatasetBundle, ToySpec};
use physiogan::nets::{NetConfig, Parameterized};

/// The tiny configuration used for finite-difference checks.
pub fn tiny_net() -> NetConfig {
    NetConfig {
        latent_dim: 2,
        enc_hidden: 4,
        dec_hidden: 4,
        oracle_hidden: 4,
        num_classes: 2,
        channels: 2,
        seq_len: 5,
        ..NetConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub entries: usize,
    pub worst: (usize, usize, f64, f64),
}

/// Relative error with a floor so entries whose true gradient is zero are
/// judged by absolute error.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences of every output of `eval` with respect to every
/// parameter entry of `model`, compared against `analytic[k][p]`, the
/// gradient of output `k` with respect to parameter `p`.
pub fn check_gradients<M, F>(model: &M, analytic: &[Vec<Array2<f64>>], eval: F, eps: f64) -> Vec<GradCheck>
where
    M: Parameterized + Clone,
    F: Fn(&M) -> Vec<f64>,
{
    let mut probe = model.clone();
    let shapes: Vec<(usize, usize)> = model.params().iter().map(|p| p.dim()).collect();
    let outputs = analytic.len();
    let mut checks = vec![
        GradCheck {
            max_rel_error: 0.0,
            entries: 0,
            worst: (0, 0, 0.0, 0.0),
        };
        outputs
    ];
    for (p, &(rows, cols)) in shapes.iter().enumerate() {
        for e in 0..rows * cols {
            let idx = (e / cols, e % cols);
            let original = probe.params()[p][idx];
            probe.params_mut()[p][idx] = original + eps;
            let plus = eval(&probe);
            probe.params_mut()[p][idx] = original - eps;
            let minus = eval(&probe);
            probe.params_mut()[p][idx] = original;
            for k in 0..outputs {
                let numeric = (plus[k] - minus[k]) / (2.0 * eps);
                let a = analytic[k][p][idx];
                let err = rel_error(a, numeric);
                let c = &mut checks[k];
                c.entries += 1;
                if err > c.max_rel_error {
                    c.max_rel_error = err;
                    c.worst = (p, e, a, numeric);
                }
            }
        }
    }
    checks
}

/// The acceptance fixture: 2 classes, T = 32, Nd = 1, 200 + 50 per class.
pub fn desk_fixture() -> DatasetBundle {
    make_toy_dataset(&ToySpec::default()).expect("fixture")
}

//! Training objectives and the annealing schedule, both as plain functions
//! and as batched [`Graph`] nodes. Graph versions average over the batch.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nets::PosteriorParams;

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub beta: f64,
    pub lambda_f: f64,
    pub lambda_a: f64,
    pub lambda_d: f64,
    /// Free-bits threshold on the per-sample KL term.
    pub delta: f64,
    /// Annealing rate.
    pub k: f64,
    pub eta_floor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.2,
            lambda_f: 1.0,
            lambda_a: 1.0,
            lambda_d: 0.2,
            delta: 0.1,
            k: 200.0,
            eta_floor: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta,
            self.lambda_f,
            self.lambda_a,
            self.lambda_d,
            self.delta,
            self.k,
            self.eta_floor,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || self.k == 0.0 || self.eta_floor >= 1.0 {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and nonnegative, k > 0, eta_floor < 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch means of every loss component.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub eta: f64,
    pub recon: f64,
    pub posterior: f64,
    pub feats: f64,
    pub adv: f64,
    pub diverse: f64,
    pub disc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "epoch,eta,recon,posterior,feats,adv,diverse,disc,total";

    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{epoch},{},{},{},{},{},{},{},{}",
            self.eta, self.recon, self.posterior, self.feats, self.adv, self.diverse, self.disc, self.total
        )
    }

    pub fn parse_csv_row(line: &str) -> Option<(usize, LossBreakdown)> {
        let cells: Vec<&str> = line.trim().split(',').collect();
        if cells.len() != 9 {
            return None;
        }
        let epoch = cells[0].parse().ok()?;
        let v: Vec<f64> = cells[1..].iter().map(|c| c.parse().ok()).collect::<Option<_>>()?;
        Some((
            epoch,
            LossBreakdown {
                eta: v[0],
                recon: v[1],
                posterior: v[2],
                feats: v[3],
                adv: v[4],
                diverse: v[5],
                disc: v[6],
                total: v[7],
            },
        ))
    }

    /// Recombines the generator components with this breakdown's `eta`.
    pub fn recombined(&self, weights: &LossWeights) -> f64 {
        total_generator_loss(self, weights, self.eta)
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

fn mean_squared(a: impl ExactSizeIterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    a.zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n as f64
}

/// Mean squared difference over all `T·Nd` entries.
pub fn recon_loss(x: &Array2<f64>, x_bar: &Array2<f64>) -> Result<f64> {
    if x.dim() != x_bar.dim() {
        return Err(Error::Shape(format!("recon: {:?} vs {:?}", x.dim(), x_bar.dim())));
    }
    Ok(mean_squared(x.iter().copied(), x_bar.iter().copied()))
}

/// KL divergence to the standard normal, averaged over latent dimensions.
pub fn kl_divergence(post: &PosteriorParams) -> f64 {
    let nz = post.mu.len() as f64;
    let s: f64 = post
        .mu
        .iter()
        .zip(&post.log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum();
    -0.5 * s / nz
}

/// Free-bits posterior term `max(KL − δ, 0)`.
pub fn posterior_loss(post: &PosteriorParams, delta: f64) -> f64 {
    (kl_divergence(post) - delta).max(0.0)
}

/// `(1/d_f)·‖ψ(x) − ψ(x̄)‖₂`.
pub fn feature_match_loss(psi_x: &[f64], psi_xbar: &[f64]) -> Result<f64> {
    same_len(psi_x.len(), psi_xbar.len(), "feature match")?;
    if psi_x.is_empty() {
        return Ok(0.0);
    }
    let norm = psi_x
        .iter()
        .zip(psi_xbar)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(norm / psi_x.len() as f64)
}

/// `−log p_y` with `p_y` floored at [`PROB_FLOOR`]. `y` is 0-based.
pub fn adversarial_loss(probs: &[f64], y: usize) -> Result<f64> {
    let p = probs
        .get(y)
        .ok_or_else(|| Error::InvalidArgument(format!("class {y} outside {} probabilities", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean squared difference between latent codes.
pub fn diversity_loss(z: &[f64], z_bar: &[f64]) -> Result<f64> {
    same_len(z.len(), z_bar.len(), "diversity")?;
    Ok(mean_squared(z.iter().copied(), z_bar.iter().copied()))
}

/// Real-batch cross entropy plus fake-batch `−log p(generated)`, each a batch mean.
/// The generated class is the last entry of every probability vector.
pub fn discriminator_loss(real_probs: &[Vec<f64>], real_labels: &[usize], fake_probs: &[Vec<f64>]) -> Result<f64> {
    if real_probs.is_empty() || fake_probs.is_empty() {
        return Err(Error::InvalidArgument("discriminator loss needs nonempty batches".into()));
    }
    same_len(real_probs.len(), real_labels.len(), "discriminator labels")?;
    let mut real = 0.0;
    for (p, &y) in real_probs.iter().zip(real_labels) {
        real += adversarial_loss(p, y)?;
    }
    let mut fake = 0.0;
    for p in fake_probs {
        fake += adversarial_loss(p, p.len().saturating_sub(1))?;
    }
    Ok(real / real_probs.len() as f64 + fake / fake_probs.len() as f64)
}

/// `max(k / (k + e^{t/k}), η_floor)` for epoch `t ≥ 1`.
pub fn anneal_coefficient(t: usize, weights: &LossWeights) -> f64 {
    let k = weights.k;
    (k / (k + (t as f64 / k).exp())).max(weights.eta_floor)
}

/// `η·recon + (1−η)(β·post + λ_f·feats) + (1−η)(λ_a·adv + λ_d·div)`.
pub fn total_generator_loss(parts: &LossBreakdown, weights: &LossWeights, eta: f64) -> f64 {
    eta * parts.recon
        + (1.0 - eta) * (weights.beta * parts.posterior + weights.lambda_f * parts.feats)
        + (1.0 - eta) * (weights.lambda_a * parts.adv + weights.lambda_d * parts.diverse)
}

/// Graph versions over batched nodes.
pub mod graph {
    use super::*;

    /// Mean squared difference over every entry of every frame.
    pub fn recon(g: &mut Graph<'_>, real: &[Var], fake: &[Var]) -> Var {
        let a = g.concat_cols(real);
        let b = g.concat_cols(fake);
        mean_squared(g, a, b)
    }

    pub fn mean_squared(g: &mut Graph<'_>, a: Var, b: Var) -> Var {
        let d = g.sub(a, b);
        let sq = g.square(d);
        g.mean(sq)
    }

    /// Per-sample KL, `batch × 1`.
    pub fn kl(g: &mut Graph<'_>, mu: Var, log_var: Var) -> Var {
        let nz = g.value(mu).ncols() as f64;
        let mu2 = g.square(mu);
        let ev = g.exp(log_var);
        let t = g.add_scalar(log_var, 1.0);
        let t = g.sub(t, mu2);
        let t = g.sub(t, ev);
        let s = g.sum_cols(t);
        g.scale(s, -0.5 / nz)
    }

    /// Batch mean of the free-bits posterior term.
    pub fn posterior(g: &mut Graph<'_>, mu: Var, log_var: Var, delta: f64) -> Var {
        let kl = kl(g, mu, log_var);
        let shifted = g.add_scalar(kl, -delta);
        let clipped = g.relu(shifted);
        g.mean(clipped)
    }

    /// Batch mean of `(1/d_f)·‖ψ_a − ψ_b‖₂`.
    pub fn feature_match(g: &mut Graph<'_>, psi_a: Var, psi_b: Var) -> Var {
        let df = g.value(psi_a).ncols() as f64;
        let d = g.sub(psi_a, psi_b);
        let sq = g.square(d);
        let s = g.sum_cols(sq);
        let norm = g.sqrt(s);
        let m = g.mean(norm);
        g.scale(m, 1.0 / df)
    }

    /// Batch mean of `−log p_{cols[i]}` from logits, probabilities floored.
    pub fn cross_entropy(g: &mut Graph<'_>, logits: Var, cols: &[usize]) -> Var {
        let lp = g.log_softmax(logits);
        let picked = g.pick(lp, cols);
        let floored = g.clamp_min(picked, PROB_FLOOR.ln());
        let m = g.mean(floored);
        g.scale(m, -1.0)
    }

    pub fn discriminator(g: &mut Graph<'_>, real_logits: Var, labels: &[usize], fake_logits: Var) -> Var {
        let (fake_rows, classes) = g.value(fake_logits).dim();
        let real = cross_entropy(g, real_logits, labels);
        let fake = cross_entropy(g, fake_logits, &vec![classes - 1; fake_rows]);
        g.add(real, fake)
    }

    /// Scalar nodes of the generator components.
    #[derive(Clone, Copy, Debug)]
    pub struct GeneratorTerms {
        pub recon: Var,
        pub posterior: Var,
        pub feats: Var,
        pub adv: Var,
        pub diverse: Var,
    }

    pub fn total(g: &mut Graph<'_>, terms: GeneratorTerms, w: &LossWeights, eta: f64) -> Var {
        let parts = [
            (terms.recon, eta),
            (terms.posterior, (1.0 - eta) * w.beta),
            (terms.feats, (1.0 - eta) * w.lambda_f),
            (terms.adv, (1.0 - eta) * w.lambda_a),
            (terms.diverse, (1.0 - eta) * w.lambda_d),
        ];
        let mut acc = g.scale(parts[0].0, parts[0].1);
        for &(v, c) in &parts[1..] {
            let s = g.scale(v, c);
            acc = g.add(acc, s);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn post(mu: Vec<f64>, log_var: Vec<f64>) -> PosteriorParams {
        PosteriorParams {
            mu: Array1::from(mu),
            log_var: Array1::from(log_var),
        }
    }

    #[test]
    fn recon_examples() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(recon_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(recon_loss(&x, &(&x + 1.0)).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Array2::from_shape_fn((3, 2), |_| rng.random_range(-2.0f64..2.0));
        let b = Array2::from_shape_fn((3, 2), |_| rng.random_range(-2.0f64..2.0));
        let mut brute = 0.0f64;
        for i in 0..3 {
            for j in 0..2 {
                brute += (a[[i, j]] - b[[i, j]]).powi(2);
            }
        }
        assert!((recon_loss(&a, &b).unwrap() - brute / 6.0).abs() < 1e-12);
        assert!(recon_loss(&a, &x).is_err());
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(posterior_loss(&post(vec![0.0; 4], vec![0.0; 4]), 0.1), 0.0);
        let p = post(vec![1.0], vec![0.0]);
        assert!((kl_divergence(&p) - 0.5).abs() < 1e-12);
        assert!((posterior_loss(&p, 0.1) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let lv: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = post(mu.clone(), lv.clone());
        // E_q[log q(z) − log p(z)], per dimension, averaged.
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            for j in 0..4 {
                let sd = (lv[j] / 2.0).exp();
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = mu[j] + sd * e;
                let log_q = -0.5 * e * e - sd.ln();
                let log_p = -0.5 * z * z;
                acc += log_q - log_p;
            }
        }
        let mc = acc / (draws * 4) as f64;
        let closed = kl_divergence(&p);
        assert!((mc - closed).abs() / closed < 0.02, "mc {mc} closed {closed}");
    }

    #[test]
    fn feature_match_examples() {
        let a = vec![0.0; 64];
        let b = vec![1.0; 64];
        assert_eq!(feature_match_loss(&a, &a).unwrap(), 0.0);
        assert!((feature_match_loss(&a, &b).unwrap() - 0.125).abs() < 1e-15);
        assert!(feature_match_loss(&a, &b[..3]).is_err());
    }

    #[test]
    fn adversarial_examples() {
        assert_eq!(adversarial_loss(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((adversarial_loss(&[0.5, 0.5], 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((adversarial_loss(&[0.1, 0.9], 0).unwrap() - std::f64::consts::LN_10).abs() < 1e-12);
        assert!((adversarial_loss(&[0.0, 1.0], 0).unwrap() - 1e12f64.ln()).abs() < 1e-9);
        assert!(adversarial_loss(&[1.0], 3).is_err());
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(diversity_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(diversity_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn discriminator_examples() {
        let perfect = discriminator_loss(&[vec![1.0, 0.0, 0.0]], &[0], &[vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(perfect, 0.0);
        let u = vec![1.0 / 3.0; 3];
        let uniform = discriminator_loss(&[u.clone(), u.clone()], &[0, 1], std::slice::from_ref(&u)).unwrap();
        assert!((uniform - 2.0 * 3f64.ln()).abs() < 1e-12);
        let single = discriminator_loss(&[vec![0.2, 0.7, 0.1]], &[1], &[vec![0.3, 0.3, 0.4]]).unwrap();
        assert!((single - (-(0.7f64).ln() - (0.4f64).ln())).abs() < 1e-12);
        let better = discriminator_loss(&[vec![0.1, 0.8, 0.1]], &[1], &[vec![0.3, 0.3, 0.4]]).unwrap();
        assert!(better < single);
        assert!(discriminator_loss(&[], &[], &[u]).is_err());
    }

    #[test]
    fn anneal_examples() {
        let w = LossWeights::default();
        assert!((anneal_coefficient(1, &w) - 0.995_000_062_4).abs() < 1e-10);
        assert!((anneal_coefficient(1, &w) - 0.99501).abs() < 1e-5);
        assert_eq!(anneal_coefficient(100_000, &w), 0.1);
        let first = (1..5000).find(|&t| anneal_coefficient(t, &w) <= 0.1 + 1e-12).unwrap();
        // 200·ln 1800 ≈ 1499.11, so the clamp first binds at epoch 1500.
        assert_eq!(first, (200.0 * 1800f64.ln()).ceil() as usize);
        assert!(anneal_coefficient(1499, &w) > 0.1);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        let ones = LossBreakdown {
            recon: 1.0,
            posterior: 1.0,
            feats: 1.0,
            adv: 1.0,
            diverse: 1.0,
            ..Default::default()
        };
        assert!((total_generator_loss(&ones, &w, 0.5) - 1.7).abs() < 1e-12);
        assert_eq!(total_generator_loss(&ones, &w, 1.0), 1.0);
        assert_eq!(total_generator_loss(&LossBreakdown::default(), &w, 0.3), 0.0);
    }

    #[test]
    fn csv_row_round_trip() {
        let b = LossBreakdown {
            eta: 0.99,
            recon: 0.1234567890123,
            total: 1e-17,
            ..Default::default()
        };
        let (epoch, parsed) = LossBreakdown::parse_csv_row(&b.csv_row(7)).unwrap();
        assert_eq!(epoch, 7);
        assert_eq!(parsed, b);
    }

    #[test]
    fn graph_losses_match_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rand = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0f64..1.0));
        let (mu, lv, pa, pb, la, lb) = (rand(3, 4), rand(3, 4), rand(3, 8), rand(3, 8), rand(3, 3), rand(3, 3));
        let mut g = Graph::new();
        let (vmu, vlv) = (g.constant(mu.clone()), g.constant(lv.clone()));
        let vp = graph::posterior(&mut g, vmu, vlv, 0.1);
        let (va, vb) = (g.constant(pa.clone()), g.constant(pb.clone()));
        let vf = graph::feature_match(&mut g, va, vb);
        let (vla, vlb) = (g.constant(la.clone()), g.constant(lb.clone()));
        let vd = graph::discriminator(&mut g, vla, &[0, 1, 0], vlb);

        let posts: Vec<_> = (0..3)
            .map(|i| posterior_loss(&post(mu.row(i).to_vec(), lv.row(i).to_vec()), 0.1))
            .collect();
        assert!((g.scalar(vp) - posts.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        let feats: f64 = (0..3)
            .map(|i| feature_match_loss(pa.row(i).as_slice().unwrap(), pb.row(i).as_slice().unwrap()).unwrap())
            .sum();
        assert!((g.scalar(vf) - feats / 3.0).abs() < 1e-12);
        let softmax = crate::nets::softmax_rows;
        let rows = |m: &Array2<f64>| softmax(m).rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        let plain = discriminator_loss(&rows(&la), &[0, 1, 0], &rows(&lb)).unwrap();
        assert!((g.scalar(vd) - plain).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn anneal_monotone_and_bounded(t in 1usize..20_000) {
            let w = LossWeights::default();
            let (a, b) = (anneal_coefficient(t, &w), anneal_coefficient(t + 1, &w));
            prop_assert!(b <= a);
            prop_assert!((0.1..1.0).contains(&a));
        }

        #[test]
        fn posterior_nonnegative(mu in prop::collection::vec(-3.0f64..3.0, 1..6), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lv = mu.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
            prop_assert!(posterior_loss(&post(mu, lv), 0.1) >= 0.0);
        }

        #[test]
        fn posterior_dead_zone_near_prior(mu in -0.05f64..0.05, lv in -0.05f64..0.05) {
            prop_assert_eq!(posterior_loss(&post(vec![mu], vec![lv]), 0.1), 0.0);
        }

        #[test]
        fn feature_match_homogeneous(c in -10.0f64..10.0, d in prop::collection::vec(-1.0f64..1.0, 1..20)) {
            let zero = vec![0.0; d.len()];
            let scaled: Vec<f64> = d.iter().map(|v| v * c).collect();
            let base = feature_match_loss(&zero, &d).unwrap();
            let s = feature_match_loss(&zero, &scaled).unwrap();
            prop_assert!((s - c.abs() * base).abs() < 1e-12);
        }

        #[test]
        fn diversity_symmetric(z in prop::collection::vec(-3.0f64..3.0, 4), w in prop::collection::vec(-3.0f64..3.0, 4)) {
            prop_assert_eq!(diversity_loss(&z, &w).unwrap(), diversity_loss(&w, &z).unwrap());
        }

        #[test]
        fn total_linear_in_each_component(base in prop::collection::vec(0.0f64..3.0, 5), which in 0usize..5, delta in 0.0f64..2.0, eta in 0.1f64..1.0) {
            let w = LossWeights::default();
            let make = |v: &[f64]| LossBreakdown { recon: v[0], posterior: v[1], feats: v[2], adv: v[3], diverse: v[4], ..Default::default() };
            let mut one = base.clone();
            one[which] += delta;
            let mut two = base.clone();
            two[which] += 2.0 * delta;
            let (a, b, c) = (
                total_generator_loss(&make(&base), &w, eta),
                total_generator_loss(&make(&one), &w, eta),
                total_generator_loss(&make(&two), &w, eta),
            );
            prop_assert!(((c - b) - (b - a)).abs() < 1e-9);
        }
    }
}

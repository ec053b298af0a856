//! Training loops for PhysioGAN, the baselines, the oracle and the TSTR
//! classifiers.
//!
//! Every loop draws all randomness (initialization, batch order, latent
//! noise, fake labels) from one ChaCha8 stream seeded by the config, so a
//! fixed seed reproduces the log exactly.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{split, DatasetBundle, SequenceSample};
use crate::error::{Error, Result};
use crate::features::{self, LinearSvm, SvmConfig};
use crate::graph::{Graph, Var};
use crate::losses::{self, graph::GeneratorTerms, LossBreakdown, LossWeights};
use crate::metrics::auc_score;
use crate::nets::{
    argmax, one_hot, time_major, Decoder, Discriminator, Encoder, Feedback, GeneratorSuite, ModelKind, NetConfig,
    Parameterized, RecurrentClassifier, RecurrentGenerator,
};
use crate::optim::{clip_global_norm, Adam};

/// Settings for the oracle and the TSTR recurrent classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of the training samples held out for early stopping.
    pub holdout: f64,
    /// Epochs without holdout improvement before stopping.
    pub patience: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.005,
            holdout: 0.1,
            patience: 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Ceiling on the joint gradient norm of each update; 0 disables clipping.
    pub clip_norm: f64,
    /// Synthetic-set size for downstream evaluation, as a multiple of the train split.
    pub synthetic_factor: usize,
    pub weights: LossWeights,
    /// `num_classes`, `channels` and `seq_len` are overwritten from the dataset.
    pub net: NetConfig,
    pub classifier: ClassifierConfig,
    pub svm: SvmConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 5000,
            batch_size: 256,
            learning_rate: 0.001,
            seed: 0,
            clip_norm: 5.0,
            synthetic_factor: 10,
            weights: LossWeights::default(),
            net: NetConfig::default(),
            classifier: ClassifierConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("epochs, batch_size and learning_rate must be positive".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::InvalidArgument("clip_norm must be nonnegative".into()));
        }
        self.weights.validate()?;
        self.net.validate()
    }

    /// The net config with the dataset-derived fields filled in.
    pub fn net_for(&self, bundle: &DatasetBundle) -> NetConfig {
        NetConfig {
            num_classes: bundle.num_classes(),
            channels: bundle.channels(),
            seq_len: bundle.seq_len(),
            ..self.net.clone()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// One row per completed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub kind: ModelKind,
    pub entries: Vec<LossBreakdown>,
    pub wall_clock_secs: f64,
    pub seed: u64,
    pub config_fingerprint: String,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LossBreakdown::CSV_HEADER);
        out.push('\n');
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&e.csv_row(i + 1));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::datasets::write_file(path.as_ref(), self.to_csv().as_bytes())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<LossBreakdown>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                LossBreakdown::parse_csv_row(l)
                    .map(|(_, b)| b)
                    .ok_or_else(|| Error::format(path, format!("bad log row {l:?}")))
            })
            .collect()
    }
}

/// Latent noise consumed by one generator update.
#[derive(Clone, Debug)]
pub struct GeneratorNoise {
    /// Reparameterization noise for the real batch, `batch × Nz`.
    pub eps: Array2<f64>,
    /// Fresh latent codes for the adversarial and diversity terms.
    pub z_fake: Array2<f64>,
    pub y_fake: Vec<usize>,
}

impl GeneratorNoise {
    pub fn sample<R: Rng>(real: usize, fake: usize, latent: usize, classes: usize, rng: &mut R) -> Self {
        GeneratorNoise {
            eps: standard_normal(real, latent, rng),
            z_fake: standard_normal(fake, latent, rng),
            y_fake: uniform_labels(fake, classes, rng),
        }
    }
}

pub fn standard_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

pub fn uniform_labels<R: Rng>(n: usize, classes: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn constants(g: &mut Graph<'_>, frames: &[Array2<f64>]) -> Vec<Var> {
    frames.iter().map(|f| g.constant(f.clone())).collect()
}

/// Reparameterized latent `μ + exp(σ̂/2) ⊙ ε`.
fn reparameterize(g: &mut Graph<'_>, mu: Var, log_var: Var, eps: &Array2<f64>) -> Var {
    let half = g.scale(log_var, 0.5);
    let sd = g.exp(half);
    let e = g.constant(eps.clone());
    let spread = g.mul(sd, e);
    g.add(mu, spread)
}

/// The PhysioGAN generator objective on one real batch (time-major frames).
#[allow(clippy::too_many_arguments)]
pub fn physiogan_generator_graph<'p>(
    g: &mut Graph<'p>,
    encoder: &'p Encoder,
    decoder: &'p Decoder,
    discriminator: &'p Discriminator,
    real: &[Array2<f64>],
    labels: &[usize],
    noise: &GeneratorNoise,
    weights: &LossWeights,
    eta: f64,
) -> (GeneratorTerms, Var) {
    let classes = decoder.num_classes();
    let steps = real.len();
    let xs = constants(g, real);
    let (mu, log_var) = encoder.forward_graph(g, &xs);
    let z = reparameterize(g, mu, log_var, &noise.eps);
    let y = g.constant(one_hot(labels, classes));
    let x_bar = decoder.forward_graph(g, z, y, steps, Feedback::Own);
    let recon = losses::graph::recon(g, &xs, &x_bar);
    let posterior = losses::graph::posterior(g, mu, log_var, weights.delta);
    let (_, psi_real) = discriminator.forward_frames(g, &xs);
    let (_, psi_fake) = discriminator.forward_frames(g, &x_bar);
    let feats = losses::graph::feature_match(g, psi_real, psi_fake);

    let z_fake = g.constant(noise.z_fake.clone());
    let y_fake = g.constant(one_hot(&noise.y_fake, classes));
    let x_fake = decoder.forward_graph(g, z_fake, y_fake, steps, Feedback::Own);
    let (logits, _) = discriminator.forward_frames(g, &x_fake);
    let adv = losses::graph::cross_entropy(g, logits, &noise.y_fake);
    let (z_bar, _) = encoder.forward_graph(g, &x_fake);
    let diverse = losses::graph::mean_squared(g, z_fake, z_bar);

    let terms = GeneratorTerms {
        recon,
        posterior,
        feats,
        adv,
        diverse,
    };
    let total = losses::graph::total(g, terms, weights, eta);
    (terms, total)
}

/// The discriminator objective: real batch with labels plus a fake batch.
pub fn discriminator_graph<'p>(
    g: &mut Graph<'p>,
    discriminator: &'p Discriminator,
    real: &[Array2<f64>],
    labels: &[usize],
    fake: &[Array2<f64>],
) -> Var {
    let xr = constants(g, real);
    let xf = constants(g, fake);
    let (real_logits, _) = discriminator.forward_frames(g, &xr);
    let (fake_logits, _) = discriminator.forward_frames(g, &xf);
    losses::graph::discriminator(g, real_logits, labels, fake_logits)
}

/// Teacher-forced next-step mean squared error of the CRNN baseline.
pub fn crnn_graph<'p>(g: &mut Graph<'p>, decoder: &'p Decoder, real: &[Array2<f64>], labels: &[usize], z: &Array2<f64>) -> Var {
    let xs = constants(g, real);
    let zv = g.constant(z.clone());
    let y = g.constant(one_hot(labels, decoder.num_classes()));
    let pred = decoder.forward_graph(g, zv, y, real.len(), Feedback::Teacher(&xs));
    losses::graph::recon(g, &xs, &pred)
}

/// CVRAE objective `recon + β·posterior`; returns `(recon, posterior, total)`.
pub fn cvrae_graph<'p>(
    g: &mut Graph<'p>,
    encoder: &'p Encoder,
    decoder: &'p Decoder,
    real: &[Array2<f64>],
    labels: &[usize],
    eps: &Array2<f64>,
    weights: &LossWeights,
) -> (Var, Var, Var) {
    let xs = constants(g, real);
    let (mu, log_var) = encoder.forward_graph(g, &xs);
    let z = reparameterize(g, mu, log_var, eps);
    let y = g.constant(one_hot(labels, decoder.num_classes()));
    let x_bar = decoder.forward_graph(g, z, y, real.len(), Feedback::Own);
    let recon = losses::graph::recon(g, &xs, &x_bar);
    let posterior = losses::graph::posterior(g, mu, log_var, weights.delta);
    let weighted = g.scale(posterior, weights.beta);
    let total = g.add(recon, weighted);
    (recon, posterior, total)
}

/// Generator side of the GAN baselines.
#[derive(Clone, Copy)]
pub enum GanGenerator<'p> {
    Recurrent(&'p RecurrentGenerator),
    Autoregressive(&'p Decoder),
}

impl<'p> GanGenerator<'p> {
    fn frames(self, g: &mut Graph<'p>, z: &Array2<f64>, labels: &[usize], steps: usize) -> Vec<Var> {
        let zv = g.constant(z.clone());
        match self {
            GanGenerator::Recurrent(gen) => {
                let y = g.constant(one_hot(labels, gen.num_classes()));
                gen.forward_graph(g, zv, y, steps)
            }
            GanGenerator::Autoregressive(dec) => {
                let y = g.constant(one_hot(labels, dec.num_classes()));
                dec.forward_graph(g, zv, y, steps, Feedback::Own)
            }
        }
    }

    /// Generated frames as plain values, for the discriminator update.
    pub fn sample(self, z: &Array2<f64>, labels: &[usize], steps: usize) -> Vec<Array2<f64>> {
        let mut g = Graph::new();
        let frames = self.frames(&mut g, z, labels, steps);
        frames.iter().map(|f| g.value(*f).clone()).collect()
    }
}

/// `−log D(G(z, y))_y` for the GAN baselines.
pub fn gan_generator_graph<'p>(
    g: &mut Graph<'p>,
    generator: GanGenerator<'p>,
    discriminator: &'p Discriminator,
    z: &Array2<f64>,
    labels: &[usize],
    steps: usize,
) -> Var {
    let frames = generator.frames(g, z, labels, steps);
    let (logits, _) = discriminator.forward_frames(g, &frames);
    losses::graph::cross_entropy(g, logits, labels)
}

fn shuffled_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

fn batch_frames(samples: &[SequenceSample], idx: &[usize]) -> (Vec<Array2<f64>>, Vec<usize>) {
    let values: Vec<&Array2<f64>> = idx.iter().map(|&i| &samples[i].values).collect();
    (time_major(&values), idx.iter().map(|&i| samples[i].label).collect())
}

/// Backpropagates `loss` into the parameters listed by `params`, clips, and
/// returns the gradients in the same order.
fn gradients(g: &Graph<'_>, loss: Var, params: &[&Array2<f64>], clip: f64) -> Vec<Array2<f64>> {
    let mut grads = g.backward(loss).collect(params);
    if clip > 0.0 {
        clip_global_norm(&mut grads, clip);
    }
    grads
}

fn check_finite(value: f64, epoch: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, loss: value })
    }
}

fn update_discriminator(
    disc: &mut Discriminator,
    opt: &mut Adam,
    real: &[Array2<f64>],
    labels: &[usize],
    fake: &[Array2<f64>],
    clip: f64,
) -> f64 {
    let (loss, grads) = {
        let mut g = Graph::new();
        let l = discriminator_graph(&mut g, disc, real, labels, fake);
        (g.scalar(l), gradients(&g, l, &disc.params(), clip))
    };
    opt.step(disc.params_mut(), &grads);
    loss
}

fn check_training_inputs(bundle: &DatasetBundle, cfg: &TrainingConfig) -> Result<()> {
    cfg.validate()?;
    if bundle.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    Ok(())
}

struct EpochAccumulator {
    sum: LossBreakdown,
    batches: usize,
}

impl EpochAccumulator {
    fn new() -> Self {
        EpochAccumulator {
            sum: LossBreakdown::default(),
            batches: 0,
        }
    }

    fn add(&mut self, b: &LossBreakdown) {
        self.sum.recon += b.recon;
        self.sum.posterior += b.posterior;
        self.sum.feats += b.feats;
        self.sum.adv += b.adv;
        self.sum.diverse += b.diverse;
        self.sum.disc += b.disc;
        self.sum.total += b.total;
        self.batches += 1;
    }

    fn finish(self, eta: f64) -> LossBreakdown {
        let n = self.batches.max(1) as f64;
        LossBreakdown {
            eta,
            recon: self.sum.recon / n,
            posterior: self.sum.posterior / n,
            feats: self.sum.feats / n,
            adv: self.sum.adv / n,
            diverse: self.sum.diverse / n,
            disc: self.sum.disc / n,
            total: self.sum.total / n,
        }
    }
}

fn report_epoch(kind: ModelKind, epoch: usize, epochs: usize, b: &LossBreakdown) {
    if epoch == 1 || epoch == epochs || epoch.is_multiple_of(50) {
        log::info!(
            "{kind} epoch {epoch}/{epochs}: eta {:.4} recon {:.4} total {:.4} disc {:.4}",
            b.eta,
            b.recon,
            b.total,
            b.disc
        );
    }
}

/// PhysioGAN training: per batch one discriminator update, then one update of
/// encoder and decoder on the annealed composite objective.
pub fn train_physiogan(bundle: &DatasetBundle, cfg: &TrainingConfig) -> Result<(GeneratorSuite, TrainingLog)> {
    check_training_inputs(bundle, cfg)?;
    let started = Instant::now();
    let net = cfg.net_for(bundle);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut encoder = Encoder::new(&net, &mut rng);
    let mut decoder = Decoder::new(&net, &mut rng);
    let mut disc = Discriminator::new(&net, &mut rng);
    let mut gen_params = encoder.params();
    gen_params.extend(decoder.params());
    let mut gen_opt = Adam::new(cfg.learning_rate, &gen_params);
    let mut disc_opt = Adam::new(cfg.learning_rate, &disc.params());
    let steps = net.seq_len;
    let mut entries = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let eta = losses::anneal_coefficient(epoch, &cfg.weights);
        let mut acc = EpochAccumulator::new();
        for idx in shuffled_batches(bundle.train.len(), cfg.batch_size, &mut rng) {
            let (real, labels) = batch_frames(&bundle.train, &idx);
            let m = idx.len();

            let z = standard_normal(m, net.latent_dim, &mut rng);
            let y = uniform_labels(m, net.num_classes, &mut rng);
            let fake = GanGenerator::Autoregressive(&decoder).sample(&z, &y, steps);
            let disc_loss = update_discriminator(&mut disc, &mut disc_opt, &real, &labels, &fake, cfg.clip_norm);

            let noise = GeneratorNoise::sample(m, m, net.latent_dim, net.num_classes, &mut rng);
            let (parts, grads) = {
                let mut g = Graph::new();
                let (t, total) = physiogan_generator_graph(
                    &mut g, &encoder, &decoder, &disc, &real, &labels, &noise, &cfg.weights, eta,
                );
                let parts = LossBreakdown {
                    eta,
                    recon: g.scalar(t.recon),
                    posterior: g.scalar(t.posterior),
                    feats: g.scalar(t.feats),
                    adv: g.scalar(t.adv),
                    diverse: g.scalar(t.diverse),
                    disc: disc_loss,
                    total: g.scalar(total),
                };
                check_finite(parts.total, epoch)?;
                let mut params = encoder.params();
                params.extend(decoder.params());
                (parts, gradients(&g, total, &params, cfg.clip_norm))
            };
            let mut params = encoder.params_mut();
            params.extend(decoder.params_mut());
            gen_opt.step(params, &grads);
            acc.add(&parts);
        }
        let row = acc.finish(eta);
        report_epoch(ModelKind::Physiogan, epoch, cfg.epochs, &row);
        entries.push(row);
    }

    let log = TrainingLog {
        kind: ModelKind::Physiogan,
        entries,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
    };
    Ok((
        GeneratorSuite::Physiogan {
            encoder,
            decoder,
            discriminator: disc,
        },
        log,
    ))
}

/// Baseline training. Baselines have no annealing; their log rows carry
/// `eta = 1` and `total` is the optimized objective.
pub fn train_baseline(kind: ModelKind, bundle: &DatasetBundle, cfg: &TrainingConfig) -> Result<(GeneratorSuite, TrainingLog)> {
    check_training_inputs(bundle, cfg)?;
    let started = Instant::now();
    let net = cfg.net_for(bundle);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let suite = match kind {
        ModelKind::Crnn | ModelKind::Cvrae | ModelKind::Rcgan | ModelKind::RcganAr => {
            GeneratorSuite::init(kind, &net, &mut rng)?
        }
        other => {
            return Err(Error::InvalidArgument(format!("{other} is not a baseline")));
        }
    };
    let (suite, entries) = match suite {
        GeneratorSuite::Crnn { decoder } => {
            let (decoder, entries) = run_crnn(decoder, bundle, cfg, &net, &mut rng)?;
            (GeneratorSuite::Crnn { decoder }, entries)
        }
        GeneratorSuite::Cvrae { encoder, decoder } => {
            let (encoder, decoder, entries) = run_cvrae(encoder, decoder, bundle, cfg, &net, &mut rng)?;
            (GeneratorSuite::Cvrae { encoder, decoder }, entries)
        }
        GeneratorSuite::Rcgan {
            mut generator,
            mut discriminator,
        } => {
            let entries = run_gan(
                GanParams::Recurrent(&mut generator),
                &mut discriminator,
                bundle,
                cfg,
                &net,
                &mut rng,
            )?;
            (
                GeneratorSuite::Rcgan {
                    generator,
                    discriminator,
                },
                entries,
            )
        }
        GeneratorSuite::RcganAr {
            mut decoder,
            mut discriminator,
        } => {
            let entries = run_gan(
                GanParams::Autoregressive(&mut decoder),
                &mut discriminator,
                bundle,
                cfg,
                &net,
                &mut rng,
            )?;
            (GeneratorSuite::RcganAr { decoder, discriminator }, entries)
        }
        GeneratorSuite::Physiogan { .. } => unreachable!("rejected above"),
    };
    let log = TrainingLog {
        kind,
        entries,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
    };
    Ok((suite, log))
}

fn run_crnn(
    mut decoder: Decoder,
    bundle: &DatasetBundle,
    cfg: &TrainingConfig,
    net: &NetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Decoder, Vec<LossBreakdown>)> {
    let mut opt = Adam::new(cfg.learning_rate, &decoder.params());
    let mut entries = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut acc = EpochAccumulator::new();
        for idx in shuffled_batches(bundle.train.len(), cfg.batch_size, rng) {
            let (real, labels) = batch_frames(&bundle.train, &idx);
            let z = standard_normal(idx.len(), net.latent_dim, rng);
            let (loss, grads) = {
                let mut g = Graph::new();
                let l = crnn_graph(&mut g, &decoder, &real, &labels, &z);
                (g.scalar(l), gradients(&g, l, &decoder.params(), cfg.clip_norm))
            };
            check_finite(loss, epoch)?;
            opt.step(decoder.params_mut(), &grads);
            acc.add(&LossBreakdown {
                recon: loss,
                total: loss,
                ..Default::default()
            });
        }
        let row = acc.finish(1.0);
        report_epoch(ModelKind::Crnn, epoch, cfg.epochs, &row);
        entries.push(row);
    }
    Ok((decoder, entries))
}

fn run_cvrae(
    mut encoder: Encoder,
    mut decoder: Decoder,
    bundle: &DatasetBundle,
    cfg: &TrainingConfig,
    net: &NetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Encoder, Decoder, Vec<LossBreakdown>)> {
    let mut params = encoder.params();
    params.extend(decoder.params());
    let mut opt = Adam::new(cfg.learning_rate, &params);
    let mut entries = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut acc = EpochAccumulator::new();
        for idx in shuffled_batches(bundle.train.len(), cfg.batch_size, rng) {
            let (real, labels) = batch_frames(&bundle.train, &idx);
            let eps = standard_normal(idx.len(), net.latent_dim, rng);
            let (parts, grads) = {
                let mut g = Graph::new();
                let (recon, posterior, total) = cvrae_graph(&mut g, &encoder, &decoder, &real, &labels, &eps, &cfg.weights);
                let parts = LossBreakdown {
                    recon: g.scalar(recon),
                    posterior: g.scalar(posterior),
                    total: g.scalar(total),
                    ..Default::default()
                };
                let mut params = encoder.params();
                params.extend(decoder.params());
                (parts, gradients(&g, total, &params, cfg.clip_norm))
            };
            check_finite(parts.total, epoch)?;
            let mut params = encoder.params_mut();
            params.extend(decoder.params_mut());
            opt.step(params, &grads);
            acc.add(&parts);
        }
        let row = acc.finish(1.0);
        report_epoch(ModelKind::Cvrae, epoch, cfg.epochs, &row);
        entries.push(row);
    }
    Ok((encoder, decoder, entries))
}

enum GanParams<'a> {
    Recurrent(&'a mut RecurrentGenerator),
    Autoregressive(&'a mut Decoder),
}

impl GanParams<'_> {
    fn view(&self) -> GanGenerator<'_> {
        match self {
            GanParams::Recurrent(g) => GanGenerator::Recurrent(g),
            GanParams::Autoregressive(d) => GanGenerator::Autoregressive(d),
        }
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        match self {
            GanParams::Recurrent(g) => g.params(),
            GanParams::Autoregressive(d) => d.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            GanParams::Recurrent(g) => g.params_mut(),
            GanParams::Autoregressive(d) => d.params_mut(),
        }
    }
}

fn run_gan(
    mut generator: GanParams<'_>,
    disc: &mut Discriminator,
    bundle: &DatasetBundle,
    cfg: &TrainingConfig,
    net: &NetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LossBreakdown>> {
    let kind = match generator {
        GanParams::Recurrent(_) => ModelKind::Rcgan,
        GanParams::Autoregressive(_) => ModelKind::RcganAr,
    };
    let mut gen_opt = Adam::new(cfg.learning_rate, &generator.params());
    let mut disc_opt = Adam::new(cfg.learning_rate, &disc.params());
    let steps = net.seq_len;
    let mut entries = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut acc = EpochAccumulator::new();
        for idx in shuffled_batches(bundle.train.len(), cfg.batch_size, rng) {
            let (real, labels) = batch_frames(&bundle.train, &idx);
            let m = idx.len();
            let z = standard_normal(m, net.latent_dim, rng);
            let y = uniform_labels(m, net.num_classes, rng);
            let fake = generator.view().sample(&z, &y, steps);
            let disc_loss = update_discriminator(disc, &mut disc_opt, &real, &labels, &fake, cfg.clip_norm);

            let z = standard_normal(m, net.latent_dim, rng);
            let y = uniform_labels(m, net.num_classes, rng);
            let (adv, grads) = {
                let mut g = Graph::new();
                let l = gan_generator_graph(&mut g, generator.view(), disc, &z, &y, steps);
                (g.scalar(l), gradients(&g, l, &generator.params(), cfg.clip_norm))
            };
            check_finite(adv, epoch)?;
            gen_opt.step(generator.params_mut(), &grads);
            acc.add(&LossBreakdown {
                adv,
                disc: disc_loss,
                total: adv,
                ..Default::default()
            });
        }
        let row = acc.finish(1.0);
        report_epoch(kind, epoch, cfg.epochs, &row);
        entries.push(row);
    }
    Ok(entries)
}

/// Outcome of fitting a recurrent classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    /// Accuracy on the held-out real test split (oracle) or real test set (TSTR).
    pub test_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// False when test accuracy is below chance plus 10 points.
    pub converged: bool,
}

/// Fits a [`RecurrentClassifier`] with early stopping on a stratified holdout.
/// Returns the parameters of the best holdout epoch and per-epoch train
/// cross-entropy rows (in the `total` column).
pub fn fit_classifier(
    samples: &[SequenceSample],
    classes: usize,
    hidden: usize,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(RecurrentClassifier, Option<f64>, usize, Vec<LossBreakdown>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples to fit a classifier".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, holdout) = if cfg.holdout > 0.0 && cfg.holdout < 1.0 {
        split(samples, 1.0 - cfg.holdout, rng.random())?
    } else {
        (samples.to_vec(), Vec::new())
    };
    let train = if train.is_empty() { samples.to_vec() } else { train };
    let mut model = RecurrentClassifier::new(first.channels(), hidden, classes, &mut rng);
    let mut opt = Adam::new(cfg.learning_rate, &model.params());
    let mut best: Option<(f64, f64, usize, RecurrentClassifier)> = None;
    let mut entries = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut acc = EpochAccumulator::new();
        for idx in shuffled_batches(train.len(), cfg.batch_size, &mut rng) {
            let (frames, labels) = batch_frames(&train, &idx);
            let (loss, grads) = {
                let mut g = Graph::new();
                let xs = constants(&mut g, &frames);
                let logits = model.logits_graph(&mut g, &xs);
                let l = losses::graph::cross_entropy(&mut g, logits, &labels);
                (g.scalar(l), gradients(&g, l, &model.params(), 5.0))
            };
            check_finite(loss, epoch)?;
            opt.step(model.params_mut(), &grads);
            acc.add(&LossBreakdown {
                total: loss,
                ..Default::default()
            });
        }
        entries.push(acc.finish(1.0));
        if holdout.is_empty() {
            continue;
        }
        let (h_loss, h_acc) = evaluate_classifier(&model, &holdout)?;
        let improved = best.as_ref().is_none_or(|(l, _, _, _)| h_loss < *l);
        if improved {
            best = Some((h_loss, h_acc, epoch, model.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.2) >= cfg.patience {
            break;
        }
    }
    Ok(match best {
        Some((_, h_acc, epoch, params)) => (params, Some(h_acc), epoch, entries),
        None => {
            let n = entries.len();
            (model, None, n, entries)
        }
    })
}

/// Mean cross entropy and accuracy over `samples`.
pub fn evaluate_classifier(model: &RecurrentClassifier, samples: &[SequenceSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let values: Vec<&Array2<f64>> = samples.iter().map(|s| &s.values).collect();
    let probs = model.predict_proba(&values)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, s) in probs.rows().into_iter().zip(samples) {
        loss -= row[s.label].max(losses::PROB_FLOOR).ln();
        if argmax(row.as_slice().expect("row")) == s.label {
            correct += 1;
        }
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains the oracle on the train split and scores it on the test split.
pub fn train_oracle(bundle: &DatasetBundle, cfg: &TrainingConfig) -> Result<(RecurrentClassifier, ClassifierReport, TrainingLog)> {
    cfg.validate()?;
    let started = Instant::now();
    let classes = bundle.num_classes();
    let (model, holdout_accuracy, best_epoch, entries) =
        fit_classifier(&bundle.train, classes, cfg.net.oracle_hidden, &cfg.classifier, cfg.seed)?;
    let eval_on = if bundle.test.is_empty() { &bundle.train } else { &bundle.test };
    let (_, test_accuracy) = evaluate_classifier(&model, eval_on)?;
    let converged = test_accuracy >= 1.0 / classes as f64 + 0.1;
    if !converged {
        log::warn!("oracle accuracy {test_accuracy:.3} is within 10 points of chance");
    }
    let report = ClassifierReport {
        test_accuracy,
        holdout_accuracy,
        best_epoch,
        epochs_run: entries.len(),
        converged,
    };
    let log = TrainingLog {
        kind: ModelKind::Oracle,
        entries,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
    };
    Ok((model, report, log))
}

/// Train-on-synthetic, test-on-real scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TstrReport {
    pub rnn_accuracy: f64,
    pub feat_accuracy: f64,
    /// Rank AUC of the recurrent classifier's class-2 probability (two classes only).
    pub rnn_auc: Option<f64>,
    /// Rank AUC of the feature classifier's class-2 margin (two classes only).
    pub feat_auc: Option<f64>,
}

pub fn train_tstr_classifiers(
    synthetic: &[SequenceSample],
    real_test: &[SequenceSample],
    classes: usize,
    cfg: &TrainingConfig,
) -> Result<TstrReport> {
    for c in 0..classes {
        if !synthetic.iter().any(|s| s.label == c) {
            return Err(Error::MissingClass(c + 1));
        }
    }
    if real_test.is_empty() {
        return Err(Error::InvalidArgument("real test set is empty".into()));
    }
    let (rnn, _, _, _) = fit_classifier(synthetic, classes, cfg.net.oracle_hidden, &cfg.classifier, cfg.seed)?;
    let (_, rnn_accuracy) = evaluate_classifier(&rnn, real_test)?;

    let svm = LinearSvm::fit(synthetic, classes, &cfg.svm, cfg.seed)?;
    let feat_accuracy = svm.accuracy(real_test)?;

    let (rnn_auc, feat_auc) = if classes == 2 {
        let positive: Vec<bool> = real_test.iter().map(|s| s.label == 1).collect();
        let values: Vec<&Array2<f64>> = real_test.iter().map(|s| &s.values).collect();
        let probs = rnn.predict_proba(&values)?;
        let rnn_scores: Vec<f64> = probs.column(1).to_vec();
        let margins: Vec<f64> = real_test
            .iter()
            .map(|s| svm.margins(&features::extract(&s.values)).map(|m| m[1] - m[0]))
            .collect::<Result<_>>()?;
        (auc_score(&rnn_scores, &positive).ok(), auc_score(&margins, &positive).ok())
    } else {
        (None, None)
    };
    Ok(TstrReport {
        rnn_accuracy,
        feat_accuracy,
        rnn_auc,
        feat_auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_toy_dataset, ToySpec};

    fn small_cfg() -> TrainingConfig {
        TrainingConfig {
            epochs: 3,
            batch_size: 16,
            seed: 11,
            net: NetConfig {
                latent_dim: 4,
                enc_hidden: 6,
                dec_hidden: 8,
                oracle_hidden: 6,
                ..NetConfig::default()
            },
            ..TrainingConfig::default()
        }
    }

    fn toy() -> DatasetBundle {
        make_toy_dataset(&ToySpec {
            seq_len: 12,
            train_per_class: 12,
            test_per_class: 4,
            ..ToySpec::default()
        })
        .unwrap()
    }

    #[test]
    fn config_defaults_and_toml() {
        let d = TrainingConfig::default();
        assert_eq!((d.epochs, d.batch_size, d.learning_rate), (5000, 256, 0.001));
        let parsed = TrainingConfig::from_toml("epochs = 7\n[weights]\nbeta = 0.5\n[net]\nlatent_dim = 3\n").unwrap();
        assert_eq!(parsed.epochs, 7);
        assert_eq!(parsed.weights.beta, 0.5);
        assert_eq!(parsed.weights.lambda_d, 0.2);
        assert_eq!(parsed.net.latent_dim, 3);
        assert_eq!(TrainingConfig::from_toml(&d.to_toml()).unwrap(), d);
        assert!(TrainingConfig::from_toml("epoch = 3").is_err());
    }

    #[test]
    fn physiogan_log_is_reproducible_and_recombines() {
        let bundle = toy();
        let cfg = small_cfg();
        let (_, a) = train_physiogan(&bundle, &cfg).unwrap();
        let (_, b) = train_physiogan(&bundle, &cfg).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.entries.len(), 3);
        assert!((a.entries[0].eta - losses::anneal_coefficient(1, &cfg.weights)).abs() < 1e-15);
        for e in &a.entries {
            assert!((e.total - e.recombined(&cfg.weights)).abs() < 1e-9);
        }
    }

    #[test]
    fn generator_update_leaves_discriminator_unchanged() {
        let bundle = toy();
        let cfg = small_cfg();
        let net = cfg.net_for(&bundle);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = Encoder::new(&net, &mut rng);
        let dec = Decoder::new(&net, &mut rng);
        let disc = Discriminator::new(&net, &mut rng);
        let (real, labels) = batch_frames(&bundle.train, &[0, 1, 2]);
        let noise = GeneratorNoise::sample(3, 3, net.latent_dim, 2, &mut rng);
        let mut g = Graph::new();
        let (_, total) = physiogan_generator_graph(&mut g, &enc, &dec, &disc, &real, &labels, &noise, &cfg.weights, 0.5);
        let grads = g.backward(total);
        // The discriminator does receive gradient, but the update only collects
        // encoder and decoder parameters.
        assert!(grads.param(&disc.head.weight).is_some());
        let mut params = enc.params();
        params.extend(dec.params());
        assert_eq!(grads.collect(&params).len(), params.len());
    }

    #[test]
    fn baselines_train() {
        let bundle = toy();
        let cfg = small_cfg();
        for kind in [ModelKind::Crnn, ModelKind::Cvrae, ModelKind::Rcgan, ModelKind::RcganAr] {
            let (suite, log) = train_baseline(kind, &bundle, &cfg).unwrap();
            assert_eq!(suite.kind(), kind);
            assert_eq!(log.entries.len(), 3);
            if kind == ModelKind::Cvrae {
                assert!(log.entries.iter().all(|e| e.adv == 0.0 && e.diverse == 0.0 && e.feats == 0.0));
            }
        }
        assert!(train_baseline(ModelKind::Physiogan, &bundle, &cfg).is_err());
    }

    #[test]
    fn log_csv_round_trip() {
        let bundle = toy();
        let (_, log) = train_baseline(ModelKind::Crnn, &bundle, &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        log.write_csv(&path).unwrap();
        assert_eq!(TrainingLog::read_csv(&path).unwrap(), log.entries);
    }

    #[test]
    fn tstr_requires_every_class() {
        let bundle = toy();
        let only_first: Vec<_> = bundle.train.iter().filter(|s| s.label == 0).cloned().collect();
        let err = train_tstr_classifiers(&only_first, &bundle.test, 2, &small_cfg()).unwrap_err();
        assert!(matches!(err, Error::MissingClass(2)));
    }
}

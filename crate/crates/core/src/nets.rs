//! Encoder, decoder, discriminator, the baseline generators and the
//! recurrent classifier, all expressed over [`Graph`].
//!
//! Batched sequences are passed as one `batch × Nd` matrix per time step.
//! GRU weight columns are laid out `[reset | update | candidate]`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var, WindowSpec};

/// Parameter access in a fixed, stable order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Array2<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Architecture hyperparameters shared by every network of a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Latent width `Nz`.
    pub latent_dim: usize,
    /// Encoder GRU width per direction.
    pub enc_hidden: usize,
    /// Width of each of the three stacked decoder GRU layers.
    pub dec_hidden: usize,
    pub oracle_hidden: usize,
    pub conv_filters: usize,
    pub conv_size: usize,
    pub conv_stride: usize,
    pub num_classes: usize,
    pub channels: usize,
    pub seq_len: usize,
}

pub const DECODER_LAYERS: usize = 3;
pub const CONV_LAYERS: usize = 3;

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_dim: 32,
            enc_hidden: 128,
            dec_hidden: 128,
            oracle_hidden: 64,
            conv_filters: 32,
            conv_size: 3,
            conv_stride: 3,
            num_classes: 2,
            channels: 1,
            seq_len: 1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("latent_dim", self.latent_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("oracle_hidden", self.oracle_hidden),
            ("conv_filters", self.conv_filters),
            ("conv_size", self.conv_size),
            ("conv_stride", self.conv_stride),
            ("num_classes", self.num_classes),
            ("channels", self.channels),
            ("seq_len", self.seq_len),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::InvalidArgument(format!("net config {name} must be positive"))),
            None => Ok(()),
        }
    }

    /// Window geometry of the three discriminator convolutions.
    pub fn conv_chain(&self) -> Vec<WindowSpec> {
        let mut specs = Vec::with_capacity(CONV_LAYERS);
        let (mut t, mut c) = (self.seq_len, self.channels);
        for _ in 0..CONV_LAYERS {
            let spec = WindowSpec::same(t, c, self.conv_size, self.conv_stride);
            t = spec.t_out;
            c = self.conv_filters;
            specs.push(spec);
        }
        specs
    }

    /// Width `d_f` of the flattened last-convolution features.
    pub fn feature_dim(&self) -> usize {
        self.conv_chain().last().map_or(0, |s| s.t_out) * self.conv_filters
    }
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Affine map `x W + b`, `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Linear {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Linear {
            weight: glorot(inputs, outputs, rng),
            bias: Array2::zeros((1, outputs)),
        }
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, x: Var) -> Var {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub b_input: Array2<f64>,
    pub b_hidden: Array2<f64>,
}

impl GruCell {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        GruCell {
            w_input: glorot(inputs, 3 * hidden, rng),
            w_hidden: glorot(hidden, 3 * hidden, rng),
            b_input: Array2::zeros((1, 3 * hidden)),
            b_hidden: Array2::zeros((1, 3 * hidden)),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.nrows()
    }

    pub fn step<'p>(&'p self, g: &mut Graph<'p>, x: Var, h: Var) -> Var {
        let wx = g.param(&self.w_input);
        let wh = g.param(&self.w_hidden);
        let bx = g.param(&self.b_input);
        let bh = g.param(&self.b_hidden);
        g.gru(x, h, wx, wh, bx, bh)
    }

    /// Runs over `xs` from a zero state and returns the final state.
    pub fn run<'p, I>(&'p self, g: &mut Graph<'p>, xs: I, batch: usize) -> Var
    where
        I: IntoIterator<Item = Var>,
    {
        let mut h = g.zeros(batch, self.hidden());
        for x in xs {
            h = self.step(g, x, h);
        }
        h
    }
}

impl Parameterized for GruCell {
    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.w_input, &self.w_hidden, &self.b_input, &self.b_hidden]
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.w_input,
            &mut self.w_hidden,
            &mut self.b_input,
            &mut self.b_hidden,
        ]
    }
}

macro_rules! parameterized {
    ($ty:ty { $($field:ident),* } $(, [$vec:ident])?) => {
        impl Parameterized for $ty {
            fn params(&self) -> Vec<&Array2<f64>> {
                let mut out = Vec::new();
                $(out.extend(self.$field.params());)*
                $(for m in &self.$vec { out.extend(m.params()); })?
                out
            }
            fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
                let mut out = Vec::new();
                $(out.extend(self.$field.params_mut());)*
                $(for m in &mut self.$vec { out.extend(m.params_mut()); })?
                out
            }
        }
    };
}

/// Gaussian posterior over the latent code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorParams {
    pub mu: Array1<f64>,
    pub log_var: Array1<f64>,
}

impl PosteriorParams {
    pub fn std(&self) -> Array1<f64> {
        self.log_var.mapv(|v| (v / 2.0).exp())
    }

    /// Reparameterized draw `μ + σ ⊙ ε`.
    pub fn sample_latent(&self, eps: &[f64]) -> Result<Array1<f64>> {
        if eps.len() != self.mu.len() {
            return Err(Error::Shape(format!(
                "eps has {} entries, latent width is {}",
                eps.len(),
                self.mu.len()
            )));
        }
        Ok(&self.mu + &(self.std() * Array1::from(eps.to_vec())))
    }
}

/// Stacks per-sample `T × Nd` matrices into `T` matrices of `batch × Nd`.
pub fn time_major(samples: &[&Array2<f64>]) -> Vec<Array2<f64>> {
    let (t, nd) = samples.first().map_or((0, 0), |s| s.dim());
    (0..t)
        .map(|step| Array2::from_shape_fn((samples.len(), nd), |(b, j)| samples[b][[step, j]]))
        .collect()
}

/// Inverse of [`time_major`].
pub fn batch_major(steps: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let (batch, nd) = steps.first().map_or((0, 0), |s| s.dim());
    (0..batch)
        .map(|b| Array2::from_shape_fn((steps.len(), nd), |(t, j)| steps[t][[b, j]]))
        .collect()
}

pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        out[[i, l]] = 1.0;
    }
    out
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&l) => Err(Error::UnknownClass {
            index: l as i64 + 1,
            classes,
        }),
        None => Ok(()),
    }
}

fn check_sequence(x: &Array2<f64>, cfg_channels: usize) -> Result<()> {
    if x.nrows() == 0 || x.ncols() != cfg_channels {
        return Err(Error::Shape(format!(
            "sequence of shape {:?}, expected (T ≥ 1, {cfg_channels})",
            x.dim()
        )));
    }
    Ok(())
}

/// Bidirectional GRU encoder producing `μ` and log-variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub forward: GruCell,
    pub backward: GruCell,
    pub mu: Linear,
    pub log_var: Linear,
}

parameterized!(Encoder { forward, backward, mu, log_var });

impl Encoder {
    pub fn new<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Self {
        Encoder {
            forward: GruCell::new(cfg.channels, cfg.enc_hidden, rng),
            backward: GruCell::new(cfg.channels, cfg.enc_hidden, rng),
            mu: Linear::new(2 * cfg.enc_hidden, cfg.latent_dim, rng),
            log_var: Linear::new(2 * cfg.enc_hidden, cfg.latent_dim, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.forward.w_input.nrows()
    }

    /// Returns `(μ, log σ²)`, each `batch × Nz`.
    pub fn forward_graph<'p>(&'p self, g: &mut Graph<'p>, xs: &[Var]) -> (Var, Var) {
        let batch = g.value(xs[0]).nrows();
        let h_fwd = self.forward.run(g, xs.iter().copied(), batch);
        let h_bwd = self.backward.run(g, xs.iter().rev().copied(), batch);
        let h = g.concat_cols(&[h_fwd, h_bwd]);
        let mu = self.mu.forward(g, h);
        let log_var = self.log_var.forward(g, h);
        (mu, log_var)
    }

    pub fn encode_batch(&self, samples: &[&Array2<f64>]) -> Result<Vec<PosteriorParams>> {
        for s in samples {
            check_sequence(s, self.channels())?;
        }
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let xs: Vec<_> = time_major(samples).into_iter().map(|a| g.constant(a)).collect();
        let (mu, log_var) = self.forward_graph(&mut g, &xs);
        Ok(g.value(mu)
            .rows()
            .into_iter()
            .zip(g.value(log_var).rows())
            .map(|(m, l)| PosteriorParams {
                mu: m.to_owned(),
                log_var: l.to_owned(),
            })
            .collect())
    }

    pub fn encode(&self, x: &Array2<f64>) -> Result<PosteriorParams> {
        Ok(self.encode_batch(&[x])?.remove(0))
    }
}

/// What the decoder receives as its previous frame.
#[derive(Clone, Copy)]
pub enum Feedback<'a> {
    /// Its own previous output.
    Own,
    /// The ground-truth previous frame (teacher forcing).
    Teacher(&'a [Var]),
    /// Ground truth where `mask[t][row]`, own output elsewhere; the emitted
    /// frame is what feeds back.
    Masked { frames: &'a [Var], mask: &'a [Vec<bool>] },
}

/// Autoregressive three-layer GRU decoder conditioned on `[z; onehot(y)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub state_init: Linear,
    pub context: Linear,
    pub cells: Vec<GruCell>,
    pub output: Linear,
}

parameterized!(Decoder { state_init, context, output }, [cells]);

impl Decoder {
    pub fn new<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Self {
        let h = cfg.dec_hidden;
        let mut cells = vec![GruCell::new(cfg.channels + h, h, rng)];
        for _ in 1..DECODER_LAYERS {
            cells.push(GruCell::new(h, h, rng));
        }
        Decoder {
            state_init: Linear::new(cfg.latent_dim, DECODER_LAYERS * h, rng),
            context: Linear::new(cfg.latent_dim + cfg.num_classes, h, rng),
            cells,
            output: Linear::new(h, cfg.channels, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.state_init.weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.context.weight.nrows() - self.latent_dim()
    }

    pub fn channels(&self) -> usize {
        self.output.outputs()
    }

    /// Emits `steps` frames, each `batch × Nd`.
    pub fn forward_graph<'p>(
        &'p self,
        g: &mut Graph<'p>,
        z: Var,
        y_onehot: Var,
        steps: usize,
        feedback: Feedback<'_>,
    ) -> Vec<Var> {
        let batch = g.value(z).nrows();
        let hidden = self.cells[0].hidden();
        let s0 = self.state_init.forward(g, z);
        let s0 = g.tanh(s0);
        let mut states: Vec<Var> = (0..self.cells.len())
            .map(|l| g.slice_cols(s0, l * hidden, hidden))
            .collect();
        let zy = g.concat_cols(&[z, y_onehot]);
        let context = self.context.forward(g, zy);
        let mut prev = g.zeros(batch, self.channels());
        let mut frames = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut input = g.concat_cols(&[prev, context]);
            for (cell, state) in self.cells.iter().zip(states.iter_mut()) {
                *state = cell.step(g, input, *state);
                input = *state;
            }
            let generated = self.output.forward(g, input);
            let emitted = match feedback {
                Feedback::Masked { frames: truth, mask } => {
                    g.select_rows(&mask[t], truth[t], generated)
                }
                _ => generated,
            };
            frames.push(emitted);
            prev = match feedback {
                Feedback::Teacher(truth) => truth[t],
                _ => emitted,
            };
        }
        frames
    }

    /// Generates one `T_out × Nd` sequence per row of `z`.
    pub fn generate(&self, z: &Array2<f64>, labels: &[usize], steps: usize) -> Result<Vec<Array2<f64>>> {
        self.check_inputs(z, labels)?;
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let yv = g.constant(one_hot(labels, self.num_classes()));
        let frames = self.forward_graph(&mut g, zv, yv, steps, Feedback::Own);
        Ok(collect_frames(&g, &frames))
    }

    /// Single-sample decode; with `observed`, ground-truth frames replace the
    /// network's wherever the mask is set.
    pub fn decode(
        &self,
        z: &[f64],
        label: usize,
        steps: usize,
        observed: Option<(&Array2<f64>, &[bool])>,
    ) -> Result<Array2<f64>> {
        let zm = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row");
        self.check_inputs(&zm, &[label])?;
        let mut g = Graph::new();
        let zv = g.constant(zm);
        let yv = g.constant(one_hot(&[label], self.num_classes()));
        let frames = match observed {
            None => self.forward_graph(&mut g, zv, yv, steps, Feedback::Own),
            Some((values, mask)) => {
                if values.nrows() != steps || mask.len() != steps || values.ncols() != self.channels() {
                    return Err(Error::Shape(format!(
                        "observed sample {:?} with {} mask steps, decoding {steps} × {}",
                        values.dim(),
                        mask.len(),
                        self.channels()
                    )));
                }
                let truth: Vec<_> = values
                    .rows()
                    .into_iter()
                    .map(|r| g.constant(r.to_owned().insert_axis(Axis(0))))
                    .collect();
                let rows: Vec<Vec<bool>> = mask.iter().map(|m| vec![*m]).collect();
                self.forward_graph(&mut g, zv, yv, steps, Feedback::Masked { frames: &truth, mask: &rows })
            }
        };
        Ok(collect_frames(&g, &frames).remove(0))
    }

    fn check_inputs(&self, z: &Array2<f64>, labels: &[usize]) -> Result<()> {
        if z.ncols() != self.latent_dim() || z.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "latent batch {:?} for {} labels, latent width {}",
                z.dim(),
                labels.len(),
                self.latent_dim()
            )));
        }
        check_labels(labels, self.num_classes())
    }
}

fn collect_frames(g: &Graph<'_>, frames: &[Var]) -> Vec<Array2<f64>> {
    let steps: Vec<_> = frames.iter().map(|f| g.value(*f).clone()).collect();
    batch_major(&steps)
}

/// Non-autoregressive stacked GRU generator: every step sees only `[z; onehot(y)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrentGenerator {
    pub cells: Vec<GruCell>,
    pub output: Linear,
    pub latent_dim: usize,
}

parameterized!(RecurrentGenerator { output }, [cells]);

impl RecurrentGenerator {
    pub fn new<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Self {
        let h = cfg.dec_hidden;
        let mut cells = vec![GruCell::new(cfg.latent_dim + cfg.num_classes, h, rng)];
        for _ in 1..DECODER_LAYERS {
            cells.push(GruCell::new(h, h, rng));
        }
        RecurrentGenerator {
            cells,
            output: Linear::new(h, cfg.channels, rng),
            latent_dim: cfg.latent_dim,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cells[0].w_input.nrows() - self.latent_dim
    }

    pub fn forward_graph<'p>(&'p self, g: &mut Graph<'p>, z: Var, y_onehot: Var, steps: usize) -> Vec<Var> {
        let batch = g.value(z).nrows();
        let input = g.concat_cols(&[z, y_onehot]);
        let mut states: Vec<Var> = self.cells.iter().map(|c| g.zeros(batch, c.hidden())).collect();
        let mut frames = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut x = input;
            for (cell, state) in self.cells.iter().zip(states.iter_mut()) {
                *state = cell.step(g, x, *state);
                x = *state;
            }
            frames.push(self.output.forward(g, x));
        }
        frames
    }

    pub fn generate(&self, z: &Array2<f64>, labels: &[usize], steps: usize) -> Result<Vec<Array2<f64>>> {
        if z.ncols() != self.latent_dim || z.nrows() != labels.len() {
            return Err(Error::Shape("latent batch does not match generator".into()));
        }
        check_labels(labels, self.num_classes())?;
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let yv = g.constant(one_hot(labels, self.num_classes()));
        let frames = self.forward_graph(&mut g, zv, yv, steps);
        Ok(collect_frames(&g, &frames))
    }
}

/// Class probabilities over `L + 1` outputs (last = generated) and the
/// flattened last-convolution activations, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorOutput {
    pub probs: Vec<f64>,
    pub features: Vec<f64>,
}

/// Three strided 1-D convolutions with ReLU, then an affine layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub convs: Vec<Linear>,
    pub head: Linear,
    pub chain: Vec<WindowSpecDef>,
}

/// Serializable mirror of [`WindowSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpecDef {
    pub t_in: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub t_out: usize,
}

impl From<WindowSpec> for WindowSpecDef {
    fn from(s: WindowSpec) -> Self {
        WindowSpecDef {
            t_in: s.t_in,
            channels: s.channels,
            kernel: s.kernel,
            stride: s.stride,
            pad_left: s.pad_left,
            t_out: s.t_out,
        }
    }
}

impl From<WindowSpecDef> for WindowSpec {
    fn from(s: WindowSpecDef) -> Self {
        WindowSpec {
            t_in: s.t_in,
            channels: s.channels,
            kernel: s.kernel,
            stride: s.stride,
            pad_left: s.pad_left,
            t_out: s.t_out,
        }
    }
}

parameterized!(Discriminator { head }, [convs]);

impl Discriminator {
    pub fn new<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Self {
        let chain = cfg.conv_chain();
        let convs = chain
            .iter()
            .map(|s| Linear::new(s.kernel * s.channels, cfg.conv_filters, rng))
            .collect();
        Discriminator {
            convs,
            head: Linear::new(cfg.feature_dim(), cfg.num_classes + 1, rng),
            chain: chain.into_iter().map(Into::into).collect(),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.chain[0].t_in
    }

    pub fn channels(&self) -> usize {
        self.chain[0].channels
    }

    pub fn feature_dim(&self) -> usize {
        self.head.weight.nrows()
    }

    /// Takes a time-major flattened `batch × (T·Nd)` input; returns
    /// `(logits, features)`.
    pub fn forward_graph<'p>(&'p self, g: &mut Graph<'p>, x_flat: Var) -> (Var, Var) {
        let batch = g.value(x_flat).nrows();
        let mut h = x_flat;
        for (conv, spec) in self.convs.iter().zip(&self.chain) {
            let spec = WindowSpec::from(*spec);
            let win = g.windows(h, spec);
            let y = conv.forward(g, win);
            let y = g.relu(y);
            h = g.reshape(y, batch, spec.t_out * conv.outputs());
        }
        let logits = self.head.forward(g, h);
        (logits, h)
    }

    /// Convenience over per-step frames.
    pub fn forward_frames<'p>(&'p self, g: &mut Graph<'p>, frames: &[Var]) -> (Var, Var) {
        let flat = g.concat_cols(frames);
        self.forward_graph(g, flat)
    }

    pub fn discriminate_batch(&self, samples: &[&Array2<f64>]) -> Result<Vec<DiscriminatorOutput>> {
        for s in samples {
            if s.dim() != (self.seq_len(), self.channels()) {
                return Err(Error::Shape(format!(
                    "discriminator expects ({}, {}), got {:?}",
                    self.seq_len(),
                    self.channels(),
                    s.dim()
                )));
            }
        }
        let mut g = Graph::new();
        let flat = Array2::from_shape_fn((samples.len(), self.seq_len() * self.channels()), |(b, k)| {
            samples[b][[k / self.channels(), k % self.channels()]]
        });
        let x = g.constant(flat);
        let (logits, feats) = self.forward_graph(&mut g, x);
        let probs = softmax_rows(g.value(logits));
        Ok(probs
            .rows()
            .into_iter()
            .zip(g.value(feats).rows())
            .map(|(p, f)| DiscriminatorOutput {
                probs: p.to_vec(),
                features: f.to_vec(),
            })
            .collect())
    }

    pub fn discriminate(&self, x: &Array2<f64>) -> Result<DiscriminatorOutput> {
        Ok(self.discriminate_batch(&[x])?.remove(0))
    }
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Single-layer GRU classifier: final state → affine → softmax over `L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrentClassifier {
    pub cell: GruCell,
    pub head: Linear,
}

parameterized!(RecurrentClassifier { cell, head });

impl RecurrentClassifier {
    pub fn new<R: Rng>(channels: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        RecurrentClassifier {
            cell: GruCell::new(channels, hidden, rng),
            head: Linear::new(hidden, classes, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.outputs()
    }

    pub fn channels(&self) -> usize {
        self.cell.w_input.nrows()
    }

    pub fn logits_graph<'p>(&'p self, g: &mut Graph<'p>, xs: &[Var]) -> Var {
        let batch = g.value(xs[0]).nrows();
        let h = self.cell.run(g, xs.iter().copied(), batch);
        self.head.forward(g, h)
    }

    pub fn predict_proba(&self, samples: &[&Array2<f64>]) -> Result<Array2<f64>> {
        for s in samples {
            check_sequence(s, self.channels())?;
        }
        let mut out = Array2::zeros((samples.len(), self.num_classes()));
        for (chunk_idx, chunk) in samples.chunks(512).enumerate() {
            let mut g = Graph::new();
            let xs: Vec<_> = time_major(chunk).into_iter().map(|a| g.constant(a)).collect();
            let logits = self.logits_graph(&mut g, &xs);
            let probs = softmax_rows(g.value(logits));
            let start = chunk_idx * 512;
            out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&probs);
        }
        Ok(out)
    }

    pub fn classify(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.predict_proba(&[x])?.row(0).to_vec())
    }

    pub fn predict(&self, samples: &[&Array2<f64>]) -> Result<Vec<usize>> {
        let probs = self.predict_proba(samples)?;
        Ok(probs.rows().into_iter().map(|r| argmax(r.as_slice().expect("row"))).collect())
    }
}

pub fn classify_oracle(oracle: &RecurrentClassifier, x: &Array2<f64>) -> Result<Vec<f64>> {
    oracle.classify(x)
}

/// Which training method a checkpoint came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Physiogan,
    Crnn,
    Cvrae,
    Rcgan,
    RcganAr,
    Oracle,
}

impl ModelKind {
    pub const GENERATORS: [ModelKind; 5] = [
        ModelKind::Physiogan,
        ModelKind::Crnn,
        ModelKind::Cvrae,
        ModelKind::Rcgan,
        ModelKind::RcganAr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Physiogan => "physiogan",
            ModelKind::Crnn => "crnn",
            ModelKind::Cvrae => "cvrae",
            ModelKind::Rcgan => "rcgan",
            ModelKind::RcganAr => "rcgan_ar",
            ModelKind::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [ModelKind::Oracle]
            .into_iter()
            .chain(ModelKind::GENERATORS)
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind {s:?}")))
    }
}

/// Trained parameters of one generative model (and the networks trained with it).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSuite {
    Physiogan {
        encoder: Encoder,
        decoder: Decoder,
        discriminator: Discriminator,
    },
    Crnn {
        decoder: Decoder,
    },
    Cvrae {
        encoder: Encoder,
        decoder: Decoder,
    },
    Rcgan {
        generator: RecurrentGenerator,
        discriminator: Discriminator,
    },
    RcganAr {
        decoder: Decoder,
        discriminator: Discriminator,
    },
}

impl GeneratorSuite {
    pub fn init<R: Rng>(kind: ModelKind, cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(match kind {
            ModelKind::Physiogan => GeneratorSuite::Physiogan {
                encoder: Encoder::new(cfg, rng),
                decoder: Decoder::new(cfg, rng),
                discriminator: Discriminator::new(cfg, rng),
            },
            ModelKind::Crnn => GeneratorSuite::Crnn {
                decoder: Decoder::new(cfg, rng),
            },
            ModelKind::Cvrae => GeneratorSuite::Cvrae {
                encoder: Encoder::new(cfg, rng),
                decoder: Decoder::new(cfg, rng),
            },
            ModelKind::Rcgan => GeneratorSuite::Rcgan {
                generator: RecurrentGenerator::new(cfg, rng),
                discriminator: Discriminator::new(cfg, rng),
            },
            ModelKind::RcganAr => GeneratorSuite::RcganAr {
                decoder: Decoder::new(cfg, rng),
                discriminator: Discriminator::new(cfg, rng),
            },
            ModelKind::Oracle => {
                return Err(Error::InvalidArgument("the oracle is not a generator".into()))
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            GeneratorSuite::Physiogan { .. } => ModelKind::Physiogan,
            GeneratorSuite::Crnn { .. } => ModelKind::Crnn,
            GeneratorSuite::Cvrae { .. } => ModelKind::Cvrae,
            GeneratorSuite::Rcgan { .. } => ModelKind::Rcgan,
            GeneratorSuite::RcganAr { .. } => ModelKind::RcganAr,
        }
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        match self {
            GeneratorSuite::Physiogan { encoder, .. } | GeneratorSuite::Cvrae { encoder, .. } => Some(encoder),
            _ => None,
        }
    }

    pub fn decoder(&self) -> Option<&Decoder> {
        match self {
            GeneratorSuite::Physiogan { decoder, .. }
            | GeneratorSuite::Cvrae { decoder, .. }
            | GeneratorSuite::Crnn { decoder }
            | GeneratorSuite::RcganAr { decoder, .. } => Some(decoder),
            GeneratorSuite::Rcgan { .. } => None,
        }
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        match self {
            GeneratorSuite::Physiogan { discriminator, .. }
            | GeneratorSuite::Rcgan { discriminator, .. }
            | GeneratorSuite::RcganAr { discriminator, .. } => Some(discriminator),
            _ => None,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            GeneratorSuite::Rcgan { generator, .. } => generator.latent_dim,
            _ => self.decoder().expect("decoder").latent_dim(),
        }
    }

    /// Longest sequence this generator may emit; `None` for autoregressive models.
    pub fn max_length(&self, trained_len: usize) -> Option<usize> {
        matches!(self, GeneratorSuite::Rcgan { .. }).then_some(trained_len)
    }

    /// One `steps × Nd` sequence per row of `z`.
    pub fn generate(&self, z: &Array2<f64>, labels: &[usize], steps: usize) -> Result<Vec<Array2<f64>>> {
        match self {
            GeneratorSuite::Rcgan { generator, .. } => generator.generate(z, labels, steps),
            _ => self.decoder().expect("decoder").generate(z, labels, steps),
        }
    }
}

impl Parameterized for GeneratorSuite {
    fn params(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        match self {
            GeneratorSuite::Physiogan { encoder, decoder, discriminator } => {
                out.extend(encoder.params());
                out.extend(decoder.params());
                out.extend(discriminator.params());
            }
            GeneratorSuite::Crnn { decoder } => out.extend(decoder.params()),
            GeneratorSuite::Cvrae { encoder, decoder } => {
                out.extend(encoder.params());
                out.extend(decoder.params());
            }
            GeneratorSuite::Rcgan { generator, discriminator } => {
                out.extend(generator.params());
                out.extend(discriminator.params());
            }
            GeneratorSuite::RcganAr { decoder, discriminator } => {
                out.extend(decoder.params());
                out.extend(discriminator.params());
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        match self {
            GeneratorSuite::Physiogan { encoder, decoder, discriminator } => {
                out.extend(encoder.params_mut());
                out.extend(decoder.params_mut());
                out.extend(discriminator.params_mut());
            }
            GeneratorSuite::Crnn { decoder } => out.extend(decoder.params_mut()),
            GeneratorSuite::Cvrae { encoder, decoder } => {
                out.extend(encoder.params_mut());
                out.extend(decoder.params_mut());
            }
            GeneratorSuite::Rcgan { generator, discriminator } => {
                out.extend(generator.params_mut());
                out.extend(discriminator.params_mut());
            }
            GeneratorSuite::RcganAr { decoder, discriminator } => {
                out.extend(decoder.params_mut());
                out.extend(discriminator.params_mut());
            }
        }
        out
    }
}

/// Generation for the baseline kinds `crnn`, `rcgan` and `rcgan_ar`.
pub fn baseline_generate(
    kind: ModelKind,
    suite: &GeneratorSuite,
    z: &Array2<f64>,
    labels: &[usize],
    steps: usize,
) -> Result<Vec<Array2<f64>>> {
    if !matches!(kind, ModelKind::Crnn | ModelKind::Rcgan | ModelKind::RcganAr) {
        return Err(Error::InvalidArgument(format!("{kind} is not a baseline generator")));
    }
    if suite.kind() != kind {
        return Err(Error::InvalidArgument(format!(
            "requested {kind} generation from {} parameters",
            suite.kind()
        )));
    }
    suite.generate(z, labels, steps)
}

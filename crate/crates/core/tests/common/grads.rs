//! Finite-difference checks for every network and objective on the tiny config.

use ndarray::Array2;
use physiogan::graph::{Graph, Var};
use physiogan::losses::LossWeights;
use physiogan::nets::{
    one_hot, Decoder, Discriminator, Encoder, Feedback, GeneratorSuite, ModelKind, Parameterized, RecurrentClassifier,
    RecurrentGenerator,
};
use physiogan::training::{
    crnn_graph, cvrae_graph, discriminator_graph, gan_generator_graph, physiogan_generator_graph, standard_normal,
    GanGenerator, GeneratorNoise,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, tiny_net, GradCheck};

pub const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-3;
const BATCH: usize = 3;

pub type Named = Vec<(String, GradCheck)>;

fn frames(rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    let net = tiny_net();
    (0..net.seq_len)
        .map(|_| Array2::from_shape_fn((BATCH, net.channels), |_| rng.random_range(-1.5..1.5)))
        .collect()
}

fn constants(g: &mut Graph<'_>, xs: &[Array2<f64>]) -> Vec<Var> {
    xs.iter().map(|f| g.constant(f.clone())).collect()
}

/// Sum of every entry of `vars`.
fn sum_all(g: &mut Graph<'_>, vars: &[Var]) -> Var {
    let joined = g.concat_cols(vars);
    let n = g.value(joined).len() as f64;
    let m = g.mean(joined);
    g.scale(m, n)
}

/// Checks every output of `build` against central differences over all
/// parameters of `model`.
pub fn verify<M, F>(name: &str, labels: &[&str], model: &M, build: F) -> Named
where
    M: Parameterized + Clone,
    F: for<'a> Fn(&'a M, &mut Graph<'a>) -> Vec<Var>,
{
    let mut g = Graph::new();
    let outs = build(model, &mut g);
    assert_eq!(outs.len(), labels.len());
    let analytic: Vec<_> = outs.iter().map(|&o| g.backward(o).collect(&model.params())).collect();
    let checks = check_gradients(
        model,
        &analytic,
        |m| {
            let mut g = Graph::new();
            let outs = build(m, &mut g);
            outs.iter().map(|&o| g.scalar(o)).collect()
        },
        EPS,
    );
    labels.iter().map(|l| format!("{name}/{l}")).zip(checks).collect()
}

pub fn encoder_probe() -> Named {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = Encoder::new(&tiny_net(), &mut rng);
    let x = frames(&mut rng);
    verify("encoder", &["sum"], &enc, |m, g| {
        let xs = constants(g, &x);
        let (mu, lv) = m.forward_graph(g, &xs);
        vec![sum_all(g, &[mu, lv])]
    })
}

pub fn decoder_probes() -> Named {
    let net = tiny_net();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dec = Decoder::new(&net, &mut rng);
    let x = frames(&mut rng);
    let z = standard_normal(BATCH, net.latent_dim, &mut rng);
    let labels = [0, 1, 1];
    let mask: Vec<Vec<bool>> = (0..net.seq_len).map(|t| (0..BATCH).map(|b| (t + b) % 2 == 0).collect()).collect();
    let mut out = Vec::new();
    for (mode, name) in ["own", "teacher", "masked"].iter().enumerate() {
        out.extend(verify(&format!("decoder {name}"), &["sum"], &dec, |m, g| {
            let xs = constants(g, &x);
            let zv = g.constant(z.clone());
            let y = g.constant(one_hot(&labels, net.num_classes));
            let fb = match mode {
                0 => Feedback::Own,
                1 => Feedback::Teacher(&xs),
                _ => Feedback::Masked { frames: &xs, mask: &mask },
            };
            let out = m.forward_graph(g, zv, y, net.seq_len, fb);
            vec![sum_all(g, &out)]
        }));
    }
    out
}

pub fn discriminator_probe() -> Named {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let disc = Discriminator::new(&tiny_net(), &mut rng);
    let x = frames(&mut rng);
    verify("discriminator", &["logits", "features"], &disc, |m, g| {
        let xs = constants(g, &x);
        let (logits, feats) = m.forward_frames(g, &xs);
        vec![sum_all(g, &[logits]), sum_all(g, &[feats])]
    })
}

pub fn generator_and_classifier_probes() -> Named {
    let net = tiny_net();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gen = RecurrentGenerator::new(&net, &mut rng);
    let z = standard_normal(BATCH, net.latent_dim, &mut rng);
    let mut out = verify("rcgan generator", &["sum"], &gen, |m, g| {
        let zv = g.constant(z.clone());
        let y = g.constant(one_hot(&[1, 0, 1], net.num_classes));
        let frames = m.forward_graph(g, zv, y, net.seq_len);
        vec![sum_all(g, &frames)]
    });
    let clf = RecurrentClassifier::new(net.channels, net.oracle_hidden, net.num_classes, &mut rng);
    let x = frames(&mut rng);
    out.extend(verify("classifier", &["logits"], &clf, |m, g| {
        let xs = constants(g, &x);
        let logits = m.logits_graph(g, &xs);
        vec![sum_all(g, &[logits])]
    }));
    out
}

/// Every PhysioGAN generator term and the total, through encoder, decoder
/// and discriminator parameters.
pub fn physiogan_terms() -> Named {
    let net = tiny_net();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let suite = GeneratorSuite::init(ModelKind::Physiogan, &net, &mut rng).unwrap();
    let x = frames(&mut rng);
    let labels = vec![0, 1, 0];
    let noise = GeneratorNoise::sample(BATCH, BATCH, net.latent_dim, net.num_classes, &mut rng);
    // Small delta keeps the free-bits hinge on its differentiable side.
    let weights = LossWeights { delta: 0.01, ..LossWeights::default() };
    verify(
        "physiogan",
        &["recon", "posterior", "feats", "adv", "diverse", "total"],
        &suite,
        |s, g| {
            let GeneratorSuite::Physiogan { encoder, decoder, discriminator } = s else { unreachable!() };
            let (t, total) =
                physiogan_generator_graph(g, encoder, decoder, discriminator, &x, &labels, &noise, &weights, 0.6);
            assert!(g.scalar(t.posterior) > 0.0, "posterior term in the free-bits dead zone");
            vec![t.recon, t.posterior, t.feats, t.adv, t.diverse, total]
        },
    )
}

pub fn baseline_objectives() -> Named {
    let net = tiny_net();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = frames(&mut rng);
    let fake = frames(&mut rng);
    let labels = vec![1, 0, 1];

    let disc = Discriminator::new(&net, &mut rng);
    let mut out = verify("discriminator loss", &["total"], &disc, |m, g| {
        vec![discriminator_graph(g, m, &x, &labels, &fake)]
    });

    let dec = Decoder::new(&net, &mut rng);
    let z = standard_normal(BATCH, net.latent_dim, &mut rng);
    out.extend(verify("crnn", &["recon"], &dec, |m, g| vec![crnn_graph(g, m, &x, &labels, &z)]));

    let cvrae = GeneratorSuite::init(ModelKind::Cvrae, &net, &mut rng).unwrap();
    let eps = standard_normal(BATCH, net.latent_dim, &mut rng);
    let weights = LossWeights { delta: 0.01, ..LossWeights::default() };
    out.extend(verify("cvrae", &["recon", "posterior", "total"], &cvrae, |s, g| {
        let GeneratorSuite::Cvrae { encoder, decoder } = s else { unreachable!() };
        let (r, p, t) = cvrae_graph(g, encoder, decoder, &x, &labels, &eps, &weights);
        vec![r, p, t]
    }));

    for kind in [ModelKind::Rcgan, ModelKind::RcganAr] {
        let suite = GeneratorSuite::init(kind, &net, &mut rng).unwrap();
        out.extend(verify(&format!("{kind} generator loss"), &["total"], &suite, |s, g| {
            let (gen, disc) = match s {
                GeneratorSuite::Rcgan { generator, discriminator } => (GanGenerator::Recurrent(generator), discriminator),
                GeneratorSuite::RcganAr { decoder, discriminator } => {
                    (GanGenerator::Autoregressive(decoder), discriminator)
                }
                _ => unreachable!(),
            };
            vec![gan_generator_graph(g, gen, disc, &z, &labels, net.seq_len)]
        }));
    }
    out
}

pub fn all_checks() -> Named {
    let mut out = encoder_probe();
    out.extend(decoder_probes());
    out.extend(discriminator_probe());
    out.extend(generator_and_classifier_probes());
    out.extend(physiogan_terms());
    out.extend(baseline_objectives());
    out
}

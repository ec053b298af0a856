//! Desk-scale run on the sinusoid fixture: oracle, PhysioGAN and RCGAN,
//! printing the scores used by the end-to-end checks.
//!
//! `cargo run --release --example desk_run -- [epochs] [k] [seed] [noise]`

use std::time::Instant;

use physiogan::datasets::{make_toy_dataset, ToySpec};
use physiogan::generate::{generate_set, LabelPlan};
use physiogan::metrics::{conditional_accuracy, diversity_score, MetricOptions};
use physiogan::nets::{ModelKind, NetConfig};
use physiogan::training::{train_baseline, train_oracle, train_physiogan, train_tstr_classifiers, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map_or(Ok(200), |s| s.parse())?;
    let k: f64 = args.get(2).map_or(Ok(40.0), |s| s.parse())?;
    let seed: u64 = args.get(3).map_or(Ok(0), |s| s.parse())?;
    let noise: f64 = args.get(4).map_or(Ok(0.05), |s| s.parse())?;

    let bundle = make_toy_dataset(&ToySpec { noise_std: noise, ..ToySpec::default() })?;
    let mut cfg = TrainingConfig {
        epochs,
        batch_size: 50,
        seed,
        net: NetConfig { latent_dim: 8, enc_hidden: 16, dec_hidden: 24, oracle_hidden: 16, ..NetConfig::default() },
        ..TrainingConfig::default()
    };
    cfg.weights.k = k;

    let t = Instant::now();
    let (oracle, report, _) = train_oracle(&bundle, &cfg)?;
    println!("oracle acc {:.4} ({:.1}s, {} epochs)", report.test_accuracy, t.elapsed().as_secs_f64(), report.epochs_run);

    let opts = MetricOptions::default();
    for kind in [ModelKind::Physiogan, ModelKind::Rcgan] {
        let t = Instant::now();
        let (suite, log) = if kind == ModelKind::Physiogan {
            train_physiogan(&bundle, &cfg)?
        } else {
            train_baseline(kind, &bundle, &cfg)?
        };
        let last = log.entries.last().unwrap();
        println!("{kind}: train {:.1}s; last {:?}", t.elapsed().as_secs_f64(), last);
        let t = Instant::now();
        let synth = generate_set(&suite, 2, 10 * bundle.train.len(), bundle.seq_len(), &LabelPlan::Uniform, seed + 100)?;
        let acc = conditional_accuracy(&synth, &oracle)?;
        let (div, lambda) = diversity_score(&synth, &bundle.train, &opts)?;
        println!("  cond acc {acc:.4} diversity {div:.4} (lambda {lambda:.3}) [{:.1}s]", t.elapsed().as_secs_f64());
        if kind == ModelKind::Physiogan {
            let t = Instant::now();
            let tstr = train_tstr_classifiers(&synth, &bundle.test, 2, &cfg)?;
            println!("  tstr {tstr:?} [{:.1}s]", t.elapsed().as_secs_f64());
        }
    }
    Ok(())
}

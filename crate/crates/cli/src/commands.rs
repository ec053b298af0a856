use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use log::{info, warn};
use physiogan::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, DatasetInfo, ModelParams};
use physiogan::datasets::{load_dataset, make_toy_dataset, save_dataset, DatasetBundle, SequenceSample, ToySpec};
use physiogan::generate::{generate_set, LabelPlan};
use physiogan::imputation::{evaluate_imputation, triptych_csv, ImputeMethod, Repairer};
use physiogan::metrics::{
    conditional_accuracy, diversity_with, histogram_csv, normalizer, novelty_score, Metric, MetricOptions, ScoreReport,
};
use physiogan::nets::ModelKind;
use physiogan::training::{train_baseline, train_oracle, train_physiogan, train_tstr_classifiers, TrainingConfig};
use serde_json::json;

use crate::plots;
use crate::staging::{now, stem, RunManifest, Staging};
use crate::{
    usage, Command, EvaluateArgs, ExportArgs, GenerateArgs, ImputeArgs, LabelMode, MakeToyArgs, SplitArg, TrainArgs,
};

const HISTOGRAM_BINS: usize = 20;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Impute(a) => impute(a),
        Command::ExportPlots(a) => export_plots(a),
        Command::MakeToy(a) => make_toy(a),
    }
}

fn manifest(command: &str, config: serde_json::Value, seed: Option<u64>, inputs: &[(&str, &Path)], out: &Path) -> RunManifest {
    RunManifest {
        command: command.into(),
        config,
        seed,
        inputs: inputs.iter().map(|(k, p)| (k.to_string(), p.to_path_buf())).collect::<BTreeMap<_, _>>(),
        output: out.to_path_buf(),
        started: now(),
        finished: String::new(),
        artifacts: Vec::new(),
    }
}

fn dataset(path: &Path) -> Result<DatasetBundle> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path, None).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn oracle_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck = checkpoint(path)?;
    if ck.kind != ModelKind::Oracle {
        usage!("{} holds a {} checkpoint, not an oracle", path.display(), ck.kind);
    }
    Ok(ck)
}

fn config(path: Option<&Path>) -> Result<TrainingConfig> {
    match path {
        Some(p) => TrainingConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(TrainingConfig::default()),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let bundle = dataset(&a.dataset)?;
    let mut cfg = config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Err(e) = cfg.validate() {
        usage!("{e}");
    }
    let mut m = manifest(
        "train",
        json!({ "model": a.model, "training": cfg }),
        Some(cfg.seed),
        &[("dataset", &a.dataset)],
        &a.out,
    );
    if let Some(p) = &a.config {
        m.inputs.insert("config".into(), p.clone());
    }
    let stage = Staging::dir(&a.out)?;
    let net = cfg.net_for(&bundle);
    info!("training {} on {} ({} train samples)", a.model, bundle.name, bundle.train.len());
    let (params, log) = match a.model {
        ModelKind::Oracle => {
            let (oracle, report, log) = train_oracle(&bundle, &cfg)?;
            info!("oracle test accuracy {:.4}", report.test_accuracy);
            stage.write("oracle_report.json", serde_json::to_string_pretty(&report)?)?;
            (ModelParams::Oracle(oracle), log)
        }
        ModelKind::Physiogan => {
            let (suite, log) = train_physiogan(&bundle, &cfg)?;
            (ModelParams::Generator(suite), log)
        }
        kind => {
            let (suite, log) = train_baseline(kind, &bundle, &cfg)?;
            (ModelParams::Generator(suite), log)
        }
    };
    info!("trained {} epochs in {:.1}s", log.entries.len(), log.wall_clock_secs);
    let ck = Checkpoint::new(params, net, DatasetInfo::from(&bundle));
    save_checkpoint(&ck, stage.path("checkpoint.json"))?;
    log.write_csv(stage.path("train_log.csv"))?;
    stage.write("config.toml", cfg.to_toml())?;
    stage.commit(m)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let ck = checkpoint(&a.checkpoint)?;
    let Ok(suite) = ck.suite() else {
        usage!("{} holds an oracle; generation needs a generator checkpoint", a.checkpoint.display());
    };
    if a.n == 0 {
        usage!("--n must be at least 1");
    }
    let trained = ck.dataset.seq_len;
    let length = a.length.unwrap_or(trained);
    if length == 0 {
        usage!("--length must be at least 1");
    }
    if let Some(max) = suite.max_length(trained) {
        if length > max {
            usage!(
                "{} emits one frame per step of a sequence fixed at training time and cannot produce \
                 segments longer than its training length {max} (requested {length}); \
                 autoregressive models such as physiogan or rcgan_ar can",
                ck.kind
            );
        }
    }
    let classes = ck.dataset.classes.len();
    let plan = match a.labels {
        LabelMode::Uniform => LabelPlan::Uniform,
        LabelMode::Stratified => LabelPlan::Stratified,
        LabelMode::Match => {
            let counts = &ck.dataset.train_class_counts;
            if counts.len() != classes || counts.iter().all(|&c| c == 0) {
                usage!("checkpoint records no training class counts to match");
            }
            LabelPlan::Matched(counts.iter().map(|&c| c as f64).collect())
        }
    };
    let m = manifest(
        "generate",
        json!({ "n": a.n, "length": length, "labels": format!("{:?}", a.labels).to_lowercase(), "kind": ck.kind }),
        Some(a.seed),
        &[("checkpoint", &a.checkpoint)],
        &a.out,
    );
    let stage = Staging::dir(&a.out)?;
    let samples = generate_set(suite, classes, a.n, length, &plan, a.seed)?;
    let bundle = DatasetBundle::new(
        format!("synthetic-{}", ck.kind),
        ck.dataset.classes.clone(),
        samples,
        Vec::new(),
        ck.dataset.norm.clone(),
        ck.dataset.sample_rate,
    )?;
    save_dataset(&bundle, stage.path(""))?;
    info!("generated {} samples of length {length} from {}", a.n, ck.kind);
    stage.commit(m)
}

/// `samples` re-expressed in `target`'s normalized units.
fn renormalize(from: &DatasetBundle, samples: &[SequenceSample], target: &DatasetBundle) -> Vec<SequenceSample> {
    if from.norm == target.norm {
        return samples.to_vec();
    }
    samples
        .iter()
        .map(|s| SequenceSample::new(target.norm.normalize(&from.norm.denormalize(&s.values)), s.label))
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let real = dataset(&a.real)?;
    let synth_bundle = dataset(&a.synthetic)?;
    if synth_bundle.channels() != real.channels() {
        anyhow::bail!("synthetic set has {} channels, real data {}", synth_bundle.channels(), real.channels());
    }
    if synth_bundle.classes.len() != real.classes.len() {
        anyhow::bail!("synthetic set has {} classes, real data {}", synth_bundle.classes.len(), real.classes.len());
    }
    if synth_bundle.classes != real.classes {
        warn!("class names differ; matching classes by position");
    }
    let raw = if synth_bundle.train.is_empty() { &synth_bundle.test } else { &synth_bundle.train };
    let synthetic = renormalize(&synth_bundle, raw, &real);

    let wants = |m: Metric| a.metrics.contains(&m);
    let oracle = match (&a.oracle, wants(Metric::Conditional)) {
        (Some(p), true) => Some(oracle_checkpoint(p)?),
        (None, true) => usage!("the conditional metric needs --oracle"),
        _ => None,
    };
    let mut cfg = config(a.config.as_deref())?;
    cfg.seed = a.seed;
    let opts = MetricOptions { seed: a.seed, ..MetricOptions::default() };

    let mut m = manifest(
        "evaluate",
        json!({ "metrics": a.metrics, "metric_options": opts, "tstr": wants(Metric::Tstr).then_some(&cfg) }),
        Some(a.seed),
        &[("real", &a.real), ("synthetic", &a.synthetic)],
        &a.out,
    );
    if let Some(p) = &a.oracle {
        m.inputs.insert("oracle".into(), p.clone());
    }
    if let Some(p) = &a.config {
        m.inputs.insert("config".into(), p.clone());
    }
    let stage = Staging::files(&a.out)?;

    let mut report = ScoreReport::default();
    if let Some(ck) = &oracle {
        let o = ck.oracle()?;
        if ck.dataset.channels != real.channels() || ck.dataset.classes.len() != real.classes.len() {
            anyhow::bail!("oracle was trained on data of a different shape");
        }
        report.conditional_accuracy = Some(conditional_accuracy(&synthetic, o)?);
    }
    if wants(Metric::Diversity) || wants(Metric::Novelty) {
        let lambda = normalizer(&real.train, &opts)?;
        report.normalizer = Some(lambda);
        if wants(Metric::Diversity) {
            report.diversity = Some(diversity_with(&synthetic, lambda, &opts)?);
        }
        if wants(Metric::Novelty) {
            let (score, per_sample) = novelty_score(&synthetic, &real.train, lambda, &opts)?;
            report.novelty = Some(score);
            stage.write(&format!("{}_novelty_hist.csv", stem(&a.out)), histogram_csv(&per_sample, HISTOGRAM_BINS))?;
            report.novelty_per_sample = per_sample;
        }
    }
    if wants(Metric::Tstr) {
        report.tstr = Some(train_tstr_classifiers(&synthetic, &real.test, real.num_classes(), &cfg)?);
    }
    info!("{}", serde_json::to_string(&json!({
        "conditional_accuracy": report.conditional_accuracy,
        "diversity": report.diversity,
        "novelty": report.novelty,
    }))?);
    let name = a.out.file_name().context("--out needs a file name")?.to_string_lossy().into_owned();
    report.write_json(stage.path(&name))?;
    stage.commit(m)
}

fn impute(a: ImputeArgs) -> Result<()> {
    let bundle = dataset(&a.dataset)?;
    let method = ImputeMethod::from(a.method);
    let ck = match (&a.checkpoint, method) {
        (Some(p), ImputeMethod::Physiogan) => Some(checkpoint(p)?),
        (None, ImputeMethod::Physiogan) => usage!("--method physiogan needs --checkpoint"),
        (_, ImputeMethod::Knn) => None,
    };
    let repairer = match &ck {
        Some(ck) => {
            let Ok(suite) = ck.suite() else {
                usage!("{} holds an oracle, not a generator", ck.kind);
            };
            if suite.encoder().is_none() {
                usage!("{} has no encoder; imputation needs physiogan or cvrae", ck.kind);
            }
            if ck.dataset.channels != bundle.channels() || ck.dataset.classes.len() != bundle.num_classes() {
                anyhow::bail!("checkpoint was trained on data of a different shape");
            }
            if ck.dataset.fingerprint != bundle.fingerprint() {
                warn!("checkpoint was trained on a different dataset");
            }
            Repairer::Physiogan(suite)
        }
        None => {
            if a.k == 0 {
                usage!("--k must be at least 1");
            }
            Repairer::Knn { train: &bundle.train, k: a.k }
        }
    };
    let oracle = a.oracle.as_deref().map(oracle_checkpoint).transpose()?;
    let count = a.count.unwrap_or(bundle.test.len()).min(bundle.test.len());
    if count == 0 {
        usage!("no test samples to impute");
    }
    let mut m = manifest(
        "impute",
        json!({
            "method": method, "scenario": physiogan::datasets::Scenario::from(a.scenario),
            "rate": a.rate, "count": count, "k": a.k, "triptychs": a.triptychs,
        }),
        Some(a.seed),
        &[("dataset", &a.dataset)],
        &a.out,
    );
    for (key, p) in [("checkpoint", &a.checkpoint), ("oracle", &a.oracle)] {
        if let Some(p) = p {
            m.inputs.insert(key.into(), p.clone());
        }
    }
    let stage = Staging::dir(&a.out)?;
    let (report, triptychs) = evaluate_imputation(
        &bundle.test[..count],
        a.scenario.into(),
        a.rate,
        a.seed,
        &repairer,
        oracle.as_ref().map(|o| o.oracle()).transpose()?,
    )?;
    info!("{method} repair of {count} samples: MAE {:.5}", report.mae);
    stage.write("repair_report.json", serde_json::to_string_pretty(&report)?)?;
    for (i, t) in triptychs.iter().take(a.triptychs).enumerate() {
        stage.write(&format!("triptych_{}.csv", i + 1), triptych_csv(t, &bundle.norm))?;
    }
    stage.commit(m)
}

fn export_plots(a: ExportArgs) -> Result<()> {
    if a.rows == 0 {
        usage!("--rows must be at least 1");
    }
    let bundle = dataset(&a.input)?;
    let samples = match a.split {
        SplitArg::Train => &bundle.train,
        SplitArg::Test => &bundle.test,
    };
    if samples.is_empty() {
        anyhow::bail!("{} has no {:?} samples to plot", a.input.display(), a.split);
    }
    let m = manifest(
        "export-plots",
        json!({ "rows": a.rows, "split": format!("{:?}", a.split).to_lowercase() }),
        None,
        &[("in", &a.input)],
        &a.out,
    );
    let stage = Staging::dir(&a.out)?;
    let grid = plots::pick(&bundle, samples, a.rows);
    for (c, column) in grid.iter().enumerate() {
        if column.len() < a.rows {
            warn!("class {} has only {} samples", bundle.classes[c], column.len());
        }
    }
    stage.write("grid.csv", plots::grid_csv(&bundle.classes, &grid, bundle.channels()))?;
    stage.write("grid.svg", plots::grid_svg(&bundle.classes, &grid, a.rows))?;
    stage.commit(m)
}

fn make_toy(a: MakeToyArgs) -> Result<()> {
    let spec = ToySpec {
        seq_len: a.length,
        channels: a.channels,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        noise_std: a.noise,
        phase_jitter: a.phase_jitter,
        amplitude_jitter: a.amplitude_jitter,
        seed: a.seed,
        ..ToySpec::default()
    };
    let bundle = match make_toy_dataset(&spec) {
        Ok(b) => b,
        Err(e) => usage!("{e}"),
    };
    let m = manifest("make-toy", json!({ "spec": format!("{spec:?}") }), Some(a.seed), &[], &a.out);
    let stage = Staging::dir(&a.out)?;
    save_dataset(&bundle, stage.path(""))?;
    stage.commit(m)
}


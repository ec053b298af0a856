//! CLI contract checks shared by the CLI tests and the acceptance suite.
//! Each check returns `Err(reason)` on violation.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use physiogan::datasets::{load_dataset, save_dataset};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub type Check = Result<(), String>;

pub const TINY_CONFIG: &str = "epochs = 3
batch_size = 16
seed = 5

[net]
latent_dim = 4
enc_hidden = 6
dec_hidden = 8
oracle_hidden = 6

[classifier]
epochs = 5
";

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_physiogan"))
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn physiogan")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn expect_code(dir: &Path, args: &[&str], want: i32) -> Check {
    let out = run(dir, args);
    if code(&out) == want {
        Ok(())
    } else {
        Err(format!(
            "`physiogan {}` exited {} (want {want}): {}",
            args.join(" "),
            code(&out),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// A workspace with a small toy dataset in `toy/` and a tiny config in `cfg.toml`.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        fs::write(dir.path().join("cfg.toml"), TINY_CONFIG).unwrap();
        let ws = Workspace { dir };
        ws.ok(&["make-toy", "--out", "toy", "--length", "16", "--train-per-class", "20", "--test-per-class", "6"])
            .expect("make-toy");
        ws
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn ok(&self, args: &[&str]) -> Check {
        expect_code(self.path(), args, 0)
    }

    pub fn expect(&self, args: &[&str], want: i32) -> Check {
        expect_code(self.path(), args, want)
    }

    pub fn train(&self, model: &str, out: &str) -> Check {
        self.ok(&["train", "--dataset", "toy", "--model", model, "--config", "cfg.toml", "--out", out])
    }

    pub fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path().join(rel)).unwrap()).unwrap()
    }
}

/// Files in `dir`, excluding `manifest`, must be exactly the manifest's
/// artifacts with matching digests.
pub fn manifest_matches(dir: &Path, manifest: &str, only: Option<&BTreeSet<String>>) -> Check {
    let m: Value = serde_json::from_str(
        &fs::read_to_string(dir.join(manifest)).map_err(|e| format!("{}: {e}", dir.join(manifest).display()))?,
    )
    .map_err(|e| e.to_string())?;
    let listed: BTreeSet<String> = m["artifacts"]
        .as_array()
        .ok_or("manifest without artifacts")?
        .iter()
        .map(|a| a["file"].as_str().unwrap_or_default().to_string())
        .collect();
    let present: BTreeSet<String> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != manifest && only.is_none_or(|o| o.contains(n)))
        .collect();
    if listed != present {
        return Err(format!("{}: manifest lists {listed:?}, directory holds {present:?}", dir.display()));
    }
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = fs::read(dir.join(a["file"].as_str().unwrap())).unwrap();
        if hex::encode(Sha256::digest(&bytes)) != a["sha256"].as_str().unwrap_or_default() {
            return Err(format!("digest mismatch for {}", a["file"]));
        }
    }
    if m["started"].as_str().is_none() || m["finished"].as_str().is_none() {
        return Err("manifest lacks timestamps".into());
    }
    Ok(())
}

fn no_partials(dir: &Path) -> Check {
    let leftovers: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with('.'))
        .collect();
    if leftovers.is_empty() {
        Ok(())
    } else {
        Err(format!("leftover staging entries {leftovers:?}"))
    }
}

pub fn exit_codes() -> Check {
    let ws = Workspace::new();
    ws.train("physiogan", "pg")?;
    ws.ok(&["--help"])?;
    ws.expect(&["no-such-command"], 2)?;
    ws.expect(&["train", "--dataset", "toy", "--model", "gan9000", "--out", "x"], 2)?;
    ws.expect(&["impute", "--dataset", "toy", "--scenario", "mcar", "--rate", "1.5", "--method", "knn", "--out", "i"], 2)?;
    ws.expect(&["impute", "--dataset", "toy", "--scenario", "mcar", "--method", "physiogan", "--out", "i"], 2)?;
    ws.expect(&["evaluate", "--real", "toy", "--synthetic", "toy", "--metrics", "conditional", "--out", "r.json"], 2)?;
    ws.expect(&["train", "--dataset", "missing", "--model", "crnn", "--out", "x"], 1)?;
    ws.expect(&["generate", "--checkpoint", "toy/train.csv", "--n", "4", "--out", "g"], 1)?;
    ws.ok(&["make-toy", "--out", "toy2", "--length", "16", "--channels", "2", "--train-per-class", "3"])?;
    ws.expect(&["evaluate", "--real", "toy", "--synthetic", "toy2", "--metrics", "diversity", "--out", "r.json"], 1)?;
    if ws.path().join("r.json").exists() {
        return Err("a failed evaluate left its report behind".into());
    }
    no_partials(ws.path())
}

pub fn manifest_completeness() -> Check {
    let ws = Workspace::new();
    ws.train("physiogan", "pg")?;
    ws.train("oracle", "or")?;
    ws.ok(&["generate", "--checkpoint", "pg/checkpoint.json", "--n", "24", "--out", "syn"])?;
    ws.ok(&[
        "evaluate", "--real", "toy", "--synthetic", "syn", "--oracle", "or/checkpoint.json", "--config", "cfg.toml",
        "--out", "rep/report.json",
    ])?;
    ws.ok(&[
        "impute", "--checkpoint", "pg/checkpoint.json", "--dataset", "toy", "--scenario", "segment", "--rate", "0.25",
        "--oracle", "or/checkpoint.json", "--out", "imp",
    ])?;
    ws.ok(&["impute", "--dataset", "toy", "--scenario", "mcar", "--method", "knn", "--k", "3", "--out", "knn"])?;
    ws.ok(&["export-plots", "--in", "syn", "--out", "plots"])?;
    for d in ["toy", "pg", "or", "syn", "imp", "knn", "plots"] {
        manifest_matches(&ws.path().join(d), "run_manifest.json", None)?;
    }
    manifest_matches(&ws.path().join("rep"), "report_manifest.json", None)?;

    // A re-run replaces the directory as a whole.
    fs::write(ws.path().join("plots/stale.txt"), "old").unwrap();
    ws.ok(&["export-plots", "--in", "syn", "--out", "plots", "--rows", "2"])?;
    manifest_matches(&ws.path().join("plots"), "run_manifest.json", None)?;
    no_partials(ws.path())
}

pub fn rcgan_length_refusal() -> Check {
    let ws = Workspace::new();
    ws.train("rcgan", "rc")?;
    ws.train("physiogan", "pg")?;
    ws.ok(&["generate", "--checkpoint", "rc/checkpoint.json", "--n", "4", "--length", "16", "--out", "a"])?;
    let out = run(ws.path(), &["generate", "--checkpoint", "rc/checkpoint.json", "--n", "4", "--length", "48", "--out", "b"]);
    if code(&out) != 2 {
        return Err(format!("rcgan at 3x training length exited {}", code(&out)));
    }
    if !String::from_utf8_lossy(&out.stderr).contains("training length") {
        return Err("refusal does not explain itself".into());
    }
    if ws.path().join("b").exists() {
        return Err("refused run produced output".into());
    }
    ws.ok(&["generate", "--checkpoint", "pg/checkpoint.json", "--n", "4", "--length", "48", "--out", "c"])?;
    let long = load_dataset(ws.path().join("c")).map_err(|e| e.to_string())?;
    if long.seq_len() != 48 {
        return Err(format!("physiogan produced length {}", long.seq_len()));
    }
    Ok(())
}

/// load → save → load equality within the 9 significant digits written.
pub fn dataset_round_trip() -> Check {
    let ws = Workspace::new();
    let a = load_dataset(ws.path().join("toy")).map_err(|e| e.to_string())?;
    save_dataset(&a, ws.path().join("copy")).map_err(|e| e.to_string())?;
    let b = load_dataset(ws.path().join("copy")).map_err(|e| e.to_string())?;
    if (&a.name, &a.classes, &a.norm, a.seq_len(), a.channels()) != (&b.name, &b.classes, &b.norm, b.seq_len(), b.channels())
    {
        return Err("metadata changed in the round trip".into());
    }
    for (x, y) in a.train.iter().chain(&a.test).zip(b.train.iter().chain(&b.test)) {
        if x.label != y.label {
            return Err("labels changed".into());
        }
        let raw_x = a.norm.denormalize(&x.values);
        let raw_y = b.norm.denormalize(&y.values);
        for (p, q) in raw_x.iter().zip(raw_y.iter()) {
            if (p - q).abs() > 1e-8 * p.abs().max(1.0) {
                return Err(format!("value {p} came back as {q}"));
            }
        }
    }
    if fs::read(ws.path().join("toy/train.csv")).unwrap() != fs::read(ws.path().join("copy/train.csv")).unwrap() {
        return Err("second save is not byte-identical".into());
    }
    Ok(())
}

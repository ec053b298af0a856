//! Outputs are written into a hidden sibling directory and moved into place
//! only after the whole command succeeded, together with a manifest listing
//! every produced file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub output: PathBuf,
    pub started: String,
    pub finished: String,
    /// Every produced file except the manifest itself.
    pub artifacts: Vec<Artifact>,
}

/// Whether the output is a directory replaced as a whole, or loose files
/// placed next to `--out FILE`.
enum Target {
    Dir(PathBuf),
    Files { parent: PathBuf, manifest: String },
}

pub struct Staging {
    target: Target,
    tmp: PathBuf,
    committed: bool,
}

fn sibling(path: &Path, tag: &str) -> Result<PathBuf> {
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy();
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok(parent.join(format!(".{name}.{tag}-{}", std::process::id())))
}

impl Staging {
    fn create(target: Target, anchor: &Path) -> Result<Self> {
        let tmp = sibling(anchor, "partial")?;
        if tmp.exists() {
            fs::remove_dir_all(&tmp).with_context(|| format!("clearing {}", tmp.display()))?;
        }
        if let Some(parent) = tmp.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Staging { target, tmp, committed: false })
    }

    /// Output directory `out`, replaced atomically on commit.
    pub fn dir(out: &Path) -> Result<Self> {
        Self::create(Target::Dir(out.to_path_buf()), out)
    }

    /// Output file `out`; siblings are named `<stem>_<suffix>` and the
    /// manifest `<stem>_manifest.json`.
    pub fn files(out: &Path) -> Result<Self> {
        let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
        let manifest = format!("{}_manifest.json", stem(out));
        Self::create(Target::Files { parent, manifest }, out)
    }

    /// Staged location of output `name`.
    pub fn path(&self, name: &str) -> PathBuf {
        self.tmp.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    /// Writes the manifest and moves everything into place.
    pub fn commit(mut self, mut manifest: RunManifest) -> Result<()> {
        let mut names: Vec<String> = fs::read_dir(&self.tmp)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        manifest.artifacts = names
            .iter()
            .map(|name| {
                let bytes = fs::read(self.path(name))?;
                Ok(Artifact {
                    file: name.clone(),
                    bytes: bytes.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect::<Result<_>>()?;
        manifest.finished = now();
        let manifest_name = match &self.target {
            Target::Dir(_) => MANIFEST_FILE.to_string(),
            Target::Files { manifest, .. } => manifest.clone(),
        };
        self.write(&manifest_name, serde_json::to_string_pretty(&manifest)?)?;

        match &self.target {
            Target::Dir(out) => {
                let old = sibling(out, "old")?;
                if out.exists() {
                    fs::rename(out, &old).with_context(|| format!("moving aside {}", out.display()))?;
                }
                fs::rename(&self.tmp, out).with_context(|| format!("moving outputs into {}", out.display()))?;
                if old.exists() {
                    fs::remove_dir_all(&old).with_context(|| format!("removing {}", old.display()))?;
                }
            }
            Target::Files { parent, .. } => {
                for name in names.iter().chain(std::iter::once(&manifest_name)) {
                    let dest = parent.join(name);
                    fs::rename(self.path(name), &dest).with_context(|| format!("moving {}", dest.display()))?;
                }
                fs::remove_dir(&self.tmp)?;
            }
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into())
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

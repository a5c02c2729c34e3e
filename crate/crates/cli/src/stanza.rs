//! Reproducibility records and figure-input merging.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const METRIC_HEADER: &str = "metric,value,variant,seed,dataset_hash";
pub const DEPTH_HEADER: &str = "depth,mean_l1,variant,seed";

#[derive(Debug, Serialize, Deserialize)]
pub struct Input {
    pub path: PathBuf,
    pub sha256: String,
}

/// Full config, seeds, and content hashes of every input of one command.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stanza {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Input>,
}

impl Stanza {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            seeds,
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(Input {
            path: path.to_path_buf(),
            sha256: content_hash(path)?,
        });
        Ok(())
    }

    pub fn file_name(command: &str) -> String {
        format!("{command}.run.json")
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(Self::file_name(&self.command)), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// The training stanza of a run directory.
    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let p = dir.join(Self::file_name("train-wm"));
        Ok(serde_json::from_slice(&fs::read(&p)?)?)
    }
}

/// SHA-256 of a file, or of the sorted `(name, file hash)` list of a
/// directory.
pub fn content_hash(path: &Path) -> anyhow::Result<String> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        let mut h = Sha256::new();
        for e in entries.iter().filter(|e| e.is_file()) {
            h.update(e.file_name().unwrap_or_default().as_encoded_bytes());
            h.update([0]);
            h.update(content_hash(e)?.as_bytes());
        }
        return Ok(hex::encode(h.finalize()));
    }
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn collect_csvs(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| (n.starts_with("metrics") || n.starts_with("depth")) && n.ends_with(".csv"))
                })
                .collect();
            v.sort();
            out.extend(v);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            bail!("{} does not exist", p.display());
        }
    }
    Ok(out)
}

/// Concatenates metric and depth CSVs, sorting files by their header.
pub fn merge(files: &[PathBuf]) -> anyhow::Result<(String, String)> {
    let mut metrics = format!("{METRIC_HEADER}\n");
    let mut depth = format!("{DEPTH_HEADER}\n");
    let (mut nm, mut nd) = (0, 0);
    for f in files {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let (sink, count) = match header {
            METRIC_HEADER => (&mut metrics, &mut nm),
            DEPTH_HEADER => (&mut depth, &mut nd),
            other => bail!("{}: unexpected header {other:?}", f.display()),
        };
        for l in lines.filter(|l| !l.is_empty()) {
            sink.push_str(l);
            sink.push('\n');
            *count += 1;
        }
    }
    if nm + nd == 0 {
        bail!("no metric or depth rows found");
    }
    Ok((metrics, depth))
}

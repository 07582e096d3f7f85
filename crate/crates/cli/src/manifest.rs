//! Run manifests: what was run, on which bytes, producing which bytes.
//!
//! Manifests carry no timestamps or thread counts, so two runs with the same
//! inputs, seed and configuration write identical manifests.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{execute, inputs, Outputs};
use crate::config::RunConfig;
use crate::{IoFailure, NumericFailure};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub command: String,
    pub seed: u64,
    /// Effective configuration (flags merged in), canonical form.
    pub config: String,
    pub config_sha256: String,
    /// Input files keyed by role, with the paths as given.
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| IoFailure(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

fn build(command: &str, cfg: &RunConfig, outputs: &Outputs) -> Result<Manifest> {
    let config = cfg.canonical();
    let inputs = inputs(command, cfg)
        .into_iter()
        .map(|(role, path)| {
            Ok(FileDigest {
                sha256: file_digest(&path)?,
                name: format!("{role}:{}", path.display()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut outs: Vec<FileDigest> = outputs
        .iter()
        .map(|(name, bytes)| FileDigest {
            name: name.clone(),
            sha256: sha256_hex(bytes),
        })
        .collect();
    outs.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(Manifest {
        tool: "ssdr".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: sdr_core_version(),
        command: command.into(),
        seed: cfg.seed()?,
        config_sha256: sha256_hex(config.as_bytes()),
        config,
        inputs,
        outputs: outs,
    })
}

fn sdr_core_version() -> String {
    // the workspace versions the two crates together
    env!("CARGO_PKG_VERSION").into()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| IoFailure(format!("{}: {e}", path.display())).into())
}

/// Writes every output file and `manifest.json` into `out`.
pub fn write_run(command: &str, cfg: &RunConfig, out: &Path, outputs: &Outputs) -> Result<()> {
    let manifest = build(command, cfg, outputs)?;
    std::fs::create_dir_all(out).map_err(|e| IoFailure(format!("{}: {e}", out.display())))?;
    for (name, bytes) in outputs {
        write_bytes(&out.join(name), bytes)?;
    }
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_bytes(&out.join("manifest.json"), text.as_bytes())
}

/// Re-executes a manifest. Fails if any input digest changed or any output
/// differs from the recorded digest.
pub fn rerun(path: &Path, out: &Path) -> Result<()> {
    let text =
        std::fs::read_to_string(path).map_err(|e| IoFailure(format!("{}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing manifest {}", path.display()))?;
    if sha256_hex(manifest.config.as_bytes()) != manifest.config_sha256 {
        bail!("manifest config does not match its digest");
    }
    let cfg = RunConfig::parse(&manifest.config)?;
    let fresh_inputs = build(&manifest.command, &cfg, &Vec::new())?.inputs;
    if fresh_inputs != manifest.inputs {
        bail!("input files changed since the manifest was written");
    }
    let outputs = execute(&manifest.command, &cfg)?;
    write_run(&manifest.command, &cfg, out, &outputs)?;
    let replay = build(&manifest.command, &cfg, &outputs)?;
    if replay.outputs != manifest.outputs {
        let differing: Vec<&str> = replay
            .outputs
            .iter()
            .filter(|f| !manifest.outputs.contains(f))
            .map(|f| f.name.as_str())
            .collect();
        return Err(NumericFailure(format!(
            "outputs differ from manifest: {}",
            differing.join(", ")
        ))
        .into());
    }
    Ok(())
}

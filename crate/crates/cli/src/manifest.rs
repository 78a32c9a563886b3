//! The run manifest: what was run, on which inputs, with which settings.
//! Written before any computation and finalized when the command ends.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    /// Fully materialized settings of the command.
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub parallel: bool,
    pub started_at: String,
    pub finished_at: Option<String>,
    /// `running`, `ok` or `failed: <reason>`.
    pub status: String,
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        inputs: &[PathBuf],
        seed: Option<u64>,
        threads: usize,
    ) -> CliResult<Self> {
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.display().to_string(), sha256_file(p)?);
        }
        Ok(Self {
            tool: "spinforge".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: std::env::args().collect(),
            config,
            inputs: digests,
            seed,
            threads,
            parallel: spinforge::par::is_parallel(),
            started_at: now(),
            finished_at: None,
            status: "running".into(),
            outputs: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_text(&dir.join(MANIFEST_FILE), &(text + "\n"))
    }

    pub fn finish(&mut self, dir: &Path, status: &str) -> CliResult<()> {
        self.finished_at = Some(now());
        self.status = status.into();
        self.outputs.sort();
        self.outputs.dedup();
        self.write(dir)
    }

    /// Checks that the recorded inputs still have the recorded digests.
    pub fn verify_inputs(&self) -> CliResult<()> {
        let mut bad = Vec::new();
        for (p, want) in &self.inputs {
            match sha256_file(Path::new(p)) {
                Ok(got) if &got == want => {}
                Ok(_) => bad.push(format!("{p}: contents changed since the recorded run")),
                Err(e) => bad.push(e.to_string()),
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::many(bad))
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::validation(format!("cannot write {}: {e}", path.display())))
}

/// Creates the output directory. An existing manifest from a different
/// command is refused so a directory never mixes two runs.
pub fn prepare_out_dir(dir: &Path, command: &str, resume: bool) -> CliResult<()> {
    let m = dir.join(MANIFEST_FILE);
    if m.exists() && !resume {
        let old = RunManifest::load(&m)?;
        if old.command != command {
            return Err(CliError::validation(format!(
                "{} already holds a `{}` run; choose another --out",
                dir.display(),
                old.command
            )));
        }
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("x.txt");
        std::fs::write(&input, "abc").unwrap();
        assert_eq!(
            sha256_file(&input).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut m = RunManifest::new("simulate", serde_json::json!({"a": 1}), &[input.clone()], Some(3), 1).unwrap();
        m.write(dir.path()).unwrap();
        m.finish(dir.path(), "ok").unwrap();
        let back = RunManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        back.verify_inputs().unwrap();
        std::fs::write(&input, "abd").unwrap();
        assert!(back.verify_inputs().is_err());
        assert!(prepare_out_dir(dir.path(), "optimize", false).is_err());
        assert!(prepare_out_dir(dir.path(), "simulate", false).is_ok());
    }
}

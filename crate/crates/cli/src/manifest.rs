use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one invocation: enough to rerun it and to check that the
/// inputs are the same files.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    /// Fully resolved settings after flags, config file and defaults.
    pub config: Value,
    pub seeds: Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub exit_status: i32,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_file(path: &Path) -> anyhow::Result<InputDigest> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        hasher.update(&buf[..n]);
    }
    let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256,
        bytes,
    })
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: Vec<String>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            argv,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: Value::Null,
            seeds: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: now_unix(),
            finished_unix: 0.0,
            exit_status: 0,
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        if !self.inputs.iter().any(|d| d.path == path) {
            self.inputs.push(sha256_file(path)?);
        }
        Ok(())
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Writes `<dir>/<subcommand>.manifest.json` and returns its path.
    pub fn write(&mut self, dir: &Path, exit_status: i32) -> anyhow::Result<PathBuf> {
        self.finished_unix = now_unix();
        self.exit_status = exit_status;
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.manifest.json", self.subcommand));
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, b"abc").unwrap();
        let d = sha256_file(&p).unwrap();
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(d.bytes, 3);
    }

    #[test]
    fn manifest_lands_next_to_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("synth", vec!["colloql".into(), "synth".into()]);
        m.output(dir.path().join("tables.jsonl"));
        let path = m.write(dir.path(), 0).unwrap();
        let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["subcommand"], "synth");
        assert!(v["finished_unix"].as_f64().unwrap() >= v["started_unix"].as_f64().unwrap());
    }
}

//! Run manifests.
//!
//! Every command that writes artifacts also writes a `manifest.json` next to
//! them: the command name, program version, master seed, the derived seed of
//! every named random stream, the full config snapshot, and a SHA-256 digest
//! of every input and output file. Two runs produced the same artifacts
//! exactly when their manifests list the same digests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::streams;

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Derived seed of each named random stream, hex-encoded.
    pub streams: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub elapsed_seconds: f64,
    #[serde(skip)]
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            streams: BTreeMap::new(),
            config: config.snapshot().clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            elapsed_seconds: 0.0,
            started: Instant::now(),
        }
    }

    /// Registers a named stream and returns its generator.
    pub fn stream(&mut self, name: &str) -> rand_chacha::ChaCha20Rng {
        let master = self.seed.expect("streams require a seeded run");
        let seed = streams::derive_seed(master, name);
        self.streams.insert(name.to_string(), streams::hex(&seed));
        rand_chacha::ChaCha20Rng::from_seed(seed)
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: digest });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.outputs.push(FileDigest { path: path.display().to_string(), sha256: digest });
        Ok(())
    }

    /// Stamps the elapsed time and writes `manifest.json` atomically
    /// (temporary file in the same directory, then rename).
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.elapsed_seconds = self.started.elapsed().as_secs_f64();
        let target = dir.join("manifest.json");
        let tmp = dir.join("manifest.json.tmp");
        let body = serde_json::to_vec_pretty(&self).context("encoding manifest")?;
        fs::write(&tmp, body).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &target)
            .with_context(|| format!("renaming {} into place", tmp.display()))?;
        Ok(target)
    }
}

use rand_chacha::rand_core::SeedableRng;

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file =
        fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("hashing {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(streams::hex(&hasher.finalize()))
}

//! One module per subcommand, plus small shared helpers.

pub mod diagnose;
pub mod fit;
pub mod kfit;
pub mod mcmle;
pub mod predict;
pub mod simulate;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::Config;

/// Output directory: `run.output_dir`, defaulting to the working directory.
/// Created if missing.
pub fn prepare_output_dir(cfg: &Config) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.get("run.output_dir").unwrap_or("."));
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

/// Master seed for randomized commands: `run.seed` must be set (the
/// `--seed` flag writes into it).
pub fn require_seed(cfg: &Config) -> Result<u64> {
    cfg.u64_opt("run.seed")?
        .ok_or_else(|| anyhow::anyhow!("a seed is required: set `run.seed` or pass --seed"))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn standard_deviation(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Writes a small CSV table with a fixed header; values use the shortest
/// exact decimal form.
pub fn write_csv_table(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut body = String::from(header);
    body.push('\n');
    for row in rows {
        body.push_str(&row.join(","));
        body.push('\n');
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

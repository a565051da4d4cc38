//! Flat key-value run configuration.
//!
//! A config file is a sequence of `section.key = value` lines. Blank lines
//! and lines starting with `#` are skipped. Every key must appear in
//! [`SCHEMA`], so a misspelled key fails the run before any work starts, and
//! a key may appear at most once. Command line flags override file values by
//! writing into the same keys, which keeps the manifest snapshot equal to
//! the settings the run actually used.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

/// Every key any command understands. Keys a command does not read are
/// permitted and ignored so one file can drive a whole pipeline.
pub const SCHEMA: &[&str] = &[
    "run.seed",
    "run.output_dir",
    "grid.xmin",
    "grid.ymin",
    "grid.xmax",
    "grid.ymax",
    "grid.nx",
    "grid.ny",
    "grid.extension",
    "cov.family",
    "cov.sigma",
    "cov.phi",
    "cov.kappa",
    "model.kind",
    "model.beta0",
    "model.covariates",
    "model.offset",
    "model.regions",
    "model.rho",
    "model.steps",
    "model.mu0",
    "mcmc.burnin",
    "mcmc.iters",
    "mcmc.thin",
    "mcmc.chains",
    "mcmc.target_accept",
    "mcmc.c",
    "mcmc.initial_step",
    "mcmc.fix_theta",
    "kfit.u0",
    "kfit.c",
    "kfit.bins",
    "mcmle.sims",
    "mcmle.burnin",
    "mcmle.theta0",
    "predict.functional",
    "predict.percentiles",
    "predict.exceed",
    "predict.direction",
    "predict.segregation_c",
    "predict.segregation_q",
];

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{line}`", i + 1))?;
            let key = key.trim();
            let value = value.trim();
            if !SCHEMA.contains(&key) {
                bail!("line {}: unknown key `{key}`{}", i + 1, nearest_hint(key));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                bail!("line {}: key `{key}` given twice", i + 1);
            }
        }
        Ok(Config { values })
    }

    /// Overrides one value, e.g. from a command line flag.
    pub fn set(&mut self, key: &str, value: String) {
        debug_assert!(SCHEMA.contains(&key), "unknown override key {key}");
        self.values.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| anyhow!("config key `{key}` is required"))
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| anyhow!("config key `{key}`: `{v}` is not a number"))
            })
            .transpose()
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        self.f64_opt(key)?.ok_or_else(|| anyhow!("config key `{key}` is required"))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn usize_opt(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| anyhow!("config key `{key}`: `{v}` is not a nonnegative integer"))
            })
            .transpose()
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        self.usize_opt(key)?.ok_or_else(|| anyhow!("config key `{key}` is required"))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    pub fn u64_opt(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| anyhow!("config key `{key}`: `{v}` is not a nonnegative integer"))
            })
            .transpose()
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(anyhow!("config key `{key}`: `{v}` must be true or false")),
        }
    }

    /// Comma-separated numbers, e.g. `predict.exceed = 2, 4, 8`.
    pub fn f64_list_opt(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|part| {
                        let part = part.trim();
                        part.parse::<f64>().map_err(|_| {
                            anyhow!("config key `{key}`: `{part}` is not a number")
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .transpose()
    }

    /// Comma-separated strings with whitespace trimmed; empty items rejected.
    pub fn str_list_opt(&self, key: &str) -> Result<Option<Vec<String>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|part| {
                        let part = part.trim();
                        if part.is_empty() {
                            Err(anyhow!("config key `{key}` has an empty list item"))
                        } else {
                            Ok(part.to_string())
                        }
                    })
                    .collect::<Result<Vec<String>>>()
            })
            .transpose()
    }

    /// The resolved settings, for the run manifest.
    pub fn snapshot(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// Suggests the schema key closest to a misspelling, if any is close.
fn nearest_hint(key: &str) -> String {
    let mut best: Option<(usize, &str)> = None;
    for candidate in SCHEMA {
        let d = edit_distance(key, candidate);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, candidate));
        }
    }
    match best {
        Some((d, candidate)) if d <= 3 => {
            let mut s = String::new();
            let _ = write!(s, " (did you mean `{candidate}`?)");
            s
        }
        _ => String::new(),
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_values() {
        let cfg = Config::parse(
            "# run controls\n\nrun.seed = 42\ngrid.nx=16\n  cov.family = exponential  \n",
        )
        .unwrap();
        assert_eq!(cfg.get("run.seed"), Some("42"));
        assert_eq!(cfg.get("grid.nx"), Some("16"));
        assert_eq!(cfg.get("cov.family"), Some("exponential"));
    }

    #[test]
    fn rejects_unknown_keys_with_a_hint() {
        let err = Config::parse("grid.xn = 4\n").unwrap_err().to_string();
        assert!(err.contains("unknown key `grid.xn`"), "{err}");
        assert!(err.contains("did you mean `grid."), "{err}");
    }

    #[test]
    fn rejects_duplicate_keys() {
        let err = Config::parse("run.seed = 1\nrun.seed = 2\n").unwrap_err().to_string();
        assert!(err.contains("given twice"), "{err}");
    }

    #[test]
    fn rejects_lines_without_equals() {
        let err = Config::parse("run.seed 7\n").unwrap_err().to_string();
        assert!(err.contains("expected `key = value`"), "{err}");
    }

    #[test]
    fn typed_getters_validate() {
        let cfg = Config::parse("grid.nx = 16\ncov.sigma = 0.5\npredict.exceed = 2, 4, 8\n")
            .unwrap();
        assert_eq!(cfg.require_usize("grid.nx").unwrap(), 16);
        assert_eq!(cfg.require_f64("cov.sigma").unwrap(), 0.5);
        assert_eq!(cfg.f64_list_opt("predict.exceed").unwrap().unwrap(), vec![2.0, 4.0, 8.0]);
        assert!(cfg.require_f64("cov.phi").is_err());
        assert!(cfg.f64_opt("grid.nx").unwrap().is_some());
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut cfg = Config::parse("run.seed = 1\n").unwrap();
        cfg.set("run.seed", "9".into());
        assert_eq!(cfg.u64_opt("run.seed").unwrap(), Some(9));
        assert_eq!(cfg.snapshot().len(), 1);
    }

    #[test]
    fn every_schema_key_is_section_dot_key() {
        for key in SCHEMA {
            let (section, rest) = key.split_once('.').expect("dotted key");
            assert!(!section.is_empty() && !rest.is_empty(), "{key}");
        }
    }
}

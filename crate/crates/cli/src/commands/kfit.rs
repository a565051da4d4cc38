//! `lgcp kfit`: estimate the K function of a pattern and fit the covariance
//! parameters by minimum contrast.

use std::path::Path;

use anyhow::{Context, Result};

use lgcp::io;
use lgcp::summary::{estimate_k, fit_moments, theoretical_k_grid};

use crate::config::Config;
use crate::manifest::RunManifest;
use crate::setup::{family_from_config, window_from_config};

use super::prepare_output_dir;

pub fn run(cfg: &Config, input: &Path) -> Result<()> {
    let out = prepare_output_dir(cfg)?;
    let window = window_from_config(cfg)?;
    let family = family_from_config(cfg)?;
    let mut manifest = RunManifest::new("kfit", cfg, None);

    let pattern = io::read_pattern_csv(input, window)
        .with_context(|| format!("pattern {}", input.display()))?;
    manifest.add_input(input)?;

    let u0 = cfg.f64_or("kfit.u0", window.shorter_side() / 4.0)?;
    let c = cfg.f64_or("kfit.c", 0.25)?;
    let bins = cfg.usize_or("kfit.bins", 100)?;

    let k = estimate_k(&pattern, u0, bins)?;
    let fit = fit_moments(&k, family, u0, c)?;
    let k_model = theoretical_k_grid(&fit.model, &k.u)?;

    let table_path = out.join("k_table.csv");
    io::write_k_table_csv(&table_path, &k.u, &k.k_hat, &k_model)?;
    manifest.add_output(&table_path)?;

    let sigma = fit.model.sigma2.sqrt();
    let fit_path = out.join("moment_fit.csv");
    super::write_csv_table(
        &fit_path,
        "sigma,phi,discrepancy,converged",
        &[vec![
            format!("{sigma}"),
            format!("{}", fit.model.phi),
            format!("{}", fit.discrepancy),
            format!("{}", fit.converged),
        ]],
    )?;
    manifest.add_output(&fit_path)?;

    println!(
        "kfit: {} points, sigma = {sigma:.6}, phi = {:.6}, discrepancy = {:.6e}{}",
        pattern.n(),
        fit.model.phi,
        fit.discrepancy,
        if fit.converged { "" } else { " (search did not converge)" }
    );
    let path = manifest.write(&out)?;
    println!("kfit: wrote {}", path.display());
    Ok(())
}

//! `lgcp fit`: sample the posterior of the configured model by MCMC.
//!
//! Initialization is deliberate but cheap: the intercept matches the
//! observed total, covariate coefficients start at zero, and the covariance
//! starts from `cov.sigma`/`cov.phi` when given, otherwise from a minimum
//! contrast fit to the pattern's K function. Chains are run sequentially;
//! chain `k` draws from the named streams `chain-k` (and `augmentation-k`
//! for aggregated counts), so any chain can be reproduced on its own.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use lgcp::covariance::{CorrelationFamily, CovarianceModel};
use lgcp::grid::{
    bin_points, bin_points_by_type, region_mask, GridSpec, PointPattern, RegionPartition,
};
use lgcp::io;
use lgcp::mcmc::{
    diagnostics, initial_intercept, run_chain, run_chain_aggregated, ChainInit, MultitypeTarget,
    PosteriorSamples, SamplerConfig, UnitypeTarget,
};
use lgcp::models::{MultitypeModel, UnitypeModel};
use lgcp::summary::{estimate_k, fit_moments};

use crate::config::Config;
use crate::manifest::RunManifest;
use crate::setup::{
    beta_from_config, covariance_if_given, covariates_from_config, family_from_config,
    grid_from_config, model_kind, offset_from_config, ModelKind,
};

use super::{mean, prepare_output_dir, require_seed, standard_deviation};

pub fn run(cfg: &Config, input: &Path) -> Result<()> {
    let out = prepare_output_dir(cfg)?;
    let seed = require_seed(cfg)?;
    let grid = grid_from_config(cfg)?;
    let kind = model_kind(cfg)?;
    let chains = cfg.usize_or("mcmc.chains", 1)?;
    if chains == 0 {
        bail!("config key `mcmc.chains` must be at least 1");
    }
    let mut manifest = RunManifest::new("fit", cfg, Some(seed));

    let all = match kind {
        ModelKind::Unitype => fit_unitype(cfg, input, &grid, chains, &mut manifest)?,
        ModelKind::Multitype => fit_multitype(cfg, input, &grid, chains, &mut manifest)?,
        ModelKind::Aggregated => fit_aggregated(cfg, input, &grid, chains, &mut manifest)?,
        ModelKind::Spacetime => bail!(
            "`fit` covers unitype, multitype, and aggregated models; \
             fit the spatial margin of a space-time model from its pooled pattern"
        ),
    };

    let mut report = String::new();
    for (k, samples) in all.iter().enumerate() {
        persist_chain(&out, k, samples, &mut manifest)?;
        report.push_str(&chain_report(k, samples));
        println!(
            "fit: chain {k}: {} draws, acceptance {:.3}, sigma mean {:.4}, phi mean {:.4}",
            samples.n_retained(),
            samples.acceptance_overall(),
            mean(&samples.sigma),
            mean(&samples.phi)
        );
    }
    let diag_path = out.join("diagnostics.txt");
    std::fs::write(&diag_path, report)
        .with_context(|| format!("writing {}", diag_path.display()))?;
    manifest.add_output(&diag_path)?;

    let path = manifest.write(&out)?;
    println!("fit: wrote {}", path.display());
    Ok(())
}

fn fit_unitype(
    cfg: &Config,
    input: &Path,
    grid: &GridSpec,
    chains: usize,
    manifest: &mut RunManifest,
) -> Result<Vec<PosteriorSamples>> {
    let pattern = io::read_pattern_csv(input, *grid.window())
        .with_context(|| format!("pattern {}", input.display()))?;
    manifest.add_input(input)?;
    let counts: Vec<f64> = bin_points(&pattern, grid)?.iter().map(|&c| c as f64).collect();
    let offset = offset_from_config(cfg, grid, manifest)?;
    let (_, covariates) = covariates_from_config(cfg, grid, manifest)?;
    let family = family_from_config(cfg)?;
    let cov = initial_covariance(cfg, family, Some(&pattern), grid)?;

    let beta = match beta_from_config(cfg)? {
        Some(b) => b,
        None => {
            let total: f64 = counts.iter().sum();
            let b0 = initial_intercept(total, grid.window().area(), mean(&offset))?;
            let mut b = vec![0.0; 1 + covariates.len()];
            b[0] = b0;
            b
        }
    };
    let init = ChainInit { beta: beta.clone(), sigma2: cov.sigma2, phi: cov.phi };
    let config = sampler_config(cfg, &init)?;
    let model = UnitypeModel::new(beta, covariates, offset, cov, grid)?;
    let mut target = UnitypeTarget::new(model, grid, counts, None)?;

    let mut all = Vec::with_capacity(chains);
    for k in 0..chains {
        let mut rng = manifest.stream(&format!("chain-{k}"));
        all.push(run_chain(&mut target, &config, &init, &mut rng)?);
    }
    Ok(all)
}

fn fit_multitype(
    cfg: &Config,
    input: &Path,
    grid: &GridSpec,
    chains: usize,
    manifest: &mut RunManifest,
) -> Result<Vec<PosteriorSamples>> {
    let pattern = io::read_pattern_csv(input, *grid.window())
        .with_context(|| format!("pattern {}", input.display()))?;
    manifest.add_input(input)?;
    if pattern.marks().is_none() {
        bail!("{}: multitype fits need a mark column", input.display());
    }
    if cfg.get("model.covariates").is_some() {
        bail!("multitype models take one intercept per type and no covariates");
    }
    let counts: Vec<Vec<f64>> = bin_points_by_type(&pattern, grid)?
        .into_iter()
        .map(|col| col.iter().map(|&c| c as f64).collect())
        .collect();
    let offset = offset_from_config(cfg, grid, manifest)?;
    let family = family_from_config(cfg)?;
    let pooled = PointPattern::new(*grid.window(), pattern.xs().to_vec(), pattern.ys().to_vec())?;
    let cov = initial_covariance(cfg, family, Some(&pooled), grid)?;

    let m = pattern.n_types();
    let betas = match beta_from_config(cfg)? {
        Some(b) => {
            if b.len() != m {
                bail!("`model.beta0` lists {} intercepts for {m} types", b.len());
            }
            b
        }
        None => {
            let area = grid.window().area();
            let mean_offset = mean(&offset);
            counts
                .iter()
                .map(|col| {
                    // A type with no points still needs a finite start.
                    let total = col.iter().sum::<f64>().max(1.0);
                    initial_intercept(total, area, mean_offset)
                })
                .collect::<lgcp::Result<Vec<f64>>>()?
        }
    };
    let init = ChainInit { beta: betas.clone(), sigma2: cov.sigma2, phi: cov.phi };
    let config = sampler_config(cfg, &init)?;
    let model = MultitypeModel::new(betas, offset, cov, grid)?;
    let mut target = MultitypeTarget::new(model, grid, counts)?;

    let mut all = Vec::with_capacity(chains);
    for k in 0..chains {
        let mut rng = manifest.stream(&format!("chain-{k}"));
        all.push(run_chain(&mut target, &config, &init, &mut rng)?);
    }
    Ok(all)
}

fn fit_aggregated(
    cfg: &Config,
    input: &Path,
    grid: &GridSpec,
    chains: usize,
    manifest: &mut RunManifest,
) -> Result<Vec<PosteriorSamples>> {
    let rows = io::read_region_counts_csv(input)
        .with_context(|| format!("region counts {}", input.display()))?;
    manifest.add_input(input)?;
    let totals = dense_totals(rows, input)?;
    let regions_path = cfg.require("model.regions")?;
    let region_of_cell =
        super::simulate::read_region_map(Path::new(regions_path), grid, manifest)?;
    let partition = RegionPartition::new(region_of_cell.clone(), totals.clone())?;
    let masks = region_mask(&partition, grid)?;

    let offset = offset_from_config(cfg, grid, manifest)?;
    let (_, covariates) = covariates_from_config(cfg, grid, manifest)?;
    let cov = covariance_if_given(cfg)?.ok_or_else(|| {
        anyhow!(
            "aggregated fits need `cov.sigma` and `cov.phi` as the starting covariance; \
             there is no point pattern to initialize from"
        )
    })?;

    let in_region: Vec<bool> = region_of_cell.iter().map(|&r| r != 0).collect();
    let n_in = in_region.iter().filter(|&&b| b).count();
    if n_in == 0 {
        bail!("{regions_path}: the region map assigns no cell to any region");
    }
    let beta = match beta_from_config(cfg)? {
        Some(b) => b,
        None => {
            let total: u64 = totals.iter().sum();
            let mean_offset = offset
                .iter()
                .zip(&in_region)
                .filter(|&(_, &b)| b)
                .map(|(&d, _)| d)
                .sum::<f64>()
                / n_in as f64;
            let area = n_in as f64 * grid.cell_area();
            let b0 = initial_intercept(total as f64, area, mean_offset)?;
            let mut b = vec![0.0; 1 + covariates.len()];
            b[0] = b0;
            b
        }
    };
    let init = ChainInit { beta: beta.clone(), sigma2: cov.sigma2, phi: cov.phi };
    let config = sampler_config(cfg, &init)?;

    // Flat starting split of each total over its region; the first Gibbs
    // sweep replaces it with a draw from the exact conditional.
    let mut counts0 = vec![0.0; grid.n_cells()];
    for (r, cells) in masks.cells_by_region.iter().enumerate() {
        if cells.is_empty() {
            continue;
        }
        let q = totals[r] / cells.len() as u64;
        let rem = (totals[r] % cells.len() as u64) as usize;
        for (j, &cell) in cells.iter().enumerate() {
            counts0[cell] = q as f64 + if j < rem { 1.0 } else { 0.0 };
        }
    }

    let model = UnitypeModel::new(beta, covariates, offset, cov, grid)?;
    let mut target = UnitypeTarget::new(model, grid, counts0.clone(), Some(in_region))?;

    let mut all = Vec::with_capacity(chains);
    for k in 0..chains {
        target.set_counts(&counts0)?;
        let mut rng = manifest.stream(&format!("chain-{k}"));
        let mut aug = manifest.stream(&format!("augmentation-{k}"));
        all.push(run_chain_aggregated(
            &mut target,
            &masks,
            &totals,
            &config,
            &init,
            &mut rng,
            &mut aug,
        )?);
    }
    Ok(all)
}

/// Totals indexed by region id: ids must cover 1..=R with no gaps.
fn dense_totals(rows: Vec<(u32, u64)>, source: &Path) -> Result<Vec<u64>> {
    let max_id = rows.iter().map(|r| r.0).max().unwrap_or(0);
    if max_id == 0 {
        bail!("{}: no regions listed", source.display());
    }
    let mut totals = vec![None; max_id as usize];
    for (id, count) in rows {
        if id == 0 {
            bail!("{}: region ids start at 1", source.display());
        }
        totals[(id - 1) as usize] = Some(count);
    }
    totals
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            t.ok_or_else(|| anyhow!("{}: region {} has no count", source.display(), i + 1))
        })
        .collect()
}

fn sampler_config(cfg: &Config, init: &ChainInit) -> Result<SamplerConfig> {
    let mut sc = SamplerConfig::default();
    sc.burnin = cfg.usize_or("mcmc.burnin", sc.burnin)?;
    sc.n_iterations = cfg.usize_or("mcmc.iters", sc.n_iterations)?;
    sc.thin = cfg.usize_or("mcmc.thin", sc.thin)?;
    sc.target_accept = cfg.f64_or("mcmc.target_accept", sc.target_accept)?;
    sc.theta_damping = cfg.f64_or("mcmc.c", sc.theta_damping)?;
    sc.initial_step = cfg.f64_or("mcmc.initial_step", sc.initial_step)?;
    if cfg.bool_or("mcmc.fix_theta", false)? {
        sc.fixed_theta = Some((init.sigma2, init.phi));
    }
    Ok(sc)
}

/// Starting covariance: config values when given, otherwise a minimum
/// contrast fit to the pattern's K function, with the scale clamped to the
/// resolvable range of the grid.
pub(crate) fn initial_covariance(
    cfg: &Config,
    family: CorrelationFamily,
    pattern: Option<&PointPattern>,
    grid: &GridSpec,
) -> Result<CovarianceModel> {
    if let Some(cov) = covariance_if_given(cfg)? {
        return Ok(cov);
    }
    let pattern = pattern.ok_or_else(|| {
        anyhow!("`cov.sigma` and `cov.phi` are required when no pattern is available")
    })?;
    let shorter = grid.window().shorter_side();
    let u0 = cfg.f64_or("kfit.u0", shorter / 4.0)?;
    let c = cfg.f64_or("kfit.c", 0.25)?;
    let bins = cfg.usize_or("kfit.bins", 100)?;
    let k = estimate_k(pattern, u0, bins)?;
    let fit = fit_moments(&k, family, u0, c)?;
    let sigma2 = fit.model.sigma2.max(1e-4);
    let min_side = grid.cell_width().min(grid.cell_height());
    let phi = fit.model.phi.clamp(min_side, shorter);
    Ok(CovarianceModel::with_family(family, sigma2, phi)?)
}

fn persist_chain(
    out: &Path,
    k: usize,
    samples: &PosteriorSamples,
    manifest: &mut RunManifest,
) -> Result<()> {
    let chain_path = out.join(format!("chain_{k}.csv"));
    io::write_chain_csv(&chain_path, samples)?;
    manifest.add_output(&chain_path)?;
    let s_path = out.join(format!("s_samples_{k}.csv"));
    io::write_s_samples_csv(&s_path, samples)?;
    manifest.add_output(&s_path)?;
    Ok(())
}

fn chain_report(k: usize, samples: &PosteriorSamples) -> String {
    let mut text = format!(
        "chain {k}\n  retained draws: {}\n  acceptance overall: {:.4}\n  \
         acceptance trailing 20%: {:.4}\n  final step size: {:.6}\n",
        samples.n_retained(),
        samples.acceptance_overall(),
        samples.acceptance_trailing(0.2),
        samples.final_step,
    );
    let p = samples.beta.first().map_or(0, Vec::len);
    for j in 0..p {
        let series: Vec<f64> = samples.beta.iter().map(|b| b[j]).collect();
        text.push_str(&format!(
            "  beta{j}: mean {:.6}, sd {:.6}\n",
            mean(&series),
            standard_deviation(&series)
        ));
    }
    text.push_str(&format!(
        "  sigma: mean {:.6}, sd {:.6}\n  phi: mean {:.6}, sd {:.6}\n",
        mean(&samples.sigma),
        standard_deviation(&samples.sigma),
        mean(&samples.phi),
        standard_deviation(&samples.phi)
    ));
    match diagnostics(samples) {
        Ok(d) => {
            for acf in &d.autocorrelations {
                let lag1 = acf.lag.first().copied().unwrap_or(0.0);
                text.push_str(&format!("  {}: lag-1 autocorrelation {:.4}\n", acf.name, lag1));
            }
            for w in &d.warnings {
                text.push_str(&format!("  warning: {w}\n"));
            }
        }
        Err(e) => text.push_str(&format!("  (autocorrelations unavailable: {e})\n")),
    }
    text
}

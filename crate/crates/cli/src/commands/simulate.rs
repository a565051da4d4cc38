//! `lgcp simulate`: draw one realization of the configured model and write
//! the pattern together with the latent truth behind it.

use std::path::Path;

use anyhow::{bail, Context, Result};

use lgcp::covariance::SeparableStCovariance;
use lgcp::field::FieldWorkspace;
use lgcp::grid::{GridSpec, PointPattern};
use lgcp::io;
use lgcp::models::{MultitypeModel, StModel, UnitypeModel};
use lgcp::predict::Raster;

use crate::config::Config;
use crate::manifest::RunManifest;
use crate::setup::{
    self, beta_from_config, covariance_from_config, covariates_from_config, grid_from_config,
    model_kind, offset_from_config, read_raster_on_grid, ModelKind,
};

use super::{prepare_output_dir, require_seed};

pub fn run(cfg: &Config) -> Result<()> {
    let out = prepare_output_dir(cfg)?;
    let seed = require_seed(cfg)?;
    let grid = grid_from_config(cfg)?;
    let kind = model_kind(cfg)?;
    let mut manifest = RunManifest::new("simulate", cfg, Some(seed));
    let mut rng = manifest.stream("simulate");

    match kind {
        ModelKind::Unitype | ModelKind::Aggregated => {
            let cov = covariance_from_config(cfg)?;
            let offset = offset_from_config(cfg, &grid, &mut manifest)?;
            let (_, covariates) = covariates_from_config(cfg, &grid, &mut manifest)?;
            let beta = beta_from_config(cfg)?
                .ok_or_else(|| anyhow::anyhow!("config key `model.beta0` is required"))?;
            let model = UnitypeModel::new(beta, covariates, offset, cov, &grid)?;
            let mut ws = FieldWorkspace::new(&model.cov, &grid)?;
            let sim = model.simulate(&mut ws, &mut rng)?;

            write_pattern(&out, &sim.pattern, &mut manifest)?;
            write_truth(&out, &grid, "true_s", &sim.s_obs, &mut manifest)?;
            write_truth(&out, &grid, "true_intensity", &sim.intensity, &mut manifest)?;
            println!("simulate: {} points over a {} x {} grid", sim.pattern.n(), grid.nx(), grid.ny());

            if kind == ModelKind::Aggregated {
                let regions_path = cfg.require("model.regions")?;
                let region_of_cell = read_region_map(Path::new(regions_path), &grid, &mut manifest)?;
                let n_regions = region_of_cell.iter().copied().max().unwrap_or(0) as usize;
                if n_regions == 0 {
                    bail!("{regions_path}: the region map assigns no cell to any region");
                }
                let mut totals = vec![0u64; n_regions];
                for (cell, &r) in region_of_cell.iter().enumerate() {
                    if r > 0 {
                        totals[(r - 1) as usize] += sim.counts[cell];
                    }
                }
                let rows: Vec<(u32, u64)> = totals
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| ((i + 1) as u32, t))
                    .collect();
                let path = out.join("region_counts.csv");
                io::write_region_counts_csv(&path, &rows)?;
                manifest.add_output(&path)?;
                println!(
                    "simulate: {} counts aggregated into {} regions",
                    totals.iter().sum::<u64>(),
                    n_regions
                );
            }
        }
        ModelKind::Multitype => {
            let cov = covariance_from_config(cfg)?;
            let offset = offset_from_config(cfg, &grid, &mut manifest)?;
            if cfg.get("model.covariates").is_some() {
                bail!("multitype models take one intercept per type and no covariates");
            }
            let betas = beta_from_config(cfg)?
                .ok_or_else(|| anyhow::anyhow!("config key `model.beta0` is required"))?;
            if betas.len() < 2 {
                bail!("multitype simulation needs at least two entries in `model.beta0`");
            }
            let model = MultitypeModel::new(betas, offset, cov, &grid)?;
            let mut ws = FieldWorkspace::new(&model.cov, &grid)?;
            let sims = model.simulate(&mut ws, &mut rng)?;

            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut marks = Vec::new();
            for (k, sim) in sims.iter().enumerate() {
                xs.extend_from_slice(sim.pattern.xs());
                ys.extend_from_slice(sim.pattern.ys());
                marks.extend(std::iter::repeat((k + 1) as u32).take(sim.pattern.n()));
            }
            let pattern = PointPattern::new(*grid.window(), xs, ys)?
                .with_marks(marks, sims.len())?;
            write_pattern(&out, &pattern, &mut manifest)?;
            for (k, sim) in sims.iter().enumerate() {
                write_truth(&out, &grid, &format!("true_s_type{}", k + 1), &sim.s_obs, &mut manifest)?;
                write_truth(
                    &out,
                    &grid,
                    &format!("true_intensity_type{}", k + 1),
                    &sim.intensity,
                    &mut manifest,
                )?;
            }
            println!(
                "simulate: {} points of {} types over a {} x {} grid",
                pattern.n(),
                sims.len(),
                grid.nx(),
                grid.ny()
            );
        }
        ModelKind::Spacetime => {
            let cov = covariance_from_config(cfg)?;
            let rho = cfg.require_f64("model.rho")?;
            let steps = cfg.require_usize("model.steps")?;
            let offset = offset_from_config(cfg, &grid, &mut manifest)?;
            let beta = beta_from_config(cfg)?.unwrap_or_else(|| vec![0.0]);
            if beta.len() != 1 {
                bail!("space-time models take a single `model.beta0` intercept");
            }
            let lambda0: Vec<f64> = offset.iter().map(|&d| d * beta[0].exp()).collect();
            let mu0 = match cfg.f64_list_opt("model.mu0")? {
                None => vec![1.0; steps],
                Some(v) if v.len() == steps => v,
                Some(v) => bail!(
                    "config key `model.mu0` lists {} values for {steps} steps",
                    v.len()
                ),
            };
            let st_cov = SeparableStCovariance::new(cov, rho)?;
            let model = StModel::new(st_cov, lambda0.clone(), mu0.clone(), &grid)?;
            let mut ws = FieldWorkspace::new(&model.cov.spatial, &grid)?;
            let sim = model.simulate(&mut ws, &mut rng)?;

            write_pattern(&out, &sim.pattern, &mut manifest)?;
            for (t, s_obs) in sim.fields_obs.iter().enumerate() {
                write_truth(&out, &grid, &format!("true_s_t{}", t + 1), s_obs, &mut manifest)?;
                let intensity: Vec<f64> = s_obs
                    .iter()
                    .zip(&lambda0)
                    .map(|(&s, &l0)| l0 * mu0[t] * s.exp())
                    .collect();
                write_truth(
                    &out,
                    &grid,
                    &format!("true_intensity_t{}", t + 1),
                    &intensity,
                    &mut manifest,
                )?;
            }
            println!(
                "simulate: {} points over {} time steps on a {} x {} grid",
                sim.pattern.n(),
                steps,
                grid.nx(),
                grid.ny()
            );
        }
    }

    let path = manifest.write(&out)?;
    println!("simulate: wrote {}", path.display());
    Ok(())
}

fn write_pattern(out: &Path, pattern: &PointPattern, manifest: &mut RunManifest) -> Result<()> {
    let path = out.join("pattern.csv");
    io::write_pattern_csv(&path, pattern)?;
    manifest.add_output(&path)?;
    Ok(())
}

fn write_truth(
    out: &Path,
    grid: &GridSpec,
    stem: &str,
    values: &[f64],
    manifest: &mut RunManifest,
) -> Result<()> {
    let raster = Raster::over_grid(grid, values.to_vec())?;
    let path = setup::write_surface(out, stem, &raster)?;
    manifest.add_output(&path)?;
    Ok(())
}

/// Reads the region map raster: integer region labels per cell, with 0 or
/// nodata marking cells outside every region.
pub fn read_region_map(
    path: &Path,
    grid: &GridSpec,
    manifest: &mut RunManifest,
) -> Result<Vec<u32>> {
    let raster = read_raster_on_grid(path, grid)
        .with_context(|| format!("region map {}", path.display()))?;
    manifest.add_input(path)?;
    let nodata = raster.nodata();
    raster
        .values()
        .iter()
        .map(|&v| {
            if v == nodata {
                return Ok(0u32);
            }
            let r = v.round();
            if (v - r).abs() > 1e-6 || !(0.0..=u32::MAX as f64).contains(&r) {
                bail!("{}: region labels must be small nonnegative integers, got {v}", path.display());
            }
            Ok(r as u32)
        })
        .collect()
}

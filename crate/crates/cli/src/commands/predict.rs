//! `lgcp predict`: turn a stored chain into summary rasters.
//!
//! Single-field chains yield percentile and exceedance surfaces of a chosen
//! functional of the draws; aggregated fits additionally get the standard
//! risk report. Multitype chains yield conditional type probability surfaces
//! and, on request, segregation sets.

use std::path::Path;

use anyhow::{anyhow, bail, Result};

use lgcp::io;
use lgcp::predict::{
    aggregated_risk_report, exceedance_probability, percentile_surface, segregation_sets,
    type_probability_surfaces, Direction, Functional, MultitypePrediction, PredictionContext,
    RISK_THRESHOLD,
};

use crate::config::Config;
use crate::manifest::RunManifest;
use crate::setup::{
    covariates_from_config, grid_from_config, level_tag, model_kind, offset_from_config,
    write_surface, ModelKind,
};

use super::{prepare_output_dir, write_csv_table};

pub fn run(cfg: &Config, chain: &Path, s_samples: &Path) -> Result<()> {
    let out = prepare_output_dir(cfg)?;
    let grid = grid_from_config(cfg)?;
    let kind = model_kind(cfg)?;
    let mut manifest = RunManifest::new("predict", cfg, None);
    manifest.add_input(chain)?;
    manifest.add_input(s_samples)?;

    match kind {
        ModelKind::Spacetime => bail!(
            "`predict` reads spatial chains; summarize space-time simulations with the library"
        ),
        ModelKind::Multitype => {
            let table = io::read_chain_csv(chain)?;
            let m = table.beta.first().map_or(0, Vec::len);
            if m < 2 {
                bail!("{}: a multitype chain needs at least two intercepts", chain.display());
            }
            let samples = io::read_posterior(chain, s_samples, m)?;
            let mp = MultitypePrediction::new(&grid, &samples)?;

            for (k, surface) in type_probability_surfaces(&mp)?.iter().enumerate() {
                let path = write_surface(&out, &format!("type_prob_{}", k + 1), surface)?;
                manifest.add_output(&path)?;
            }
            println!("predict: wrote {} type probability surfaces from {} draws", m, samples.n_retained());

            if let Some(c) = cfg.f64_opt("predict.segregation_c")? {
                let q_list = cfg
                    .f64_list_opt("predict.segregation_q")?
                    .unwrap_or_else(|| vec![0.6, 0.7, 0.8, 0.9]);
                let sets = segregation_sets(&mp, c, &q_list)?;
                let mut rows = Vec::new();
                for per_type in &sets {
                    for set in per_type {
                        for &cell in &set.cells {
                            rows.push(vec![
                                format!("{}", set.type_index + 1),
                                format!("{}", set.dominance),
                                format!("{}", set.confidence),
                                format!("{}", cell % grid.nx()),
                                format!("{}", cell / grid.nx()),
                            ]);
                        }
                    }
                }
                let path = out.join("segregation.csv");
                write_csv_table(&path, "type,c,q,ix,iy", &rows)?;
                manifest.add_output(&path)?;
                println!("predict: wrote segregation sets for c = {c} at q = {q_list:?}");
            }
        }
        ModelKind::Unitype | ModelKind::Aggregated => {
            let samples = io::read_posterior(chain, s_samples, 1)?;
            let offset = offset_from_config(cfg, &grid, &mut manifest)?;
            let (names, covariates) = covariates_from_config(cfg, &grid, &mut manifest)?;
            let ctx = PredictionContext::new(&grid, &offset, &covariates, &samples)?;
            let functional = parse_functional(cfg)?;
            let direction = parse_direction(cfg)?;

            let percentiles = cfg.f64_list_opt("predict.percentiles")?;
            let exceed = cfg.f64_list_opt("predict.exceed")?;
            // With nothing requested, produce the median surface.
            let percentiles = match (&percentiles, &exceed) {
                (None, None) => vec![0.5],
                _ => percentiles.unwrap_or_default(),
            };
            for &p in &percentiles {
                let raster = percentile_surface(&ctx, functional, p)?;
                let path =
                    write_surface(&out, &format!("percentile_{}", level_tag(p * 100.0)), &raster)?;
                manifest.add_output(&path)?;
            }
            for &t in exceed.as_deref().unwrap_or(&[]) {
                let raster = exceedance_probability(&ctx, functional, t, direction)?;
                let path = write_surface(&out, &format!("exceed_{}", level_tag(t)), &raster)?;
                manifest.add_output(&path)?;
            }
            println!(
                "predict: {} draws, {} percentile and {} exceedance surfaces",
                samples.n_retained(),
                percentiles.len(),
                exceed.as_ref().map_or(0, Vec::len)
            );

            if kind == ModelKind::Aggregated {
                let report = aggregated_risk_report(&ctx, &names)?;
                for (stem, raster) in [
                    ("rr_mean".to_string(), &report.relative_risk),
                    ("rr_log_variance".to_string(), &report.log_variance),
                    (format!("rr_exceed_{}", level_tag(RISK_THRESHOLD)), &report.exceedance),
                ] {
                    let path = write_surface(&out, &stem, raster)?;
                    manifest.add_output(&path)?;
                }
                let rows: Vec<Vec<String>> = report
                    .effects
                    .iter()
                    .map(|e| {
                        vec![
                            e.name.clone(),
                            format!("{}", e.lower),
                            format!("{}", e.median),
                            format!("{}", e.upper),
                        ]
                    })
                    .collect();
                let path = out.join("effects.csv");
                write_csv_table(&path, "name,lower,median,upper", &rows)?;
                manifest.add_output(&path)?;
                println!("predict: wrote the aggregated risk report ({} covariate effects)", rows.len());
            }
        }
    }

    let path = manifest.write(&out)?;
    println!("predict: wrote {}", path.display());
    Ok(())
}

fn parse_functional(cfg: &Config) -> Result<Functional> {
    match cfg.get("predict.functional").unwrap_or("exp_s") {
        "intensity" => Ok(Functional::Intensity),
        "exp_s" => Ok(Functional::ExpS),
        "relative_risk" => Ok(Functional::RelativeRisk),
        other => Err(anyhow!(
            "config key `predict.functional`: `{other}` is not one of intensity, exp_s, relative_risk"
        )),
    }
}

fn parse_direction(cfg: &Config) -> Result<Direction> {
    match cfg.get("predict.direction").unwrap_or("above") {
        "above" => Ok(Direction::Above),
        "below" => Ok(Direction::Below),
        other => {
            Err(anyhow!("config key `predict.direction`: `{other}` is not one of above, below"))
        }
    }
}

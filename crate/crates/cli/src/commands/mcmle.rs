//! `lgcp mcmle`: simulated-draw Monte Carlo maximum likelihood around an
//! anchor parameter.

use std::path::Path;

use anyhow::{bail, Context, Result};

use lgcp::grid::bin_points;
use lgcp::io;
use lgcp::mclik::{build_plan, mc_mle, PlanConfig, SearchBox, ThetaPoint};
use lgcp::mcmc::initial_intercept;

use crate::config::Config;
use crate::manifest::RunManifest;
use crate::setup::{covariates_from_config, family_from_config, grid_from_config, offset_from_config};

use super::{mean, prepare_output_dir, require_seed, write_csv_table};

pub fn run(cfg: &Config, input: &Path) -> Result<()> {
    let out = prepare_output_dir(cfg)?;
    let seed = require_seed(cfg)?;
    let grid = grid_from_config(cfg)?;
    let family = family_from_config(cfg)?;
    let mut manifest = RunManifest::new("mcmle", cfg, Some(seed));

    let pattern = io::read_pattern_csv(input, *grid.window())
        .with_context(|| format!("pattern {}", input.display()))?;
    manifest.add_input(input)?;
    let counts: Vec<f64> = bin_points(&pattern, &grid)?.iter().map(|&c| c as f64).collect();
    let offset = offset_from_config(cfg, &grid, &mut manifest)?;
    let (_, covariates) = covariates_from_config(cfg, &grid, &mut manifest)?;
    let p = 1 + covariates.len();

    let theta0 = match cfg.f64_list_opt("mcmle.theta0")? {
        Some(parts) => {
            if parts.len() != p + 2 {
                bail!(
                    "`mcmle.theta0` needs {} values (beta..., sigma, phi), got {}",
                    p + 2,
                    parts.len()
                );
            }
            let sigma = parts[p];
            let phi = parts[p + 1];
            if sigma < 0.0 {
                bail!("`mcmle.theta0`: sigma must be nonnegative");
            }
            ThetaPoint { beta: parts[..p].to_vec(), sigma2: sigma * sigma, phi }
        }
        None => {
            let cov = super::fit::initial_covariance(cfg, family, Some(&pattern), &grid)?;
            let total: f64 = counts.iter().sum();
            let b0 = initial_intercept(total, grid.window().area(), mean(&offset))?;
            let mut beta = vec![0.0; p];
            beta[0] = b0;
            ThetaPoint { beta, sigma2: cov.sigma2, phi: cov.phi }
        }
    };

    let plan_cfg = PlanConfig {
        s: cfg.usize_or("mcmle.sims", 1000)?,
        burnin: cfg.usize_or("mcmle.burnin", 1000)?,
        ..PlanConfig::default()
    };
    let mut rng = manifest.stream("mclik");
    let mut plan = build_plan(
        family,
        theta0.clone(),
        covariates,
        offset,
        &grid,
        &counts,
        &plan_cfg,
        &mut rng,
    )?;
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }

    let result = mc_mle(&mut plan, &counts, &SearchBox::default())?;
    let sigma_hat = result.theta.sigma2.sqrt();

    let mut header: Vec<String> = (0..p).map(|j| format!("beta{j}")).collect();
    header.extend(
        ["sigma", "phi", "loglik_gain", "ess_conditional", "ess_joint", "at_boundary", "unreliable"]
            .map(String::from),
    );
    let mut row: Vec<String> = result.theta.beta.iter().map(|b| format!("{b}")).collect();
    row.push(format!("{sigma_hat}"));
    row.push(format!("{}", result.theta.phi));
    row.push(format!("{}", result.value));
    row.push(format!("{}", result.ess_conditional));
    row.push(format!("{}", result.ess_joint));
    row.push(format!("{}", result.at_boundary));
    row.push(format!("{}", result.unreliable));
    let table_path = out.join("mcmle.csv");
    write_csv_table(&table_path, &header.join(","), &[row])?;
    manifest.add_output(&table_path)?;

    println!(
        "mcmle: beta {:?}, sigma = {sigma_hat:.6}, phi = {:.6}, log-likelihood gain {:.4}",
        result.theta.beta, result.theta.phi, result.value
    );
    println!(
        "mcmle: effective sample sizes {:.1} (conditional) / {:.1} (joint), thinning {}",
        result.ess_conditional, result.ess_joint, plan.thin_used
    );
    if result.at_boundary {
        eprintln!("warning: the search stopped at the box boundary; re-anchor at this estimate and rerun");
    }
    if result.unreliable {
        eprintln!("warning: importance weights collapsed; increase `mcmle.sims` or move the anchor");
    }

    let path = manifest.write(&out)?;
    println!("mcmle: wrote {}", path.display());
    Ok(())
}

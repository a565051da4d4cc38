//! Command line front end for the lgcp library.
//!
//! Every run is driven by a flat config file plus a handful of flags that
//! override individual keys. Commands that write artifacts also write a
//! `manifest.json` recording the config snapshot, the derived seed of every
//! random stream, and SHA-256 digests of all inputs and outputs.
//!
//! Exit codes: 0 on success, 2 for invalid inputs (bad config, unreadable or
//! malformed files, too little data), 3 for numerical failures (overflow,
//! embedding or optimization failure, a chain that broke down).

mod commands;
mod config;
mod manifest;
mod setup;
mod streams;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use lgcp::LgcpError;

use config::Config;

#[derive(Parser)]
#[command(
    name = "lgcp",
    version,
    about = "Log-Gaussian Cox process simulation and inference on regular grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one realization of the configured model
    Simulate {
        /// Run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Master seed (overrides `run.seed`)
        #[arg(long)]
        seed: Option<u64>,
        /// Where artifacts go (overrides `run.output_dir`)
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Estimate the K function and fit covariance parameters to it
    Kfit {
        #[arg(long)]
        config: PathBuf,
        /// Point pattern CSV
        #[arg(long)]
        input: PathBuf,
        /// Upper bound of the fitting range (overrides `kfit.u0`)
        #[arg(long)]
        u0: Option<f64>,
        /// Contrast exponent (overrides `kfit.c`)
        #[arg(long)]
        c: Option<f64>,
        /// Number of distance bins (overrides `kfit.bins`)
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Sample the posterior of the configured model by MCMC
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Point pattern CSV, or region counts CSV for aggregated models
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of chains (overrides `mcmc.chains`)
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Monte Carlo maximum likelihood around an anchor parameter
    Mcmle {
        #[arg(long)]
        config: PathBuf,
        /// Point pattern CSV
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Anchor as `beta...,sigma,phi` (overrides `mcmle.theta0`)
        #[arg(long)]
        theta0: Option<String>,
        /// Simulations per side (overrides `mcmle.sims`)
        #[arg(long)]
        sims: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Posterior summary rasters from a stored chain
    Predict {
        #[arg(long)]
        config: PathBuf,
        /// Chain CSV from a fit run
        #[arg(long)]
        chain: PathBuf,
        /// Matching latent-field samples CSV
        #[arg(long)]
        s_samples: PathBuf,
        /// Comma-separated quantile levels in (0, 1] (overrides `predict.percentiles`)
        #[arg(long)]
        percentile: Option<String>,
        /// Comma-separated thresholds (overrides `predict.exceed`)
        #[arg(long)]
        exceed: Option<String>,
        /// intensity, exp_s, or relative_risk (overrides `predict.functional`)
        #[arg(long)]
        functional: Option<String>,
        /// above or below (overrides `predict.direction`)
        #[arg(long)]
        direction: Option<String>,
        /// Dominance threshold for segregation sets (overrides `predict.segregation_c`)
        #[arg(long)]
        segregation_c: Option<f64>,
        /// Comma-separated confidence levels (overrides `predict.segregation_q`)
        #[arg(long)]
        segregation_q: Option<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Summary statistics and autocorrelations of a stored chain
    Diagnose {
        /// Chain CSV from a fit run
        #[arg(long)]
        chain: PathBuf,
        /// Also write the report to this file
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { config, seed, output_dir } => {
            let mut cfg = Config::load(&config)?;
            override_seed(&mut cfg, seed);
            override_dir(&mut cfg, output_dir);
            commands::simulate::run(&cfg)
        }
        Command::Kfit { config, input, u0, c, bins, output_dir } => {
            let mut cfg = Config::load(&config)?;
            override_dir(&mut cfg, output_dir);
            if let Some(v) = u0 {
                cfg.set("kfit.u0", v.to_string());
            }
            if let Some(v) = c {
                cfg.set("kfit.c", v.to_string());
            }
            if let Some(v) = bins {
                cfg.set("kfit.bins", v.to_string());
            }
            commands::kfit::run(&cfg, &input)
        }
        Command::Fit { config, input, seed, chains, output_dir } => {
            let mut cfg = Config::load(&config)?;
            override_seed(&mut cfg, seed);
            override_dir(&mut cfg, output_dir);
            if let Some(v) = chains {
                cfg.set("mcmc.chains", v.to_string());
            }
            commands::fit::run(&cfg, &input)
        }
        Command::Mcmle { config, input, seed, theta0, sims, output_dir } => {
            let mut cfg = Config::load(&config)?;
            override_seed(&mut cfg, seed);
            override_dir(&mut cfg, output_dir);
            if let Some(v) = theta0 {
                cfg.set("mcmle.theta0", v);
            }
            if let Some(v) = sims {
                cfg.set("mcmle.sims", v.to_string());
            }
            commands::mcmle::run(&cfg, &input)
        }
        Command::Predict {
            config,
            chain,
            s_samples,
            percentile,
            exceed,
            functional,
            direction,
            segregation_c,
            segregation_q,
            output_dir,
        } => {
            let mut cfg = Config::load(&config)?;
            override_dir(&mut cfg, output_dir);
            if let Some(v) = percentile {
                cfg.set("predict.percentiles", v);
            }
            if let Some(v) = exceed {
                cfg.set("predict.exceed", v);
            }
            if let Some(v) = functional {
                cfg.set("predict.functional", v);
            }
            if let Some(v) = direction {
                cfg.set("predict.direction", v);
            }
            if let Some(v) = segregation_c {
                cfg.set("predict.segregation_c", v.to_string());
            }
            if let Some(v) = segregation_q {
                cfg.set("predict.segregation_q", v);
            }
            commands::predict::run(&cfg, &chain, &s_samples)
        }
        Command::Diagnose { chain, output } => commands::diagnose::run(&chain, output.as_deref()),
    }
}

fn override_seed(cfg: &mut Config, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.set("run.seed", s.to_string());
    }
}

fn override_dir(cfg: &mut Config, dir: Option<PathBuf>) {
    if let Some(d) = dir {
        cfg.set("run.output_dir", d.display().to_string());
    }
}

/// 2 for problems in the inputs, 3 for numerical failures at run time.
fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(le) = cause.downcast_ref::<LgcpError>() {
            return match le {
                LgcpError::NumericalOverflow { .. }
                | LgcpError::EmbeddingFailure { .. }
                | LgcpError::OptimizationFailure(_)
                | LgcpError::DegenerateRegion { .. }
                | LgcpError::ChainFailure { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

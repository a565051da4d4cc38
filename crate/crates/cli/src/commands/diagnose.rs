//! `lgcp diagnose`: summary statistics and autocorrelations of a stored
//! chain. Reads only the chain CSV; acceptance histories live in the fit
//! run's diagnostics, not in the chain file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use lgcp::io;
use lgcp::mcmc::{diagnostics, PosteriorSamples};

use super::{mean, standard_deviation};

pub fn run(chain: &Path, output: Option<&Path>) -> Result<()> {
    let table = io::read_chain_csv(chain)?;
    let samples = PosteriorSamples {
        n_fields: 1,
        n_obs_cells: 0,
        burnin: 0,
        thin: 1,
        iterations: table.iterations,
        log_posterior: table.log_posterior,
        beta: table.beta,
        sigma: table.sigma,
        phi: table.phi,
        s_obs: Vec::new(),
        gamma: None,
        accept_probs: Vec::new(),
        accepted: Vec::new(),
        final_step: 0.0,
    };

    let mut text = format!("chain file: {}\n", chain.display());
    let _ = writeln!(text, "retained draws: {}", samples.n_retained());
    let p = samples.beta.first().map_or(0, Vec::len);
    let _ = writeln!(text, "parameters: {p} beta, sigma, phi");

    let mut series: Vec<(String, Vec<f64>)> = (0..p)
        .map(|j| (format!("beta{j}"), samples.beta.iter().map(|b| b[j]).collect()))
        .collect();
    series.push(("sigma".into(), samples.sigma.clone()));
    series.push(("phi".into(), samples.phi.clone()));
    series.push(("log posterior".into(), samples.log_posterior.clone()));
    for (name, values) in &series {
        let _ = writeln!(
            text,
            "{name}: mean {:.6}, sd {:.6}",
            mean(values),
            standard_deviation(values)
        );
    }

    match diagnostics(&samples) {
        Ok(d) => {
            for acf in &d.autocorrelations {
                let lag1 = acf.lag.first().copied().unwrap_or(0.0);
                let lag10 = acf.lag.get(9).copied().unwrap_or(0.0);
                let note = if acf.degenerate {
                    " (constant series)"
                } else if acf.flagged {
                    " (slow mixing)"
                } else {
                    ""
                };
                let _ = writeln!(
                    text,
                    "{}: lag-1 acf {lag1:.4}, lag-10 acf {lag10:.4}{note}",
                    acf.name
                );
            }
            for w in &d.warnings {
                let _ = writeln!(text, "warning: {w}");
            }
        }
        Err(e) => {
            let _ = writeln!(text, "autocorrelations unavailable: {e}");
        }
    }

    print!("{text}");
    if let Some(path) = output {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
        println!("diagnose: wrote {}", path.display());
    }
    Ok(())
}

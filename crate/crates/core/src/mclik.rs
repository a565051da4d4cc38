//! Monte Carlo likelihood approximation and Monte Carlo maximum likelihood.
//!
//! The observed-data likelihood of a latent-field model has no closed form,
//! but likelihood *ratios* against a fixed reference parameter can be
//! estimated by importance sampling. With `r(X, S; theta, theta0)` the ratio
//! of complete-data densities, the estimator is
//!
//! ```text
//! Lhat(theta) = log{ s^-1 sum_j r(X, S_j; theta, theta0) }
//!             - log{ s^-1 sum_j r(X_j, S_j; theta, theta0) }
//! ```
//!
//! where the first sum runs over draws of the field conditional on the data
//! at `theta0` and the second over joint simulations `(X_j, S_j)` at
//! `theta0`. Both averages equal one at `theta = theta0`, so `Lhat(theta0)`
//! is exactly zero, and the approximation degrades as `theta` moves away from
//! the anchor; re-anchoring at an interim estimate restores accuracy.
//!
//! The complete data here is the latent field on the full extended lattice
//! together with the cell counts. Evaluating a stored field under many
//! covariance parameters only needs its power spectrum, which each plan
//! caches per draw; one spectrum rebuild per candidate parameter then prices
//! every draw at a linear scan.

use crate::covariance::{CorrelationFamily, CovarianceModel};
use crate::error::{LgcpError, Result};
use crate::field::{FieldWorkspace, LatentField, WhitenedField};
use crate::grid::GridSpec;
use crate::mcmc::{run_chain, ChainInit, SamplerConfig, UnitypeTarget};
use crate::models::{sample_poisson, UnitypeModel, MAX_EXP_ARG};
use crate::optim::nelder_mead;
use rand::Rng;

/// A point in the parameter space: regression coefficients plus the field
/// variance and correlation range.
#[derive(Clone, Debug)]
pub struct ThetaPoint {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub phi: f64,
}

impl ThetaPoint {
    fn cov(&self, family: CorrelationFamily) -> Result<CovarianceModel> {
        CovarianceModel::with_family(family, self.sigma2, self.phi)
    }
}

/// Controls for building a simulation plan.
#[derive(Clone, Debug)]
pub struct PlanConfig {
    /// Simulations per side.
    pub s: usize,
    /// Burn-in of the conditional chain.
    pub burnin: usize,
    /// Lag-1 autocorrelation the thinned conditional draws must reach.
    pub acf_target: f64,
    /// Upper bound for the thinning search.
    pub max_thin: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { s: 1000, burnin: 1000, acf_target: 0.1, max_thin: 128 }
    }
}

/// Reference-parameter simulations backing the likelihood estimator: field
/// draws conditional on the data plus joint draws of counts and fields, all
/// at the anchor `theta0`.
pub struct McLikelihoodPlan {
    family: CorrelationFamily,
    theta0: ThetaPoint,
    grid: GridSpec,
    covariates: Vec<Vec<f64>>,
    ln_base: Vec<f64>,
    ws: FieldWorkspace,
    cond_power: Vec<Vec<f64>>,
    cond_dc: Vec<f64>,
    cond_s_obs: Vec<Vec<f64>>,
    joint_power: Vec<Vec<f64>>,
    joint_dc: Vec<f64>,
    joint_s_obs: Vec<Vec<f64>>,
    joint_counts: Vec<Vec<f64>>,
    /// Thinning interval the conditional chain settled on.
    pub thin_used: usize,
    /// Lag-1 autocorrelation of the complete-data log density across the
    /// retained conditional draws.
    pub cond_lag1: f64,
    pub warnings: Vec<String>,
}

/// Estimated log-likelihood ratio against the plan's anchor, with the
/// effective sample sizes of both weight sets.
#[derive(Clone, Debug)]
pub struct McLoglik {
    pub value: f64,
    pub ess_conditional: f64,
    pub ess_joint: f64,
    /// Either weight set collapsed onto fewer than five draws.
    pub unreliable: bool,
}

/// Search region for the Monte Carlo MLE, as half-widths around the anchor.
#[derive(Clone, Copy, Debug)]
pub struct SearchBox {
    pub beta: f64,
    pub log_sigma: f64,
    pub log_phi: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        // Two prior standard deviations under the default sampling priors.
        let t = 2.0 * 0.15f64.sqrt();
        SearchBox { beta: 2000.0, log_sigma: t, log_phi: t }
    }
}

/// Monte Carlo maximum likelihood estimate and its diagnostics.
#[derive(Clone, Debug)]
pub struct McMle {
    pub theta: ThetaPoint,
    /// Estimated log-likelihood gain over the anchor.
    pub value: f64,
    pub ess_conditional: f64,
    pub ess_joint: f64,
    /// The optimizer stopped against the search box; re-anchor and rerun.
    pub at_boundary: bool,
    pub unreliable: bool,
}

fn lag1_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var <= 1e-300 * n as f64 {
        return 0.0;
    }
    let cov: f64 = (0..n - 1)
        .map(|t| (series[t] - mean) * (series[t + 1] - mean))
        .sum();
    cov / var
}

/// Log-mean-exp and effective sample size of a weight set given as logs.
/// The reduction sorts before summing, so any permutation of the draws
/// produces bit-identical results. Non-finite logs count as zero weight.
fn reduce_weights(logs: &[f64]) -> (f64, f64) {
    let max = logs
        .iter()
        .map(|&l| if l.is_nan() { f64::NEG_INFINITY } else { l })
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (f64::NEG_INFINITY, 0.0);
    }
    let mut shifted: Vec<f64> = logs
        .iter()
        .map(|&l| if l.is_nan() { f64::NEG_INFINITY } else { l - max })
        .collect();
    shifted.sort_by(|a, b| a.partial_cmp(b).expect("NaN was filtered"));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &d in &shifted {
        let w = d.exp();
        sum += w;
        sum_sq += w * w;
    }
    let lme = max + (sum / logs.len() as f64).ln();
    let ess = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
    (lme, ess)
}

/// Builds a plan at the anchor `theta0`: conditional field draws from a
/// field-only chain thinned until the complete-data log density decorrelates,
/// plus joint forward simulations. A zero anchor variance makes the field
/// degenerate at its mean, so the conditional side needs no chain at all.
#[allow(clippy::too_many_arguments)]
pub fn build_plan(
    family: CorrelationFamily,
    theta0: ThetaPoint,
    covariates: Vec<Vec<f64>>,
    offset: Vec<f64>,
    grid: &GridSpec,
    counts: &[f64],
    config: &PlanConfig,
    rng: &mut impl Rng,
) -> Result<McLikelihoodPlan> {
    if config.s < 1 {
        return Err(LgcpError::invalid("at least one simulation per side required"));
    }
    if counts.len() != grid.n_cells() {
        return Err(LgcpError::invalid("one count per observation cell required"));
    }
    let cov0 = theta0.cov(family)?;
    let model0 = UnitypeModel::new(
        theta0.beta.clone(),
        covariates.clone(),
        offset.clone(),
        cov0,
        grid,
    )?;
    let mut ws = FieldWorkspace::new(&cov0, grid)?;
    let n = grid.n_cells();
    let area = grid.cell_area();
    let ln_base: Vec<f64> = offset.iter().map(|&d| (area * d).ln()).collect();
    let s = config.s;
    let mut warnings = Vec::new();

    // Conditional side.
    let mut cond_power = Vec::with_capacity(s);
    let mut cond_dc = Vec::with_capacity(s);
    let mut cond_s_obs = Vec::with_capacity(s);
    let mut thin_used = 1;
    let mut cond_lag1 = 0.0;
    if theta0.sigma2 == 0.0 {
        cond_s_obs = vec![vec![0.0; n]; s];
    } else {
        let mut thin = 1;
        let gammas = loop {
            let mut target =
                UnitypeTarget::new(model0.clone(), grid, counts.to_vec(), None)?;
            let chain_config = SamplerConfig {
                burnin: config.burnin,
                n_iterations: s * thin,
                thin,
                fixed_theta: Some((theta0.sigma2, theta0.phi)),
                fixed_beta: true,
                retain_gamma: true,
                ..SamplerConfig::default()
            };
            let init =
                ChainInit { beta: theta0.beta.clone(), sigma2: theta0.sigma2, phi: theta0.phi };
            let samples = run_chain(&mut target, &chain_config, &init, rng)?;
            cond_lag1 = lag1_autocorrelation(&samples.log_posterior);
            thin_used = thin;
            if cond_lag1 < config.acf_target || thin * 2 > config.max_thin {
                if cond_lag1 >= config.acf_target {
                    warnings.push(format!(
                        "conditional draws keep lag-1 autocorrelation {cond_lag1:.3} at the \
                         thinning cap {thin}; treat the likelihood surface as approximate"
                    ));
                }
                break samples.gamma.expect("retained whitened draws");
            }
            thin *= 2;
        };
        let mut xhat = Vec::new();
        for g in &gammas {
            let field = ws.field_from_gamma(&WhitenedField(g.clone()));
            let mut s_obs = Vec::new();
            field.gather_obs(grid, &mut s_obs);
            ws.forward_transform(&field.0, &mut xhat);
            cond_power.push(xhat.iter().map(|c| c.norm_sqr()).collect());
            cond_dc.push(xhat[0].re);
            cond_s_obs.push(s_obs);
        }
    }

    // Joint side.
    let mut joint_power = Vec::with_capacity(s);
    let mut joint_dc = Vec::with_capacity(s);
    let mut joint_s_obs = Vec::with_capacity(s);
    let mut joint_counts = Vec::with_capacity(s);
    let mut xhat = Vec::new();
    for _ in 0..s {
        let field = ws.sample_field(rng);
        let mut s_obs = Vec::new();
        field.gather_obs(grid, &mut s_obs);
        let mut counts_j = vec![0.0; n];
        for k in 0..n {
            let eta = model0.linear_predictor(k) + s_obs[k];
            if eta > MAX_EXP_ARG {
                return Err(LgcpError::NumericalOverflow { max_linear_predictor: eta });
            }
            let mu = area * offset[k] * eta.exp();
            counts_j[k] = sample_poisson(mu, rng)? as f64;
        }
        if theta0.sigma2 > 0.0 {
            ws.forward_transform(&field.0, &mut xhat);
            joint_power.push(xhat.iter().map(|c| c.norm_sqr()).collect());
            joint_dc.push(xhat[0].re);
        }
        joint_s_obs.push(s_obs);
        joint_counts.push(counts_j);
    }

    Ok(McLikelihoodPlan {
        family,
        theta0,
        grid: grid.clone(),
        covariates,
        ln_base,
        ws,
        cond_power,
        cond_dc,
        cond_s_obs,
        joint_power,
        joint_dc,
        joint_s_obs,
        joint_counts,
        thin_used,
        cond_lag1,
        warnings,
    })
}

impl McLikelihoodPlan {
    pub fn theta0(&self) -> &ThetaPoint {
        &self.theta0
    }

    pub fn n_draws(&self) -> usize {
        self.cond_s_obs.len()
    }

    /// Poisson complete-data term `sum_k y_k log mu_k - mu_k` (count
    /// factorials omitted; they cancel in every ratio). Saturates to negative
    /// infinity when the intensity overflows or a zero-mean cell holds a
    /// positive count, so impossible parameters get zero weight rather than
    /// an error.
    fn poisson_part(&self, beta: &[f64], s_obs: &[f64], counts: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..counts.len() {
            let y = counts[k];
            if self.ln_base[k] == f64::NEG_INFINITY {
                if y > 0.0 {
                    return f64::NEG_INFINITY;
                }
                continue;
            }
            let mut zb = beta[0];
            for (c, col) in self.covariates.iter().enumerate() {
                zb += beta[c + 1] * col[k];
            }
            let log_mu = self.ln_base[k] + zb + s_obs[k];
            if log_mu > MAX_EXP_ARG {
                return f64::NEG_INFINITY;
            }
            total += y * log_mu - log_mu.exp();
        }
        total
    }

    /// Gaussian complete-data term for every stored draw on one side, under
    /// the covariance `cov`.
    fn gaussian_parts(
        &mut self,
        cov: &CovarianceModel,
        conditional: bool,
    ) -> Result<Vec<f64>> {
        self.ws.set_model(cov)?;
        let (power, dc) = if conditional {
            (&self.cond_power, &self.cond_dc)
        } else {
            (&self.joint_power, &self.joint_dc)
        };
        let mean = -0.5 * cov.sigma2;
        power
            .iter()
            .zip(dc)
            .map(|(p, &d)| self.ws.log_density_power(p, d, mean))
            .collect()
    }

    #[cfg(test)]
    fn reverse_draws(&mut self) {
        self.cond_power.reverse();
        self.cond_dc.reverse();
        self.cond_s_obs.reverse();
        self.joint_power.reverse();
        self.joint_dc.reverse();
        self.joint_s_obs.reverse();
        self.joint_counts.reverse();
    }
}

/// Log ratio of complete-data densities `log f(X, S; theta) - log f(X, S;
/// theta0)` for one field on the extended lattice. Both terms come from the
/// same code path, so the ratio vanishes identically at `theta = theta0`.
pub fn log_ratio_r(
    base: &UnitypeModel,
    ws: &mut FieldWorkspace,
    counts: &[f64],
    field: &LatentField,
    theta: &ThetaPoint,
    theta0: &ThetaPoint,
) -> Result<f64> {
    if (theta.sigma2 == 0.0) != (theta0.sigma2 == 0.0) {
        return Err(LgcpError::invalid(
            "cannot compare a degenerate field (sigma = 0) against a stochastic one",
        ));
    }
    let grid = ws.grid().clone();
    if counts.len() != grid.n_cells() {
        return Err(LgcpError::invalid("one count per observation cell required"));
    }
    let mut s_obs = Vec::new();
    field.gather_obs(&grid, &mut s_obs);
    let area = grid.cell_area();
    let pois = |beta: &[f64]| -> f64 {
        let mut total = 0.0;
        for k in 0..counts.len() {
            let b = area * base.offset[k];
            if b == 0.0 {
                if counts[k] > 0.0 {
                    return f64::NEG_INFINITY;
                }
                continue;
            }
            let mut zb = beta[0];
            for (c, col) in base.covariates.iter().enumerate() {
                zb += beta[c + 1] * col[k];
            }
            let log_mu = b.ln() + zb + s_obs[k];
            if log_mu > MAX_EXP_ARG {
                return f64::NEG_INFINITY;
            }
            total += counts[k] * log_mu - log_mu.exp();
        }
        total
    };
    let mut log_r = pois(&theta.beta) - pois(&theta0.beta);
    if theta.sigma2 > 0.0 {
        ws.set_model(&theta.cov(base.cov.family)?)?;
        let g1 = ws.log_density(field)?;
        ws.set_model(&theta0.cov(base.cov.family)?)?;
        let g0 = ws.log_density(field)?;
        log_r += g1 - g0;
    }
    Ok(log_r)
}

/// Estimated log-likelihood ratio `Lhat(theta)` against the plan's anchor.
pub fn mc_loglik(
    plan: &mut McLikelihoodPlan,
    counts: &[f64],
    theta: &ThetaPoint,
) -> Result<McLoglik> {
    if theta.beta.len() != plan.theta0.beta.len() {
        return Err(LgcpError::invalid("coefficient dimension differs from the anchor"));
    }
    if counts.len() != plan.grid.n_cells() {
        return Err(LgcpError::invalid("one count per observation cell required"));
    }
    if (theta.sigma2 == 0.0) != (plan.theta0.sigma2 == 0.0) {
        return Err(LgcpError::invalid(
            "cannot compare a degenerate field (sigma = 0) against a stochastic one",
        ));
    }
    let s = plan.n_draws();
    let mut cond_logr = vec![0.0; s];
    let mut joint_logr = vec![0.0; s];
    for j in 0..s {
        cond_logr[j] = plan.poisson_part(&theta.beta, &plan.cond_s_obs[j], counts)
            - plan.poisson_part(&plan.theta0.beta, &plan.cond_s_obs[j], counts);
        joint_logr[j] = plan.poisson_part(&theta.beta, &plan.joint_s_obs[j], &plan.joint_counts[j])
            - plan.poisson_part(&plan.theta0.beta, &plan.joint_s_obs[j], &plan.joint_counts[j]);
    }
    if theta.sigma2 > 0.0 {
        let cov1 = theta.cov(plan.family)?;
        let cov0 = plan.theta0.cov(plan.family)?;
        let cond_g1 = plan.gaussian_parts(&cov1, true)?;
        let joint_g1 = plan.gaussian_parts(&cov1, false)?;
        let cond_g0 = plan.gaussian_parts(&cov0, true)?;
        let joint_g0 = plan.gaussian_parts(&cov0, false)?;
        for j in 0..s {
            cond_logr[j] += cond_g1[j] - cond_g0[j];
            joint_logr[j] += joint_g1[j] - joint_g0[j];
        }
    }
    let (lme_cond, ess_conditional) = reduce_weights(&cond_logr);
    let (lme_joint, ess_joint) = reduce_weights(&joint_logr);
    let mut value = lme_cond - lme_joint;
    let mut unreliable = ess_conditional < 5.0 || ess_joint < 5.0;
    if value.is_nan() {
        value = f64::NEG_INFINITY;
        unreliable = true;
    }
    Ok(McLoglik { value, ess_conditional, ess_joint, unreliable })
}

/// Maximizes `Lhat` over the search box by a simplex search started at the
/// anchor. With a zero anchor variance only the coefficients are free; the
/// covariance parameters otherwise move on log scales. Evaluations whose
/// effective sample size has collapsed count as infeasible, which confines
/// the search to the region where the surface is trustworthy.
pub fn mc_mle(
    plan: &mut McLikelihoodPlan,
    counts: &[f64],
    search: &SearchBox,
) -> Result<McMle> {
    let p = plan.theta0.beta.len();
    let degenerate = plan.theta0.sigma2 == 0.0;
    let phi0 = plan.theta0.phi;
    let dim = if degenerate { p } else { p + 2 };
    let mut center = plan.theta0.beta.clone();
    if !degenerate {
        center.push(0.5 * plan.theta0.sigma2.ln());
        center.push(plan.theta0.phi.ln());
    }
    let halfwidth = |i: usize| -> f64 {
        if i < p {
            search.beta
        } else if i == p {
            search.log_sigma
        } else {
            search.log_phi
        }
    };
    let theta_at = |x: &[f64]| -> ThetaPoint {
        if degenerate {
            ThetaPoint { beta: x.to_vec(), sigma2: 0.0, phi: phi0 }
        } else {
            ThetaPoint {
                beta: x[..p].to_vec(),
                sigma2: (2.0 * x[p]).exp(),
                phi: x[p + 1].exp(),
            }
        }
    };

    // The borrow of `plan` inside the objective is exclusive, so build the
    // closure in a scope that ends before the diagnostics pass.
    let result = {
        let mut objective = |x: &[f64]| -> f64 {
            for i in 0..dim {
                if (x[i] - center[i]).abs() > halfwidth(i) {
                    return f64::INFINITY;
                }
            }
            // Points whose weight systems have collapsed carry no usable
            // signal, so treat them as infeasible rather than letting the
            // optimizer chase noise far from the anchor.
            match mc_loglik(plan, counts, &theta_at(x)) {
                Ok(r) if r.value.is_finite() && !r.unreliable => -r.value,
                _ => f64::INFINITY,
            }
        };
        let steps = vec![0.1; dim];
        nelder_mead(&mut objective, &center, &steps, 1e-8, 300)
    };

    let at_boundary = (0..dim).any(|i| (result.x[i] - center[i]).abs() >= 0.95 * halfwidth(i));
    let theta = theta_at(&result.x);
    let diag = mc_loglik(plan, counts, &theta)?;
    Ok(McMle {
        theta,
        value: diag.value,
        ess_conditional: diag.ess_conditional,
        ess_joint: diag.ess_joint,
        at_boundary,
        unreliable: diag.unreliable,
    })
}

/// Monte Carlo MLE with re-anchoring: after each round the plan is rebuilt at
/// the current estimate, sharpening the approximation near the optimum.
/// `rounds` counts the plan builds, so one round is a plain estimate.
#[allow(clippy::too_many_arguments)]
pub fn mc_mle_reanchored(
    family: CorrelationFamily,
    theta0: ThetaPoint,
    covariates: Vec<Vec<f64>>,
    offset: Vec<f64>,
    grid: &GridSpec,
    counts: &[f64],
    plan_config: &PlanConfig,
    search: &SearchBox,
    rounds: usize,
    rng: &mut impl Rng,
) -> Result<(McMle, McLikelihoodPlan)> {
    if rounds == 0 {
        return Err(LgcpError::invalid("at least one estimation round required"));
    }
    let mut anchor = theta0;
    let mut outcome: Option<(McMle, McLikelihoodPlan)> = None;
    for _ in 0..rounds {
        let mut plan = build_plan(
            family,
            anchor.clone(),
            covariates.clone(),
            offset.clone(),
            grid,
            counts,
            plan_config,
            rng,
        )?;
        let mle = mc_mle(&mut plan, counts, search)?;
        anchor = mle.theta.clone();
        outcome = Some((mle, plan));
    }
    Ok(outcome.expect("at least one round ran"))
}

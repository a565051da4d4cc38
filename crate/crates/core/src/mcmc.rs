//! Posterior sampling for the latent field, regression coefficients, and
//! covariance parameters.
//!
//! The chain state is `(gamma, beta, theta)` with `theta = (log sigma,
//! log phi)`. One iteration proposes all three blocks jointly and accepts or
//! rejects them together:
//!
//! - `gamma` and `beta` move by preconditioned Langevin proposals. The
//!   whitened field needs no preconditioner beyond the identity; `beta` uses
//!   the inverse Fisher information of the initial intensity fit.
//! - `theta` moves by a random walk scaled by the prior standard deviations
//!   and damped by a factor below one, since its gradients are not available
//!   in whitened coordinates.
//!
//! Block step sizes follow the dimension scalings `1.65^2 / d^(1/3)` for
//! Langevin blocks and `2.38^2 / d` for the random walk block, all multiplied
//! by one global step factor `h` that adapts on the fly: `log h` moves by
//! `rate * i^(-1/2) * (alpha_i - alpha_target)` toward a target acceptance
//! probability of 0.574. The decaying schedule keeps the chain ergodic while
//! adapting through the whole run.

use crate::covariance::CorrelationFamily;
use crate::error::{LgcpError, Result};
use crate::field::{FieldWorkspace, WhitenedField};
use crate::grid::{GridSpec, RegionMasks};
use crate::models::{MultitypeModel, UnitypeModel};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

/// Acceptance probability targeted by the step size adaptation.
pub const TARGET_ACCEPTANCE: f64 = 0.574;

/// Damping factor applied to the random-walk block for the covariance
/// parameters.
pub const THETA_DAMPING: f64 = 0.4;

/// Base rate of the step adaptation schedule. The schedule decays as
/// `rate / sqrt(iteration)`, so the cumulative adjustment available over a
/// run of length `n` is about `2 * rate * sqrt(n)`; the default is sized so
/// a neutral starting step can reach equilibrium within a few thousand
/// iterations even on fields with thousands of cells.
pub const ADAPT_RATE: f64 = 0.5;

/// Langevin block scaling `1.65^2 / d^(1/3)`.
pub fn langevin_block_scaling(dim: usize) -> f64 {
    assert!(dim > 0);
    1.65 * 1.65 / (dim as f64).cbrt()
}

/// Random-walk block scaling `2.38^2 / d`.
pub fn walk_block_scaling(dim: usize) -> f64 {
    assert!(dim > 0);
    2.38 * 2.38 / dim as f64
}

/// One step of the decaying acceptance-rate adaptation.
pub fn adapt_step(log_step: &mut f64, accept_prob: f64, iteration: usize, target: f64, rate: f64) {
    let eta = rate * (iteration as f64).sqrt().recip();
    *log_step += eta * (accept_prob - target);
}

/// Metropolis-Hastings accept decision for a log acceptance ratio. Returns
/// the decision together with the acceptance probability `min(1, e^ratio)`.
pub fn mh_accept(log_ratio: f64, rng: &mut impl Rng) -> (bool, f64) {
    let prob = if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() };
    (rng.gen::<f64>() < prob, prob)
}

/// Independent Gaussian priors: one shared prior for every regression
/// coefficient and log-scale priors for the covariance parameters.
#[derive(Clone, Copy, Debug)]
pub struct Priors {
    pub beta_mean: f64,
    pub beta_var: f64,
    pub log_sigma_mean: f64,
    pub log_sigma_var: f64,
    pub log_phi_mean: f64,
    pub log_phi_var: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            beta_mean: 0.0,
            beta_var: 1e6,
            log_sigma_mean: 0.0,
            log_sigma_var: 0.15,
            log_phi_mean: 10.0f64.ln(),
            log_phi_var: 0.15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub burnin: usize,
    pub n_iterations: usize,
    pub thin: usize,
    pub priors: Priors,
    pub target_accept: f64,
    pub theta_damping: f64,
    pub adapt_rate: f64,
    pub initial_step: f64,
    /// Hold `(sigma2, phi)` fixed instead of sampling them.
    pub fixed_theta: Option<(f64, f64)>,
    /// Hold the regression coefficients at their initial values, sampling the
    /// field alone (conditional simulation at a fixed parameter).
    pub fixed_beta: bool,
    /// Keep the whitened coefficients of every retained draw.
    pub retain_gamma: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            burnin: 1000,
            n_iterations: 10_000,
            thin: 10,
            priors: Priors::default(),
            target_accept: TARGET_ACCEPTANCE,
            theta_damping: THETA_DAMPING,
            adapt_rate: ADAPT_RATE,
            initial_step: 1.0,
            fixed_theta: None,
            fixed_beta: false,
            retain_gamma: false,
        }
    }
}

/// Starting point for a chain. The whitened field always starts at zero.
#[derive(Clone, Debug)]
pub struct ChainInit {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub phi: f64,
}

/// Intercept that matches the observed total under a unit field:
/// `log(total / (area * mean_offset))`.
pub fn initial_intercept(total_count: f64, area: f64, mean_offset: f64) -> Result<f64> {
    if !(total_count > 0.0) {
        return Err(LgcpError::InsufficientData(
            "cannot initialize the intercept from an empty pattern".into(),
        ));
    }
    if !(area > 0.0) || !(mean_offset > 0.0) {
        return Err(LgcpError::invalid("area and mean offset must be positive"));
    }
    Ok((total_count / (area * mean_offset)).ln())
}

/// Likelihood evaluation at one state: value, gradients pulled back to the
/// whitened coordinates, and the latent field on observation cells.
#[derive(Clone, Debug)]
pub struct TargetEval {
    pub loglik: f64,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub s_obs: Vec<f64>,
}

/// A posterior over `(gamma, beta, theta)` that the sampler can walk.
/// Implementations own their data and workspace; gradients exclude the
/// priors, which the sampler adds analytically.
pub trait PosteriorTarget {
    fn grid(&self) -> &GridSpec;
    fn n_fields(&self) -> usize;
    fn n_beta(&self) -> usize;
    fn family(&self) -> CorrelationFamily;
    fn evaluate(&mut self, gamma: &[f64], beta: &[f64], sigma2: f64, phi: f64)
        -> Result<TargetEval>;
    /// Fisher information of `beta` at a flat field, `Z' diag(mu) Z`.
    fn beta_information(&mut self, beta: &[f64], sigma2: f64, phi: f64) -> Result<Vec<Vec<f64>>>;
}

/// Posterior value and gradients with priors included.
#[derive(Clone, Debug)]
pub struct PosteriorEval {
    pub log_posterior: f64,
    pub loglik: f64,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub s_obs: Vec<f64>,
}

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

/// Assembles the log posterior and its gradients at one state. Covariance
/// parameter priors enter only when `include_theta_prior` is set, matching
/// whether the sampler updates that block.
pub fn evaluate_posterior<T: PosteriorTarget + ?Sized>(
    target: &mut T,
    priors: &Priors,
    include_theta_prior: bool,
    gamma: &[f64],
    beta: &[f64],
    sigma2: f64,
    phi: f64,
) -> Result<PosteriorEval> {
    let eval = target.evaluate(gamma, beta, sigma2, phi)?;
    let mut log_posterior = eval.loglik;
    // Whitened field prior N(0, I), constants dropped.
    log_posterior += -0.5 * gamma.iter().map(|g| g * g).sum::<f64>();
    let mut grad_gamma = eval.grad_gamma;
    for (g, &x) in grad_gamma.iter_mut().zip(gamma) {
        *g -= x;
    }
    let mut grad_beta = eval.grad_beta;
    for (g, &b) in grad_beta.iter_mut().zip(beta) {
        log_posterior += normal_logpdf(b, priors.beta_mean, priors.beta_var);
        *g -= (b - priors.beta_mean) / priors.beta_var;
    }
    if include_theta_prior {
        log_posterior += normal_logpdf(0.5 * sigma2.ln(), priors.log_sigma_mean, priors.log_sigma_var);
        log_posterior += normal_logpdf(phi.ln(), priors.log_phi_mean, priors.log_phi_var);
    }
    Ok(PosteriorEval {
        log_posterior,
        loglik: eval.loglik,
        grad_gamma,
        grad_beta,
        s_obs: eval.s_obs,
    })
}

// Small dense symmetric positive definite helpers for the beta block.

fn cholesky_spd(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(LgcpError::invalid(
                        "information matrix is not positive definite",
                    ));
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Solves `L L' x = b`.
fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// `L' v`.
fn chol_lt_mul(l: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let n = l.len();
    (0..n)
        .map(|i| (i..n).map(|k| l[k][i] * v[k]).sum())
        .collect()
}

/// Solves `L' x = b`.
fn chol_lt_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Per-block proposal variances for one iteration: the adapted global step
/// squared times the dimension scalings.
#[derive(Clone, Copy, Debug)]
pub struct ProposalScales {
    pub gamma_var: f64,
    pub beta_var: f64,
    pub theta_var: f64,
}

impl ProposalScales {
    pub fn at_step(
        step: f64,
        d_gamma: usize,
        d_beta: usize,
        theta_damping: f64,
        update_theta: bool,
        update_beta: bool,
    ) -> Self {
        let h2 = step * step;
        ProposalScales {
            gamma_var: h2 * langevin_block_scaling(d_gamma),
            beta_var: if update_beta { h2 * langevin_block_scaling(d_beta) } else { 0.0 },
            theta_var: if update_theta {
                theta_damping * h2 * walk_block_scaling(2)
            } else {
                0.0
            },
        }
    }
}

/// A proposed state; `log_sigma`/`log_phi` equal the current values when the
/// covariance block is fixed.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_sigma: f64,
    pub log_phi: f64,
}

/// Draws the joint proposal: Langevin moves for `gamma` and `beta`, a damped
/// random walk for `theta`. `beta_info_chol` is the Cholesky factor of the
/// beta information (the inverse preconditioner); `theta_sd` holds the prior
/// standard deviations of `(log sigma, log phi)`.
#[allow(clippy::too_many_arguments)]
pub fn mala_rw_propose(
    gamma: &[f64],
    grad_gamma: &[f64],
    beta: &[f64],
    grad_beta: &[f64],
    log_sigma: f64,
    log_phi: f64,
    scales: &ProposalScales,
    beta_info_chol: &[Vec<f64>],
    theta_sd: (f64, f64),
    rng: &mut impl Rng,
) -> Proposal {
    let sd_g = scales.gamma_var.sqrt();
    let half_g = 0.5 * scales.gamma_var;
    let gamma_new: Vec<f64> = gamma
        .iter()
        .zip(grad_gamma)
        .map(|(&x, &g)| x + half_g * g + sd_g * rng.sample::<f64, _>(StandardNormal))
        .collect();

    // beta drift: beta + (v/2) * Info^-1 grad; noise: sqrt(v) * L'^-1 xi.
    let beta_new: Vec<f64> = if scales.beta_var > 0.0 {
        let drift = chol_solve(beta_info_chol, grad_beta);
        let xi: Vec<f64> = (0..beta.len()).map(|_| rng.sample(StandardNormal)).collect();
        let noise = chol_lt_solve(beta_info_chol, &xi);
        let sd_b = scales.beta_var.sqrt();
        (0..beta.len())
            .map(|j| beta[j] + 0.5 * scales.beta_var * drift[j] + sd_b * noise[j])
            .collect()
    } else {
        beta.to_vec()
    };

    let (log_sigma_new, log_phi_new) = if scales.theta_var > 0.0 {
        let sd_t = scales.theta_var.sqrt();
        (
            log_sigma + sd_t * theta_sd.0 * rng.sample::<f64, _>(StandardNormal),
            log_phi + sd_t * theta_sd.1 * rng.sample::<f64, _>(StandardNormal),
        )
    } else {
        (log_sigma, log_phi)
    };
    Proposal { gamma: gamma_new, beta: beta_new, log_sigma: log_sigma_new, log_phi: log_phi_new }
}

/// Log density of the Langevin part of the proposal `to` given the state
/// `from` and its gradients. The random-walk block is symmetric and omitted;
/// normalization constants shared by both directions are dropped.
pub fn mala_log_q(
    from_gamma: &[f64],
    from_grad_gamma: &[f64],
    from_beta: &[f64],
    from_grad_beta: &[f64],
    to_gamma: &[f64],
    to_beta: &[f64],
    scales: &ProposalScales,
    beta_info_chol: &[Vec<f64>],
) -> f64 {
    let half_g = 0.5 * scales.gamma_var;
    let mut quad_g = 0.0;
    for i in 0..from_gamma.len() {
        let mean = from_gamma[i] + half_g * from_grad_gamma[i];
        let d = to_gamma[i] - mean;
        quad_g += d * d;
    }
    let mut log_q = -0.5 * quad_g / scales.gamma_var;
    if scales.beta_var > 0.0 {
        let drift = chol_solve(beta_info_chol, from_grad_beta);
        let diff: Vec<f64> = (0..from_beta.len())
            .map(|j| to_beta[j] - (from_beta[j] + 0.5 * scales.beta_var * drift[j]))
            .collect();
        // (d' Info d) / v via the Cholesky factor.
        let lt = chol_lt_mul(beta_info_chol, &diff);
        let quad_b: f64 = lt.iter().map(|v| v * v).sum();
        log_q -= 0.5 * quad_b / scales.beta_var;
    }
    log_q
}

/// Retained draws plus per-iteration acceptance traces.
#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub n_fields: usize,
    pub n_obs_cells: usize,
    pub burnin: usize,
    pub thin: usize,
    /// Iteration number (post-burnin, one-based) of each retained draw.
    pub iterations: Vec<u64>,
    pub log_posterior: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    /// Field standard deviation per draw.
    pub sigma: Vec<f64>,
    pub phi: Vec<f64>,
    /// Latent field per draw on observation cells, fields concatenated.
    pub s_obs: Vec<Vec<f64>>,
    /// Whitened coefficients per draw when retained.
    pub gamma: Option<Vec<Vec<f64>>>,
    /// Acceptance probability of every iteration including burnin.
    pub accept_probs: Vec<f64>,
    pub accepted: Vec<bool>,
    pub final_step: f64,
}

impl PosteriorSamples {
    pub fn n_retained(&self) -> usize {
        self.beta.len()
    }

    pub fn acceptance_overall(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// Empirical acceptance rate over the trailing fraction of all
    /// iterations.
    pub fn acceptance_trailing(&self, fraction: f64) -> f64 {
        let n = self.accepted.len();
        if n == 0 {
            return 0.0;
        }
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let tail = &self.accepted[n - take..];
        tail.iter().filter(|&&a| a).count() as f64 / tail.len() as f64
    }
}

struct RunningChain {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    // The random walk moves in (log sigma, log phi); sigma2 and phi hold the
    // exact values the likelihood last saw, so a fixed covariance block never
    // drifts by roundtrip error.
    log_sigma: f64,
    log_phi: f64,
    sigma2: f64,
    phi: f64,
    eval: PosteriorEval,
    log_step: f64,
    info_chol: Vec<Vec<f64>>,
    update_theta: bool,
    theta_sd: (f64, f64),
}

impl RunningChain {
    fn sigma2(&self) -> f64 {
        self.sigma2
    }

    fn phi(&self) -> f64 {
        self.phi
    }
}

fn chain_failure(iteration: usize, e: LgcpError) -> LgcpError {
    LgcpError::ChainFailure { iteration, message: e.to_string() }
}

/// Whether a proposal evaluation error means "reject and continue" rather
/// than "abort the chain": overflowing intensities and failed embeddings are
/// regions of effectively zero posterior mass reached by a bad proposal.
fn rejectable(e: &LgcpError) -> bool {
    matches!(
        e,
        LgcpError::NumericalOverflow { .. } | LgcpError::EmbeddingFailure { .. }
    )
}

fn start_chain<T: PosteriorTarget + ?Sized>(
    target: &mut T,
    config: &SamplerConfig,
    init: &ChainInit,
) -> Result<RunningChain> {
    if config.thin == 0 {
        return Err(LgcpError::invalid("thinning interval must be at least 1"));
    }
    if init.beta.len() != target.n_beta() {
        return Err(LgcpError::invalid(format!(
            "initial beta has {} entries, model needs {}",
            init.beta.len(),
            target.n_beta()
        )));
    }
    let (sigma2, phi, update_theta) = match config.fixed_theta {
        Some((s2, p)) => (s2, p, false),
        None => (init.sigma2, init.phi, true),
    };
    if update_theta && sigma2 <= 0.0 {
        return Err(LgcpError::invalid(
            "sampling the covariance parameters requires a positive initial sigma2",
        ));
    }
    let d_gamma = target.n_fields() * target.grid().n_ext_cells();
    let gamma = vec![0.0; d_gamma];
    let info_chol = if config.fixed_beta {
        // Unused by a beta-fixed run; the identity keeps the plumbing happy.
        let p = target.n_beta();
        (0..p)
            .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        let info = target.beta_information(&init.beta, sigma2, phi)?;
        cholesky_spd(&info)?
    };
    let eval = evaluate_posterior(
        target,
        &config.priors,
        update_theta,
        &gamma,
        &init.beta,
        sigma2,
        phi,
    )
    .map_err(|e| chain_failure(0, e))?;
    Ok(RunningChain {
        gamma,
        beta: init.beta.clone(),
        log_sigma: 0.5 * sigma2.max(f64::MIN_POSITIVE).ln(),
        log_phi: phi.ln(),
        sigma2,
        phi,
        eval,
        log_step: config.initial_step.ln(),
        info_chol,
        update_theta,
        theta_sd: (
            config.priors.log_sigma_var.sqrt(),
            config.priors.log_phi_var.sqrt(),
        ),
    })
}

fn chain_step<T: PosteriorTarget + ?Sized>(
    chain: &mut RunningChain,
    target: &mut T,
    config: &SamplerConfig,
    iteration: usize,
    rng: &mut impl Rng,
) -> Result<(bool, f64)> {
    let d_gamma = chain.gamma.len();
    let d_beta = chain.beta.len();
    let scales = ProposalScales::at_step(
        chain.log_step.exp(),
        d_gamma,
        d_beta,
        config.theta_damping,
        chain.update_theta,
        !config.fixed_beta,
    );
    let proposal = mala_rw_propose(
        &chain.gamma,
        &chain.eval.grad_gamma,
        &chain.beta,
        &chain.eval.grad_beta,
        chain.log_sigma,
        chain.log_phi,
        &scales,
        &chain.info_chol,
        chain.theta_sd,
        rng,
    );
    let sigma2_new = (2.0 * proposal.log_sigma).exp();
    let phi_new = proposal.log_phi.exp();
    let prop_eval = match evaluate_posterior(
        target,
        &config.priors,
        chain.update_theta,
        &proposal.gamma,
        &proposal.beta,
        if chain.update_theta { sigma2_new } else { chain.sigma2() },
        if chain.update_theta { phi_new } else { chain.phi() },
    ) {
        Ok(e) => Some(e),
        Err(e) if rejectable(&e) => None,
        Err(e) => return Err(chain_failure(iteration, e)),
    };

    let (accepted, prob) = match prop_eval {
        None => (false, 0.0),
        Some(prop_eval) => {
            let forward = mala_log_q(
                &chain.gamma,
                &chain.eval.grad_gamma,
                &chain.beta,
                &chain.eval.grad_beta,
                &proposal.gamma,
                &proposal.beta,
                &scales,
                &chain.info_chol,
            );
            let reverse = mala_log_q(
                &proposal.gamma,
                &prop_eval.grad_gamma,
                &proposal.beta,
                &prop_eval.grad_beta,
                &chain.gamma,
                &chain.beta,
                &scales,
                &chain.info_chol,
            );
            let log_ratio = prop_eval.log_posterior - chain.eval.log_posterior + reverse - forward;
            let (acc, prob) = mh_accept(log_ratio, rng);
            if acc {
                chain.gamma = proposal.gamma;
                chain.beta = proposal.beta;
                if chain.update_theta {
                    chain.log_sigma = proposal.log_sigma;
                    chain.log_phi = proposal.log_phi;
                    chain.sigma2 = sigma2_new;
                    chain.phi = phi_new;
                }
                chain.eval = prop_eval;
            }
            (acc, prob)
        }
    };
    adapt_step(
        &mut chain.log_step,
        prob,
        iteration,
        config.target_accept,
        config.adapt_rate,
    );
    Ok((accepted, prob))
}

fn new_samples<T: PosteriorTarget + ?Sized>(
    target: &T,
    config: &SamplerConfig,
) -> PosteriorSamples {
    let total_iters = config.burnin + config.n_iterations;
    let n_retained = config.n_iterations / config.thin;
    PosteriorSamples {
        n_fields: target.n_fields(),
        n_obs_cells: target.grid().n_cells(),
        burnin: config.burnin,
        thin: config.thin,
        iterations: Vec::with_capacity(n_retained),
        log_posterior: Vec::with_capacity(n_retained),
        beta: Vec::with_capacity(n_retained),
        sigma: Vec::with_capacity(n_retained),
        phi: Vec::with_capacity(n_retained),
        s_obs: Vec::with_capacity(n_retained),
        gamma: if config.retain_gamma { Some(Vec::with_capacity(n_retained)) } else { None },
        accept_probs: Vec::with_capacity(total_iters),
        accepted: Vec::with_capacity(total_iters),
        final_step: 0.0,
    }
}

fn retain(samples: &mut PosteriorSamples, chain: &RunningChain, config: &SamplerConfig, i: usize) {
    if i > config.burnin {
        let k = i - config.burnin;
        if k % config.thin == 0 {
            samples.iterations.push(k as u64);
            samples.log_posterior.push(chain.eval.log_posterior);
            samples.beta.push(chain.beta.clone());
            samples.sigma.push(chain.sigma2().sqrt());
            samples.phi.push(chain.phi());
            samples.s_obs.push(chain.eval.s_obs.clone());
            if let Some(g) = samples.gamma.as_mut() {
                g.push(chain.gamma.clone());
            }
        }
    }
}

/// Runs one chain from `init`, retaining every `thin`-th post-burnin draw.
pub fn run_chain<T: PosteriorTarget + ?Sized>(
    target: &mut T,
    config: &SamplerConfig,
    init: &ChainInit,
    rng: &mut impl Rng,
) -> Result<PosteriorSamples> {
    let mut chain = start_chain(target, config, init)?;
    let mut samples = new_samples(target, config);
    for i in 1..=config.burnin + config.n_iterations {
        let (accepted, prob) = chain_step(&mut chain, target, config, i, rng)?;
        samples.accept_probs.push(prob);
        samples.accepted.push(accepted);
        retain(&mut samples, &chain, config, i);
    }
    samples.final_step = chain.log_step.exp();
    Ok(samples)
}

/// Runs a chain over an aggregated-count model: every iteration interleaves
/// one Metropolis update of `(gamma, beta, theta)` with an exact multinomial
/// redistribution of each region's total over its cells. The proposal noise
/// and the count augmentation draw from separate streams so either can be
/// reproduced independently.
pub fn run_chain_aggregated(
    target: &mut UnitypeTarget,
    masks: &RegionMasks,
    totals: &[u64],
    config: &SamplerConfig,
    init: &ChainInit,
    rng: &mut impl Rng,
    aug_rng: &mut impl Rng,
) -> Result<PosteriorSamples> {
    if totals.len() != masks.cells_by_region.len() {
        return Err(LgcpError::invalid("one total per region required"));
    }
    let mut chain = start_chain(target, config, init)?;
    let mut samples = new_samples(target, config);
    for i in 1..=config.burnin + config.n_iterations {
        let (accepted, prob) = chain_step(&mut chain, target, config, i, rng)?;
        samples.accept_probs.push(prob);
        samples.accepted.push(accepted);

        let mu = target.current_mu(&chain.gamma, &chain.beta, chain.sigma2(), chain.phi())?;
        let new_counts = gibbs_multinomial_step(masks, totals, &mu, aug_rng)?;
        target.set_counts(&new_counts)?;
        // The likelihood changed under the refreshed counts; re-evaluate the
        // current state so the next accept ratio compares like with like.
        chain.eval = evaluate_posterior(
            target,
            &config.priors,
            chain.update_theta,
            &chain.gamma,
            &chain.beta,
            chain.sigma2(),
            chain.phi(),
        )
        .map_err(|e| chain_failure(i, e))?;

        retain(&mut samples, &chain, config, i);
    }
    samples.final_step = chain.log_step.exp();
    Ok(samples)
}

/// Exact conditional redistribution of region totals over cells: within each
/// region the cell counts follow a multinomial with probabilities
/// proportional to the current cell means. Sequential binomial draws keep the
/// totals exact. Cells outside every region get zero.
pub fn gibbs_multinomial_step(
    masks: &RegionMasks,
    totals: &[u64],
    mu: &[f64],
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; mu.len()];
    for (r, cells) in masks.cells_by_region.iter().enumerate() {
        let total = totals[r];
        if total == 0 {
            continue;
        }
        let mut mass: f64 = cells.iter().map(|&k| mu[k]).sum();
        if !(mass > 0.0) {
            return Err(LgcpError::DegenerateRegion { region: (r + 1) as u32, total });
        }
        let mut remaining = total;
        for (idx, &k) in cells.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            if idx == cells.len() - 1 {
                counts[k] = remaining as f64;
                remaining = 0;
                break;
            }
            let p = (mu[k] / mass).clamp(0.0, 1.0);
            let draw = if p >= 1.0 {
                remaining
            } else {
                Binomial::new(remaining, p)
                    .map_err(|e| LgcpError::invalid(format!("binomial({remaining}, {p}): {e}")))?
                    .sample(rng)
            };
            counts[k] = draw as f64;
            remaining -= draw;
            mass -= mu[k];
            if !(mass > 0.0) && remaining > 0 {
                // All remaining mass sits on cells with zero mean; park the
                // rest on the final cell to keep the total exact.
                counts[*cells.last().expect("nonempty region")] += remaining as f64;
                remaining = 0;
                break;
            }
        }
        debug_assert_eq!(remaining, 0);
    }
    Ok(counts)
}

/// Posterior target for a single-type model over cell counts.
pub struct UnitypeTarget {
    model: UnitypeModel,
    ws: FieldWorkspace,
    counts: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl UnitypeTarget {
    pub fn new(
        model: UnitypeModel,
        grid: &GridSpec,
        counts: Vec<f64>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if counts.len() != grid.n_cells() {
            return Err(LgcpError::invalid("one count per observation cell required"));
        }
        let ws = FieldWorkspace::new(&model.cov, grid)?;
        Ok(UnitypeTarget { model, ws, counts, mask })
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// Replaces the cell counts, e.g. after a conditional redistribution of
    /// aggregated totals.
    pub fn set_counts(&mut self, counts: &[f64]) -> Result<()> {
        if counts.len() != self.counts.len() {
            return Err(LgcpError::invalid("count vector length changed"));
        }
        self.counts.copy_from_slice(counts);
        Ok(())
    }

    pub fn model(&self) -> &UnitypeModel {
        &self.model
    }

    /// Poisson means on observation cells at the given state.
    pub fn current_mu(
        &mut self,
        gamma: &[f64],
        beta: &[f64],
        sigma2: f64,
        phi: f64,
    ) -> Result<Vec<f64>> {
        self.model.beta.copy_from_slice(beta);
        self.model.cov = self.model.cov.rescaled(sigma2, phi)?;
        let gamma_field = WhitenedField(gamma.to_vec());
        let out = self.model.cell_loglik_masked(
            &mut self.ws,
            &gamma_field,
            &self.counts,
            self.mask.as_deref(),
        )?;
        Ok(out.mu)
    }

    fn mu_flat_field(&self, beta: &[f64], sigma2: f64) -> Vec<f64> {
        let grid = self.ws.grid();
        let area = grid.cell_area();
        let mut model = self.model.clone();
        model.beta.copy_from_slice(beta);
        (0..grid.n_cells())
            .map(|k| {
                if self.mask.as_ref().map_or(false, |m| !m[k]) {
                    0.0
                } else {
                    area * model.offset[k] * (model.linear_predictor(k) - 0.5 * sigma2).exp()
                }
            })
            .collect()
    }
}

impl PosteriorTarget for UnitypeTarget {
    fn grid(&self) -> &GridSpec {
        self.ws.grid()
    }

    fn n_fields(&self) -> usize {
        1
    }

    fn n_beta(&self) -> usize {
        self.model.n_beta()
    }

    fn family(&self) -> CorrelationFamily {
        self.model.cov.family
    }

    fn evaluate(&mut self, gamma: &[f64], beta: &[f64], sigma2: f64, phi: f64) -> Result<TargetEval> {
        self.model.beta.copy_from_slice(beta);
        self.model.cov = self.model.cov.rescaled(sigma2, phi)?;
        let gamma_field = WhitenedField(gamma.to_vec());
        let out = self.model.cell_loglik_masked(
            &mut self.ws,
            &gamma_field,
            &self.counts,
            self.mask.as_deref(),
        )?;
        let grid = self.ws.grid().clone();
        let mut scattered = vec![0.0; grid.n_ext_cells()];
        for (o, &g) in out.grad_s_obs.iter().enumerate() {
            scattered[grid.obs_to_ext(o)] = g;
        }
        let mut grad_gamma = Vec::new();
        self.ws.grad_transport(&scattered, &mut grad_gamma);
        Ok(TargetEval {
            loglik: out.loglik,
            grad_gamma,
            grad_beta: out.grad_beta,
            s_obs: out.s_obs,
        })
    }

    fn beta_information(&mut self, beta: &[f64], sigma2: f64, _phi: f64) -> Result<Vec<Vec<f64>>> {
        let mu = self.mu_flat_field(beta, sigma2);
        let p = self.model.n_beta();
        let mut info = vec![vec![0.0; p]; p];
        for (k, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let mut z = vec![1.0];
            for col in &self.model.covariates {
                z.push(col[k]);
            }
            for a in 0..p {
                for b in 0..p {
                    info[a][b] += m * z[a] * z[b];
                }
            }
        }
        Ok(info)
    }
}

/// Posterior target for a multitype model: one whitened field per type,
/// intercepts only, shared covariance parameters.
pub struct MultitypeTarget {
    model: MultitypeModel,
    ws: FieldWorkspace,
    counts: Vec<Vec<f64>>,
}

impl MultitypeTarget {
    pub fn new(model: MultitypeModel, grid: &GridSpec, counts: Vec<Vec<f64>>) -> Result<Self> {
        if counts.len() != model.n_types() {
            return Err(LgcpError::invalid("one count vector per type required"));
        }
        if counts.iter().any(|c| c.len() != grid.n_cells()) {
            return Err(LgcpError::invalid("one count per observation cell required"));
        }
        let ws = FieldWorkspace::new(&model.cov, grid)?;
        Ok(MultitypeTarget { model, ws, counts })
    }

    pub fn model(&self) -> &MultitypeModel {
        &self.model
    }
}

impl PosteriorTarget for MultitypeTarget {
    fn grid(&self) -> &GridSpec {
        self.ws.grid()
    }

    fn n_fields(&self) -> usize {
        self.model.n_types()
    }

    fn n_beta(&self) -> usize {
        self.model.n_types()
    }

    fn family(&self) -> CorrelationFamily {
        self.model.cov.family
    }

    fn evaluate(&mut self, gamma: &[f64], beta: &[f64], sigma2: f64, phi: f64) -> Result<TargetEval> {
        let m = self.model.n_types();
        let n_ext = self.ws.grid().n_ext_cells();
        if gamma.len() != m * n_ext {
            return Err(LgcpError::invalid("whitened state length mismatch"));
        }
        self.model.betas.copy_from_slice(beta);
        self.model.cov = self.model.cov.rescaled(sigma2, phi)?;
        let gammas: Vec<WhitenedField> = (0..m)
            .map(|k| WhitenedField(gamma[k * n_ext..(k + 1) * n_ext].to_vec()))
            .collect();
        let out = self.model.multitype_loglik(&mut self.ws, &gammas, &self.counts)?;
        let grid = self.ws.grid().clone();
        let mut grad_gamma = vec![0.0; m * n_ext];
        let mut s_obs = Vec::with_capacity(m * grid.n_cells());
        let mut scattered = vec![0.0; n_ext];
        let mut transported = Vec::new();
        for k in 0..m {
            scattered.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in out.per_type[k].grad_s_obs.iter().enumerate() {
                scattered[grid.obs_to_ext(o)] = g;
            }
            self.ws.grad_transport(&scattered, &mut transported);
            grad_gamma[k * n_ext..(k + 1) * n_ext].copy_from_slice(&transported);
            s_obs.extend_from_slice(&out.per_type[k].s_obs);
        }
        Ok(TargetEval { loglik: out.loglik, grad_gamma, grad_beta: out.grad_betas, s_obs })
    }

    fn beta_information(&mut self, beta: &[f64], sigma2: f64, _phi: f64) -> Result<Vec<Vec<f64>>> {
        let m = self.model.n_types();
        let grid = self.ws.grid();
        let area = grid.cell_area();
        let mut info = vec![vec![0.0; m]; m];
        for (k, b) in beta.iter().enumerate() {
            let total: f64 = self
                .model
                .offset
                .iter()
                .map(|&d| area * d * (b - 0.5 * sigma2).exp())
                .sum();
            info[k][k] = total;
        }
        Ok(info)
    }
}

/// Lagged autocorrelations of one retained parameter series.
#[derive(Clone, Debug)]
pub struct ParameterAcf {
    pub name: String,
    /// Autocorrelations at lags 1 through 20 (shorter if few samples).
    pub lag: Vec<f64>,
    /// Lag-1 autocorrelation above 0.5.
    pub flagged: bool,
    /// The series has (numerically) zero variance.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct ChainDiagnostics {
    pub acceptance_overall: f64,
    pub acceptance_trailing: f64,
    pub autocorrelations: Vec<ParameterAcf>,
    pub warnings: Vec<String>,
}

fn acf(series: &[f64], max_lag: usize) -> (Vec<f64>, bool) {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var <= 1e-300 * n as f64 {
        return (vec![0.0; max_lag.min(n - 1)], true);
    }
    let mut out = Vec::new();
    for l in 1..=max_lag.min(n - 1) {
        let cov: f64 = (0..n - l)
            .map(|t| (series[t] - mean) * (series[t + l] - mean))
            .sum();
        out.push(cov / var);
    }
    (out, false)
}

/// Acceptance summaries and parameter autocorrelations for a finished run.
/// Needs at least 10 retained draws.
pub fn diagnostics(samples: &PosteriorSamples) -> Result<ChainDiagnostics> {
    let n = samples.n_retained();
    if n < 10 {
        return Err(LgcpError::InsufficientSamples { have: n, need: 10 });
    }
    let mut autocorrelations = Vec::new();
    let mut warnings = Vec::new();
    let mut push = |name: String, series: Vec<f64>| {
        let (lag, degenerate) = acf(&series, 20);
        let flagged = !degenerate && lag.first().map_or(false, |&l1| l1 > 0.5);
        if flagged {
            warnings.push(format!(
                "{name}: lag-1 autocorrelation {:.3} exceeds 0.5; thin more or run longer",
                lag[0]
            ));
        }
        autocorrelations.push(ParameterAcf { name, lag, flagged, degenerate });
    };
    let p = samples.beta[0].len();
    for j in 0..p {
        push(
            format!("beta{j}"),
            samples.beta.iter().map(|b| b[j]).collect(),
        );
    }
    push("sigma".into(), samples.sigma.clone());
    push("phi".into(), samples.phi.clone());
    Ok(ChainDiagnostics {
        acceptance_overall: samples.acceptance_overall(),
        acceptance_trailing: samples.acceptance_trailing(0.2),
        autocorrelations,
        warnings,
    })
}

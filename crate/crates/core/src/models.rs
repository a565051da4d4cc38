//! Point-process models driven by a latent Gaussian field: cell-level Poisson
//! likelihoods with gradients, forward simulation, the theoretical K function,
//! and the multitype and space-time extensions.
//!
//! Counts are modelled per grid cell: given the latent field `S`, cell `k`
//! holds a Poisson count with mean
//! `mu_k = cell_area * d_k * exp(z_k' beta + S_k)`,
//! where `d` is a known offset (population density, exposure) and `z`
//! collects an intercept plus optional covariates.

use crate::covariance::{CovarianceModel, SeparableStCovariance};
use crate::error::{LgcpError, Result};
use crate::field::{FieldWorkspace, LatentField, WhitenedField};
use crate::grid::{GridSpec, PointPattern};
use crate::quadrature::adaptive_simpson;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// Largest linear predictor we are willing to exponentiate.
pub const MAX_EXP_ARG: f64 = 700.0;

/// Single-type model: intensity `d(x) exp(z(x)'beta + S(x))`.
#[derive(Clone, Debug)]
pub struct UnitypeModel {
    /// Intercept followed by one coefficient per covariate column.
    pub beta: Vec<f64>,
    /// Covariate columns over observation cells (intercept excluded).
    pub covariates: Vec<Vec<f64>>,
    /// Known offset per observation cell, nonnegative.
    pub offset: Vec<f64>,
    pub cov: CovarianceModel,
}

impl UnitypeModel {
    /// Constant-intensity-baseline model: no covariates, unit offset.
    pub fn stationary(beta0: f64, cov: CovarianceModel, grid: &GridSpec) -> Self {
        UnitypeModel {
            beta: vec![beta0],
            covariates: Vec::new(),
            offset: vec![1.0; grid.n_cells()],
            cov,
        }
    }

    pub fn new(
        beta: Vec<f64>,
        covariates: Vec<Vec<f64>>,
        offset: Vec<f64>,
        cov: CovarianceModel,
        grid: &GridSpec,
    ) -> Result<Self> {
        let n = grid.n_cells();
        if beta.len() != covariates.len() + 1 {
            return Err(LgcpError::invalid(format!(
                "{} coefficients for intercept plus {} covariates",
                beta.len(),
                covariates.len()
            )));
        }
        if covariates.iter().any(|c| c.len() != n) || offset.len() != n {
            return Err(LgcpError::invalid(
                "covariate and offset vectors must have one entry per cell",
            ));
        }
        if offset.iter().any(|&d| !d.is_finite() || d < 0.0) {
            return Err(LgcpError::invalid("offsets must be finite and nonnegative"));
        }
        Ok(UnitypeModel { beta, covariates, offset, cov })
    }

    pub fn n_beta(&self) -> usize {
        self.beta.len()
    }

    /// `z_k' beta` for cell `k`.
    pub fn linear_predictor(&self, cell: usize) -> f64 {
        let mut lp = self.beta[0];
        for (j, col) in self.covariates.iter().enumerate() {
            lp += self.beta[j + 1] * col[cell];
        }
        lp
    }

    /// Poisson log likelihood of cell counts given whitened field
    /// coefficients, with gradients in the field values and in `beta`.
    pub fn cell_loglik(
        &self,
        ws: &mut FieldWorkspace,
        gamma: &WhitenedField,
        counts: &[f64],
    ) -> Result<CellLoglik> {
        self.cell_loglik_masked(ws, gamma, counts, None)
    }

    /// As [`cell_loglik`](Self::cell_loglik), but cells where `observed` is
    /// false contribute nothing (used when only part of the window carries
    /// data). The returned log likelihood omits the count-factorial constant,
    /// which depends on the data alone.
    pub fn cell_loglik_masked(
        &self,
        ws: &mut FieldWorkspace,
        gamma: &WhitenedField,
        counts: &[f64],
        observed: Option<&[bool]>,
    ) -> Result<CellLoglik> {
        ws.set_model(&self.cov)?;
        let grid = ws.grid().clone();
        let n = grid.n_cells();
        if counts.len() != n {
            return Err(LgcpError::invalid("one count per observation cell required"));
        }
        if let Some(mask) = observed {
            if mask.len() != n {
                return Err(LgcpError::invalid("mask length must match the cell count"));
            }
        }
        let field = ws.field_from_gamma(gamma);
        let mut s_obs = Vec::new();
        field.gather_obs(&grid, &mut s_obs);

        let area = grid.cell_area();
        let mut loglik = 0.0;
        let mut grad_s_obs = vec![0.0; n];
        let mut grad_beta = vec![0.0; self.n_beta()];
        let mut mu = vec![0.0; n];
        let mut max_eta = f64::NEG_INFINITY;
        for k in 0..n {
            if observed.map_or(false, |m| !m[k]) {
                continue;
            }
            let eta = self.linear_predictor(k) + s_obs[k];
            max_eta = max_eta.max(eta);
            if eta > MAX_EXP_ARG {
                return Err(LgcpError::NumericalOverflow { max_linear_predictor: eta });
            }
            let m = area * self.offset[k] * eta.exp();
            mu[k] = m;
            let y = counts[k];
            if y > 0.0 {
                if m == 0.0 {
                    return Err(LgcpError::invalid(format!(
                        "cell {k} has {y} points but zero mean (offset is zero there)"
                    )));
                }
                loglik += y * m.ln();
            }
            loglik -= m;
            let resid = y - m;
            grad_s_obs[k] = resid;
            grad_beta[0] += resid;
            for (j, col) in self.covariates.iter().enumerate() {
                grad_beta[j + 1] += resid * col[k];
            }
        }
        Ok(CellLoglik { loglik, grad_s_obs, grad_beta, s_obs, mu })
    }

    /// Draws a field, cell counts, and uniformly scattered point locations.
    pub fn simulate(
        &self,
        ws: &mut FieldWorkspace,
        rng: &mut impl Rng,
    ) -> Result<SimulatedPattern> {
        ws.set_model(&self.cov)?;
        let grid = ws.grid().clone();
        let field = ws.sample_field(rng);
        let mut s_obs = Vec::new();
        field.gather_obs(&grid, &mut s_obs);
        let area = grid.cell_area();
        let n = grid.n_cells();
        let mut counts = vec![0u64; n];
        let mut intensity = vec![0.0; n];
        for k in 0..n {
            let eta = self.linear_predictor(k) + s_obs[k];
            if eta > MAX_EXP_ARG {
                return Err(LgcpError::NumericalOverflow { max_linear_predictor: eta });
            }
            intensity[k] = self.offset[k] * eta.exp();
            let mu = area * intensity[k];
            counts[k] = sample_poisson(mu, rng)?;
        }
        let pattern = scatter_counts(&grid, &counts, None, rng)?;
        Ok(SimulatedPattern { pattern, counts, s_obs, intensity })
    }
}

/// Log likelihood value with gradients and the by-products callers reuse.
#[derive(Clone, Debug)]
pub struct CellLoglik {
    pub loglik: f64,
    /// `y_k - mu_k` per observation cell (zero where unobserved).
    pub grad_s_obs: Vec<f64>,
    pub grad_beta: Vec<f64>,
    /// Latent field gathered on observation cells.
    pub s_obs: Vec<f64>,
    /// Poisson cell means (zero where unobserved).
    pub mu: Vec<f64>,
}

/// A simulated realization: point pattern, its cell counts, and the truth
/// behind them.
#[derive(Clone, Debug)]
pub struct SimulatedPattern {
    pub pattern: PointPattern,
    pub counts: Vec<u64>,
    pub s_obs: Vec<f64>,
    /// Intensity per unit area at cell resolution: `d exp(z'beta + S)`.
    pub intensity: Vec<f64>,
}

pub(crate) fn sample_poisson(mu: f64, rng: &mut impl Rng) -> Result<u64> {
    if !mu.is_finite() {
        return Err(LgcpError::NumericalOverflow { max_linear_predictor: f64::INFINITY });
    }
    if mu <= 0.0 {
        return Ok(0);
    }
    let draw: f64 = Poisson::new(mu)
        .map_err(|e| LgcpError::invalid(format!("Poisson mean {mu}: {e}")))?
        .sample(rng);
    Ok(draw as u64)
}

/// Places `counts[k]` points uniformly inside cell `k`, optionally tagging
/// them all with a time step.
fn scatter_counts(
    grid: &GridSpec,
    counts: &[u64],
    time: Option<(f64, usize)>,
    rng: &mut impl Rng,
) -> Result<PointPattern> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let (cw, ch) = (grid.cell_width(), grid.cell_height());
    let w = grid.window();
    for (k, &c) in counts.iter().enumerate() {
        let ix = k % grid.nx();
        let iy = k / grid.nx();
        let x0 = w.xmin + ix as f64 * cw;
        let y0 = w.ymin + iy as f64 * ch;
        for _ in 0..c {
            xs.push(x0 + rng.gen::<f64>() * cw);
            ys.push(y0 + rng.gen::<f64>() * ch);
        }
    }
    let pattern = PointPattern::new(*w, xs, ys)?;
    match time {
        Some((t, n_steps)) => pattern.with_times(vec![t; counts.iter().sum::<u64>() as usize], n_steps),
        None => Ok(pattern),
    }
}

/// Theoretical K function of the model:
/// `K(u) = pi u^2 + 2 pi int_0^u (exp(sigma2 r(v)) - 1) v dv`.
///
/// The squared-intensity factor in the covariance density cancels against
/// the intensity normalization, so only the field parameters enter.
pub fn theoretical_k(cov: &CovarianceModel, u: f64) -> Result<f64> {
    if !u.is_finite() || u < 0.0 {
        return Err(LgcpError::invalid(format!("distance must be >= 0, got {u}")));
    }
    let base = std::f64::consts::PI * u * u;
    if cov.sigma2 == 0.0 || u == 0.0 {
        return Ok(base);
    }
    let integrand = |v: f64| ((cov.sigma2 * cov.corr(v.abs())).exp_m1()) * v;
    let correction =
        2.0 * std::f64::consts::PI * adaptive_simpson(&integrand, 0.0, u, 1e-12);
    Ok(base + correction)
}

/// Covariance density between two type intensities sharing correlation
/// `r12` at distance `u`:
/// `g12(u) = lambda1 lambda2 (exp(sigma1 sigma2 r12(u)) - 1)`.
pub fn cross_covariance_density(
    lambda1: f64,
    lambda2: f64,
    sigma1: f64,
    sigma2: f64,
    r12: impl Fn(f64) -> f64,
    u: f64,
) -> Result<f64> {
    if lambda1 <= 0.0 || lambda2 <= 0.0 {
        return Err(LgcpError::invalid("intensities must be positive"));
    }
    if sigma1 < 0.0 || sigma2 < 0.0 {
        return Err(LgcpError::invalid("field standard deviations must be >= 0"));
    }
    let r = r12(u);
    if !r.is_finite() || r.abs() > 1.0 {
        return Err(LgcpError::invalid(format!("correlation {r} outside [-1, 1]")));
    }
    Ok(lambda1 * lambda2 * (sigma1 * sigma2 * r).exp_m1())
}

/// Multitype model: type `k` has intensity `d(x) exp(beta_k + S_k(x))` with
/// independent type-specific fields sharing one covariance model. A common
/// component shared by every type is not identifiable from a single pattern
/// and is fixed at zero.
#[derive(Clone, Debug)]
pub struct MultitypeModel {
    /// One intercept per type; the length sets the number of types.
    pub betas: Vec<f64>,
    /// Shared offset per observation cell.
    pub offset: Vec<f64>,
    pub cov: CovarianceModel,
}

impl MultitypeModel {
    pub fn new(betas: Vec<f64>, offset: Vec<f64>, cov: CovarianceModel, grid: &GridSpec) -> Result<Self> {
        if betas.len() < 2 {
            return Err(LgcpError::invalid("multitype models need at least 2 types"));
        }
        if offset.len() != grid.n_cells() {
            return Err(LgcpError::invalid("one offset per observation cell required"));
        }
        if offset.iter().any(|&d| !d.is_finite() || d < 0.0) {
            return Err(LgcpError::invalid("offsets must be finite and nonnegative"));
        }
        Ok(MultitypeModel { betas, offset, cov })
    }

    pub fn n_types(&self) -> usize {
        self.betas.len()
    }

    fn type_model(&self, k: usize) -> UnitypeModel {
        UnitypeModel {
            beta: vec![self.betas[k]],
            covariates: Vec::new(),
            offset: self.offset.clone(),
            cov: self.cov,
        }
    }

    /// Joint log likelihood over types (they factorize given the fields),
    /// with per-type gradients.
    pub fn multitype_loglik(
        &self,
        ws: &mut FieldWorkspace,
        gammas: &[WhitenedField],
        counts: &[Vec<f64>],
    ) -> Result<MultitypeLoglik> {
        let m = self.n_types();
        if gammas.len() != m || counts.len() != m {
            return Err(LgcpError::invalid(format!(
                "expected {m} whitened fields and count vectors"
            )));
        }
        let mut loglik = 0.0;
        let mut per_type = Vec::with_capacity(m);
        let mut grad_betas = Vec::with_capacity(m);
        for k in 0..m {
            let part = self.type_model(k).cell_loglik(ws, &gammas[k], &counts[k])?;
            loglik += part.loglik;
            grad_betas.push(part.grad_beta[0]);
            per_type.push(part);
        }
        Ok(MultitypeLoglik { loglik, per_type, grad_betas })
    }

    /// Simulates every type over one shared grid.
    pub fn simulate(
        &self,
        ws: &mut FieldWorkspace,
        rng: &mut impl Rng,
    ) -> Result<Vec<SimulatedPattern>> {
        (0..self.n_types())
            .map(|k| self.type_model(k).simulate(ws, rng))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct MultitypeLoglik {
    pub loglik: f64,
    pub per_type: Vec<CellLoglik>,
    pub grad_betas: Vec<f64>,
}

/// Conditional type probabilities per cell: softmax of `beta_k + S_k(x)`
/// over types. Rows sum to one by construction.
pub fn type_probabilities(betas: &[f64], s_obs_by_type: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = betas.len();
    if s_obs_by_type.len() != m || m == 0 {
        return Err(LgcpError::invalid("one field per type required"));
    }
    let n = s_obs_by_type[0].len();
    if s_obs_by_type.iter().any(|s| s.len() != n) {
        return Err(LgcpError::invalid("fields must share a length"));
    }
    let mut probs = vec![vec![0.0; n]; m];
    for cell in 0..n {
        let mut max = f64::NEG_INFINITY;
        for k in 0..m {
            max = max.max(betas[k] + s_obs_by_type[k][cell]);
        }
        let mut total = 0.0;
        for k in 0..m {
            let e = (betas[k] + s_obs_by_type[k][cell] - max).exp();
            probs[k][cell] = e;
            total += e;
        }
        for p in probs.iter_mut() {
            p[cell] /= total;
        }
    }
    Ok(probs)
}

/// Space-time model with separable covariance: spatial baseline `lambda0(x)`,
/// temporal baseline `mu0(t)`, intensity `lambda0(x) mu0(t) exp(S(x, t))`.
#[derive(Clone, Debug)]
pub struct StModel {
    pub cov: SeparableStCovariance,
    /// `lambda0` per observation cell, nonnegative.
    pub spatial_baseline: Vec<f64>,
    /// `mu0` per time step, nonnegative; the length sets the horizon.
    pub temporal_baseline: Vec<f64>,
}

impl StModel {
    pub fn new(
        cov: SeparableStCovariance,
        spatial_baseline: Vec<f64>,
        temporal_baseline: Vec<f64>,
        grid: &GridSpec,
    ) -> Result<Self> {
        if spatial_baseline.len() != grid.n_cells() {
            return Err(LgcpError::invalid("one spatial baseline value per cell required"));
        }
        if temporal_baseline.is_empty() {
            return Err(LgcpError::invalid("at least one time step required"));
        }
        if spatial_baseline.iter().chain(&temporal_baseline).any(|&v| !v.is_finite() || v < 0.0)
        {
            return Err(LgcpError::invalid("baselines must be finite and nonnegative"));
        }
        Ok(StModel { cov, spatial_baseline, temporal_baseline })
    }

    pub fn n_steps(&self) -> usize {
        self.temporal_baseline.len()
    }

    /// Runs the stationary autoregression that realizes the separable
    /// covariance: `D_1 = B G_1`, `D_t = rho D_{t-1} + sqrt(1 - rho^2) B G_t`,
    /// `S_t = -sigma2/2 + D_t`. Every marginal is exactly the spatial model;
    /// lagged correlations decay as `rho^|v|`.
    pub fn st_evolve(
        &self,
        ws: &mut FieldWorkspace,
        innovations: &[WhitenedField],
    ) -> Result<Vec<LatentField>> {
        if innovations.len() != self.n_steps() {
            return Err(LgcpError::invalid(format!(
                "expected {} innovation fields, got {}",
                self.n_steps(),
                innovations.len()
            )));
        }
        ws.set_model(&self.cov.spatial)?;
        let mean = -0.5 * self.cov.spatial.sigma2;
        let rho = self.cov.rho;
        let fresh = (1.0 - rho * rho).sqrt();
        let mut fields = Vec::with_capacity(self.n_steps());
        let mut current: Vec<f64> = Vec::new();
        let mut shock = Vec::new();
        for (t, gamma) in innovations.iter().enumerate() {
            ws.apply_sqrt_cov(&gamma.0, &mut shock);
            if t == 0 {
                current = shock.clone();
            } else {
                for (d, &s) in current.iter_mut().zip(&shock) {
                    *d = rho * *d + fresh * s;
                }
            }
            fields.push(LatentField(current.iter().map(|&d| mean + d).collect()));
        }
        Ok(fields)
    }

    /// Simulates counts and point locations for every time step.
    pub fn simulate(&self, ws: &mut FieldWorkspace, rng: &mut impl Rng) -> Result<StSimulation> {
        let n_steps = self.n_steps();
        let grid = ws.grid().clone();
        let innovations: Vec<WhitenedField> = (0..n_steps)
            .map(|_| WhitenedField::standard_normal(grid.n_ext_cells(), rng))
            .collect();
        let fields = self.st_evolve(ws, &innovations)?;
        let area = grid.cell_area();
        let n = grid.n_cells();
        let mut counts = Vec::with_capacity(n_steps);
        let mut fields_obs = Vec::with_capacity(n_steps);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut times = Vec::new();
        for (t, field) in fields.iter().enumerate() {
            let mut s_obs = Vec::new();
            field.gather_obs(&grid, &mut s_obs);
            let mut step_counts = vec![0u64; n];
            for k in 0..n {
                if s_obs[k] > MAX_EXP_ARG {
                    return Err(LgcpError::NumericalOverflow { max_linear_predictor: s_obs[k] });
                }
                let mu = area
                    * self.spatial_baseline[k]
                    * self.temporal_baseline[t]
                    * s_obs[k].exp();
                step_counts[k] = sample_poisson(mu, rng)?;
            }
            let step_pattern = scatter_counts(&grid, &step_counts, None, rng)?;
            xs.extend_from_slice(step_pattern.xs());
            ys.extend_from_slice(step_pattern.ys());
            times.extend(std::iter::repeat((t + 1) as f64).take(step_pattern.n()));
            counts.push(step_counts);
            fields_obs.push(s_obs);
        }
        let pattern = PointPattern::new(*grid.window(), xs, ys)?.with_times(times, n_steps)?;
        Ok(StSimulation { pattern, counts, fields_obs })
    }
}

#[derive(Clone, Debug)]
pub struct StSimulation {
    pub pattern: PointPattern,
    /// Counts per time step, each over observation cells.
    pub counts: Vec<Vec<u64>>,
    /// Latent field per time step on observation cells.
    pub fields_obs: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{bin_points, Window};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn grid_4x4() -> GridSpec {
        GridSpec::build(Window::new(0.0, 0.0, 1.0, 1.0).unwrap(), 4, 4, 2.0).unwrap()
    }

    fn dense_sqrt(model: &CovarianceModel, grid: &GridSpec) -> DMatrix<f64> {
        let (nx, ny) = (grid.ext_nx(), grid.ext_ny());
        let base = crate::covariance::circulant_base(model, grid);
        let dense = DMatrix::from_fn(nx * ny, nx * ny, |a, b| {
            let (ax, ay) = (a % nx, a / nx);
            let (bx, by) = (b % nx, b / nx);
            base[((ay + ny - by) % ny) * nx + ((ax + nx - bx) % nx)]
        });
        let eig = dense.symmetric_eigen();
        let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
    }

    #[test]
    fn loglik_matches_direct_computation() {
        let grid = grid_4x4();
        let cov = CovarianceModel::exponential(0.8, 0.2).unwrap();
        let model = UnitypeModel::new(
            vec![1.2, 0.5],
            vec![(0..16).map(|k| (k as f64) / 16.0).collect()],
            (0..16).map(|k| 0.5 + 0.1 * k as f64).collect(),
            cov,
            &grid,
        )
        .unwrap();
        let mut ws = FieldWorkspace::new(&cov, &grid).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let gamma = WhitenedField::standard_normal(grid.n_ext_cells(), &mut rng);
        let counts: Vec<f64> = (0..16).map(|k| (k % 4) as f64).collect();
        let got = model.cell_loglik(&mut ws, &gamma, &counts).unwrap();

        // Independent route: dense symmetric square root, explicit sums.
        let root = dense_sqrt(&cov, &grid);
        let s_ext = &root * DVector::from_column_slice(&gamma.0);
        let area = grid.cell_area();
        let mut expect = 0.0;
        for k in 0..16 {
            let s = s_ext[grid.obs_to_ext(k)] - 0.5 * cov.sigma2;
            assert_relative_eq!(got.s_obs[k], s, epsilon = 1e-10);
            let eta = 1.2 + 0.5 * (k as f64 / 16.0) + s;
            let mu = area * (0.5 + 0.1 * k as f64) * eta.exp();
            assert_relative_eq!(got.mu[k], mu, max_relative = 1e-10);
            expect += counts[k] * mu.ln() - mu;
        }
        assert_relative_eq!(got.loglik, expect, max_relative = 1e-10);
        // Gradient identities.
        for k in 0..16 {
            assert_relative_eq!(got.grad_s_obs[k], counts[k] - got.mu[k], epsilon = 1e-12);
        }
        let g0: f64 = (0..16).map(|k| counts[k] - got.mu[k]).sum();
        assert_relative_eq!(got.grad_beta[0], g0, epsilon = 1e-10);
    }

    #[test]
    fn masked_cells_contribute_nothing() {
        let grid = grid_4x4();
        let cov = CovarianceModel::exponential(0.5, 0.3).unwrap();
        let model = UnitypeModel::stationary(0.7, cov, &grid);
        let mut ws = FieldWorkspace::new(&cov, &grid).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let gamma = WhitenedField::standard_normal(grid.n_ext_cells(), &mut rng);
        let counts = vec![1.0; 16];
        let mut mask = vec![true; 16];
        mask[3] = false;
        mask[12] = false;
        let full = model.cell_loglik(&mut ws, &gamma, &counts).unwrap();
        let masked = model
            .cell_loglik_masked(&mut ws, &gamma, &counts, Some(&mask))
            .unwrap();
        let removed = counts[3] * full.mu[3].ln() - full.mu[3] + counts[12] * full.mu[12].ln()
            - full.mu[12];
        assert_relative_eq!(masked.loglik, full.loglik - removed, max_relative = 1e-12);
        assert_eq!(masked.grad_s_obs[3], 0.0);
        assert_eq!(masked.mu[12], 0.0);
        assert_relative_eq!(
            masked.grad_beta[0],
            full.grad_beta[0] - full.grad_s_obs[3] - full.grad_s_obs[12],
            epsilon = 1e-10
        );
    }

    #[test]
    fn finite_difference_gradients_agree() {
        let grid = grid_4x4();
        let cov = CovarianceModel::exponential(0.6, 0.25).unwrap();
        let model = UnitypeModel::new(
            vec![0.4, -0.3],
            vec![(0..16).map(|k| ((k * 7) % 5) as f64 * 0.2).collect()],
            vec![1.0; 16],
            cov,
            &grid,
        )
        .unwrap();
        let mut ws = FieldWorkspace::new(&cov, &grid).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let gamma = WhitenedField::standard_normal(grid.n_ext_cells(), &mut rng);
        let counts: Vec<f64> = (0..16).map(|k| ((k * 3) % 4) as f64).collect();
        let base = model.cell_loglik(&mut ws, &gamma, &counts).unwrap();
        let h = 1e-6;
        // Finite differences in beta.
        for j in 0..2 {
            let mut up = model.clone();
            up.beta[j] += h;
            let mut dn = model.clone();
            dn.beta[j] -= h;
            let fu = up.cell_loglik(&mut ws, &gamma, &counts).unwrap().loglik;
            let fd = dn.cell_loglik(&mut ws, &gamma, &counts).unwrap().loglik;
            let fdiff = (fu - fd) / (2.0 * h);
            assert_relative_eq!(base.grad_beta[j], fdiff, max_relative = 1e-5);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let grid = grid_4x4();
        let cov = CovarianceModel::exponential(0.5, 0.3).unwrap();
        let model = UnitypeModel::stationary(800.0, cov, &grid);
        let mut ws = FieldWorkspace::new(&cov, &grid).unwrap();
        let gamma = WhitenedField::zeros(grid.n_ext_cells());
        let counts = vec![0.0; 16];
        match model.cell_loglik(&mut ws, &gamma, &counts) {
            Err(LgcpError::NumericalOverflow { max_linear_predictor }) => {
                assert!(max_linear_predictor > MAX_EXP_ARG);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn simulated_pattern_bins_back_to_its_counts() {
        let grid = grid_4x4();
        let cov = CovarianceModel::exponential(1.0, 0.2).unwrap();
        let model = UnitypeModel::stationary((40.0f64).ln(), cov, &grid);
        let mut ws = FieldWorkspace::new(&cov, &grid).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let sim = model.simulate(&mut ws, &mut rng).unwrap();
        let rebinned = bin_points(&sim.pattern, &grid).unwrap();
        assert_eq!(rebinned, sim.counts);
        assert_eq!(sim.pattern.n() as u64, sim.counts.iter().sum::<u64>());
    }

    #[test]
    fn poisson_limit_has_calibrated_mean() {
        // With sigma2 = 0 the process is Poisson with rate exp(beta0).
        let grid = grid_4x4();
        let cov = CovarianceModel::exponential(0.0, 0.2).unwrap();
        let rate = 120.0f64;
        let model = UnitypeModel::stationary(rate.ln(), cov, &grid);
        let mut ws = FieldWorkspace::new(&cov, &grid).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let reps = 300;
        let mut total = 0u64;
        for _ in 0..reps {
            total += model.simulate(&mut ws, &mut rng).unwrap().pattern.n() as u64;
        }
        let mean = total as f64 / reps as f64;
        // Expected count 120 per window, se = sqrt(120/300) ~ 0.63.
        assert!((mean - rate).abs() < 4.0 * (rate / reps as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn theoretical_k_reduces_to_poisson_when_flat() {
        let cov = CovarianceModel::exponential(0.0, 5.0).unwrap();
        for &u in &[0.0, 1.0, 10.0] {
            assert_eq!(theoretical_k(&cov, u).unwrap(), std::f64::consts::PI * u * u);
        }
    }

    #[test]
    fn theoretical_k_matches_reference_values() {
        // Frozen from an independent arbitrary-precision quadrature.
        let cases: &[(f64, f64, f64, f64, f64)] = &[
            (1.0, 0.1, 0.5, 0.05, 0.016225809503178799),
            (1.0, 0.1, 0.5, 0.25, 0.25001169695005466),
            (2.0, 5.0, 1.5, 10.0, 1146.2049238935538),
            (0.25, 12.66, 0.5, 25.0, 2118.7201048906384),
        ];
        for &(sigma2, phi, kappa, u, expected) in cases {
            let cov = CovarianceModel::matern(sigma2, phi, kappa).unwrap();
            assert_relative_eq!(theoretical_k(&cov, u).unwrap(), expected, max_relative = 1e-9);
        }
    }

    #[test]
    fn theoretical_k_grows_with_clustering() {
        let u = 0.3;
        let mut last = theoretical_k(&CovarianceModel::exponential(0.0, 0.1).unwrap(), u).unwrap();
        for &s2 in &[0.5, 1.0, 2.0] {
            let k = theoretical_k(&CovarianceModel::exponential(s2, 0.1).unwrap(), u).unwrap();
            assert!(k > last);
            last = k;
        }
    }

    #[test]
    fn cross_covariance_examples() {
        // Independent types: zero correlation gives zero covariance density.
        assert_eq!(
            cross_covariance_density(5.0, 3.0, 1.0, 2.0, |_| 0.0, 1.0).unwrap(),
            0.0
        );
        let g = cross_covariance_density(5.0, 3.0, 1.0, 2.0, |u: f64| (-u).exp(), 1.0).unwrap();
        let expect = 15.0 * ((2.0 * (-1.0f64).exp()).exp() - 1.0);
        assert_relative_eq!(g, expect, max_relative = 1e-12);
        // Negative cross correlation gives a negative density.
        let neg = cross_covariance_density(5.0, 3.0, 1.0, 2.0, |_| -0.5, 1.0).unwrap();
        assert!(neg < 0.0);
        assert!(cross_covariance_density(5.0, 3.0, 1.0, 2.0, |_| 1.5, 1.0).is_err());
    }

    #[test]
    fn multitype_loglik_is_sum_of_type_logliks() {
        let grid = grid_4x4();
        let cov = CovarianceModel::exponential(0.7, 0.3).unwrap();
        let model =
            MultitypeModel::new(vec![0.5, -0.2, 1.0], vec![1.0; 16], cov, &grid).unwrap();
        let mut ws = FieldWorkspace::new(&cov, &grid).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let gammas: Vec<WhitenedField> = (0..3)
            .map(|_| WhitenedField::standard_normal(grid.n_ext_cells(), &mut rng))
            .collect();
        let counts: Vec<Vec<f64>> = (0..3)
            .map(|t| (0..16).map(|k| ((k + t) % 3) as f64).collect())
            .collect();
        let joint = model.multitype_loglik(&mut ws, &gammas, &counts).unwrap();
        let mut sum = 0.0;
        for k in 0..3 {
            let single = UnitypeModel::stationary(model.betas[k], cov, &grid)
                .cell_loglik(&mut ws, &gammas[k], &counts[k])
                .unwrap();
            sum += single.loglik;
            assert_relative_eq!(joint.grad_betas[k], single.grad_beta[0], epsilon = 1e-10);
        }
        assert_relative_eq!(joint.loglik, sum, max_relative = 1e-12);
    }

    #[test]
    fn type_probabilities_sum_to_one() {
        let betas = vec![0.2, -0.5];
        let s = vec![vec![0.5, -10.0, 3.0], vec![0.0, 4.0, 3.0]];
        let p = type_probabilities(&betas, &s).unwrap();
        for cell in 0..3 {
            let total: f64 = (0..2).map(|k| p[k][cell]).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        }
        // Cell 1: type 2 dominates by 14 on the log scale.
        assert!(p[1][1] > 0.999);
    }

    #[test]
    fn st_evolution_satisfies_the_recursion_exactly() {
        let grid = grid_4x4();
        let spatial = CovarianceModel::exponential(0.9, 0.2).unwrap();
        let cov = SeparableStCovariance::new(spatial, 0.6).unwrap();
        let model = StModel::new(cov, vec![1.0; 16], vec![1.0; 4], &grid).unwrap();
        let mut ws = FieldWorkspace::new(&spatial, &grid).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let innovations: Vec<WhitenedField> = (0..4)
            .map(|_| WhitenedField::standard_normal(grid.n_ext_cells(), &mut rng))
            .collect();
        let fields = model.st_evolve(&mut ws, &innovations).unwrap();
        let mean = -0.45;
        let fresh = (1.0f64 - 0.36).sqrt();
        let mut shock = Vec::new();
        for t in 1..4 {
            ws.apply_sqrt_cov(&innovations[t].0, &mut shock);
            for i in 0..grid.n_ext_cells() {
                let expect = mean + 0.6 * (fields[t - 1].0[i] - mean) + fresh * shock[i];
                assert_relative_eq!(fields[t].0[i], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn st_marginals_are_stationary() {
        // The variance at late times must match the spatial model, not grow.
        let grid = GridSpec::build(Window::new(0.0, 0.0, 1.0, 1.0).unwrap(), 4, 4, 2.0).unwrap();
        let spatial = CovarianceModel::exponential(1.0, 0.2).unwrap();
        let cov = SeparableStCovariance::new(spatial, 0.8).unwrap();
        let model = StModel::new(cov, vec![1.0; 16], vec![1.0; 6], &grid).unwrap();
        let mut ws = FieldWorkspace::new(&spatial, &grid).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let reps = 2000;
        let cell = grid.obs_to_ext(5);
        let (mut m1, mut m2, mut mlast, mut vlast) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..reps {
            let innovations: Vec<WhitenedField> = (0..6)
                .map(|_| WhitenedField::standard_normal(grid.n_ext_cells(), &mut rng))
                .collect();
            let fields = model.st_evolve(&mut ws, &innovations).unwrap();
            m1 += fields[0].0[cell];
            m2 += fields[0].0[cell] * fields[0].0[cell];
            mlast += fields[5].0[cell];
            vlast += fields[5].0[cell] * fields[5].0[cell];
        }
        let var_first = m2 / reps as f64 - (m1 / reps as f64).powi(2);
        let var_last = vlast / reps as f64 - (mlast / reps as f64).powi(2);
        // Var = sigma2 = 1 at every step; 4 standard errors ~ 0.13.
        assert!((var_first - 1.0).abs() < 0.15, "first-step variance {var_first}");
        assert!((var_last - 1.0).abs() < 0.15, "last-step variance {var_last}");
        assert!((mlast / reps as f64 + 0.5).abs() < 0.1);
    }

    #[test]
    fn st_simulation_returns_consistent_shapes() {
        let grid = grid_4x4();
        let spatial = CovarianceModel::exponential(0.5, 0.3).unwrap();
        let cov = SeparableStCovariance::new(spatial, 0.4).unwrap();
        let model = StModel::new(cov, vec![20.0; 16], vec![0.5, 1.0, 2.0], &grid).unwrap();
        let mut ws = FieldWorkspace::new(&spatial, &grid).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let sim = model.simulate(&mut ws, &mut rng).unwrap();
        assert_eq!(sim.counts.len(), 3);
        assert_eq!(sim.fields_obs.len(), 3);
        let total: u64 = sim.counts.iter().flatten().sum();
        assert_eq!(sim.pattern.n() as u64, total);
        let by_time = crate::grid::bin_points_by_time(&sim.pattern, &grid, 3).unwrap();
        for t in 0..3 {
            assert_eq!(by_time[t], sim.counts[t]);
        }
    }
}

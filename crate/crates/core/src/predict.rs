//! Posterior summary surfaces: percentile and exceedance maps, multitype
//! probability surfaces, segregation sets, and aggregated risk reports.
//!
//! Functionals are evaluated on demand from the stored field and coefficient
//! draws, so one chain supports any number of derived maps.

use crate::error::{LgcpError, Result};
use crate::grid::GridSpec;
use crate::mcmc::PosteriorSamples;
use crate::models::type_probabilities;

/// Sentinel written to cells outside the observation region.
pub const NODATA: f64 = -9999.0;

/// Fewest retained draws accepted by the surface builders.
pub const MIN_SAMPLES: usize = 100;

/// A rectangular grid of per-cell values aligned with an observation grid.
/// Values are stored row-major with `iy * nx + ix`, row zero at the bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    nx: usize,
    ny: usize,
    xll: f64,
    yll: f64,
    cell_width: f64,
    cell_height: f64,
    nodata: f64,
    values: Vec<f64>,
}

impl Raster {
    pub fn from_parts(
        nx: usize,
        ny: usize,
        xll: f64,
        yll: f64,
        cell_width: f64,
        cell_height: f64,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(LgcpError::invalid("raster needs at least one cell"));
        }
        if !(cell_width > 0.0 && cell_height > 0.0) {
            return Err(LgcpError::invalid("raster cell sides must be positive"));
        }
        if values.len() != nx * ny {
            return Err(LgcpError::invalid(format!(
                "raster expects {} values, got {}",
                nx * ny,
                values.len()
            )));
        }
        Ok(Raster { nx, ny, xll, yll, cell_width, cell_height, nodata, values })
    }

    /// Wraps per-cell values laid out like the observation cells of `grid`.
    pub fn over_grid(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        let w = grid.window();
        Self::from_parts(
            grid.nx(),
            grid.ny(),
            w.xmin,
            w.ymin,
            grid.cell_width(),
            grid.cell_height(),
            NODATA,
            values,
        )
    }

    pub fn filled(grid: &GridSpec, value: f64) -> Self {
        Self::over_grid(grid, vec![value; grid.n_cells()]).expect("grid-shaped raster")
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn xll(&self) -> f64 {
        self.xll
    }

    pub fn yll(&self) -> f64 {
        self.yll
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn cell_height(&self) -> f64 {
        self.cell_height
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        self.values[iy * self.nx + ix] = v;
    }

    pub fn is_nodata(&self, ix: usize, iy: usize) -> bool {
        self.value(ix, iy) == self.nodata
    }
}

/// Per-cell quantity derived from one posterior draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Functional {
    /// `d(x) exp(z'beta + S)`: intensity per unit area.
    Intensity,
    /// `exp(S)`: risk adjusted for both the offset and the covariates.
    ExpS,
    /// `exp(z'beta + S)`: risk relative to the offset baseline.
    RelativeRisk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Above,
    Below,
}

/// Grid, offset, and covariates needed to turn stored draws into surfaces.
pub struct PredictionContext<'a> {
    grid: &'a GridSpec,
    offset: &'a [f64],
    covariates: &'a [Vec<f64>],
    samples: &'a PosteriorSamples,
}

impl<'a> PredictionContext<'a> {
    pub fn new(
        grid: &'a GridSpec,
        offset: &'a [f64],
        covariates: &'a [Vec<f64>],
        samples: &'a PosteriorSamples,
    ) -> Result<Self> {
        let n = grid.n_cells();
        if samples.n_fields != 1 {
            return Err(LgcpError::invalid("expected draws from a single-field chain"));
        }
        if samples.n_obs_cells != n {
            return Err(LgcpError::invalid(format!(
                "draws cover {} cells but the grid has {n}",
                samples.n_obs_cells
            )));
        }
        if offset.len() != n {
            return Err(LgcpError::invalid("offset length must match the grid"));
        }
        if covariates.iter().any(|c| c.len() != n) {
            return Err(LgcpError::invalid("covariate lengths must match the grid"));
        }
        let p = 1 + covariates.len();
        if samples.beta.iter().any(|b| b.len() != p) {
            return Err(LgcpError::invalid(format!(
                "draws carry a coefficient vector of the wrong length (expected {p})"
            )));
        }
        Ok(PredictionContext { grid, offset, covariates, samples })
    }

    pub fn grid(&self) -> &GridSpec {
        self.grid
    }

    pub fn n_draws(&self) -> usize {
        self.samples.n_retained()
    }

    /// Evaluates `functional` for one retained draw on every cell.
    fn functional_draw(&self, draw: usize, functional: Functional, out: &mut Vec<f64>) -> Result<()> {
        let n = self.grid.n_cells();
        let beta = &self.samples.beta[draw];
        let s = &self.samples.s_obs[draw];
        out.clear();
        for cell in 0..n {
            let mut eta = beta[0];
            for (j, cov) in self.covariates.iter().enumerate() {
                eta += beta[j + 1] * cov[cell];
            }
            let v = match functional {
                Functional::Intensity => self.offset[cell] * (eta + s[cell]).exp(),
                Functional::ExpS => s[cell].exp(),
                Functional::RelativeRisk => (eta + s[cell]).exp(),
            };
            if !v.is_finite() {
                return Err(LgcpError::NumericalOverflow {
                    max_linear_predictor: eta + s[cell],
                });
            }
            out.push(v);
        }
        Ok(())
    }

    fn require_draws(&self) -> Result<usize> {
        let have = self.n_draws();
        if have < MIN_SAMPLES {
            return Err(LgcpError::InsufficientSamples { have, need: MIN_SAMPLES });
        }
        Ok(have)
    }
}

/// Empirical `p`-quantile of `values` by the nearest-rank rule: the entry at
/// rank `ceil(p n)` of the sorted sample. `p` must lie in `(0, 1]`.
pub fn nearest_rank_quantile(values: &mut [f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(LgcpError::invalid("quantile of an empty sample"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(LgcpError::invalid("quantile level must lie in (0, 1]"));
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let rank = (p * values.len() as f64).ceil() as usize;
    Ok(values[rank.clamp(1, values.len()) - 1])
}

/// Pointwise `p`-quantile of a functional across the retained draws.
pub fn percentile_surface(
    ctx: &PredictionContext,
    functional: Functional,
    p: f64,
) -> Result<Raster> {
    let draws = ctx.require_draws()?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(LgcpError::invalid("quantile level must lie in (0, 1]"));
    }
    let n = ctx.grid.n_cells();
    let mut per_cell = vec![Vec::with_capacity(draws); n];
    let mut draw_values = Vec::with_capacity(n);
    for d in 0..draws {
        ctx.functional_draw(d, functional, &mut draw_values)?;
        for (cell, v) in draw_values.iter().enumerate() {
            per_cell[cell].push(*v);
        }
    }
    let mut out = Vec::with_capacity(n);
    for column in per_cell.iter_mut() {
        out.push(nearest_rank_quantile(column, p)?);
    }
    Raster::over_grid(ctx.grid, out)
}

/// Pointwise posterior probability that a functional falls strictly above
/// (or below) `threshold`.
pub fn exceedance_probability(
    ctx: &PredictionContext,
    functional: Functional,
    threshold: f64,
    direction: Direction,
) -> Result<Raster> {
    let draws = ctx.require_draws()?;
    if !threshold.is_finite() {
        return Err(LgcpError::invalid("threshold must be finite"));
    }
    let n = ctx.grid.n_cells();
    let mut counts = vec![0usize; n];
    let mut draw_values = Vec::with_capacity(n);
    for d in 0..draws {
        ctx.functional_draw(d, functional, &mut draw_values)?;
        for (cell, v) in draw_values.iter().enumerate() {
            let hit = match direction {
                Direction::Above => *v > threshold,
                Direction::Below => *v < threshold,
            };
            if hit {
                counts[cell] += 1;
            }
        }
    }
    let out = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    Raster::over_grid(ctx.grid, out)
}

/// Draws from a multitype chain: one field and one intercept per type.
pub struct MultitypePrediction<'a> {
    grid: &'a GridSpec,
    samples: &'a PosteriorSamples,
}

impl<'a> MultitypePrediction<'a> {
    pub fn new(grid: &'a GridSpec, samples: &'a PosteriorSamples) -> Result<Self> {
        if samples.n_fields < 2 {
            return Err(LgcpError::invalid("multitype surfaces need at least two types"));
        }
        if samples.n_obs_cells != grid.n_cells() {
            return Err(LgcpError::invalid(format!(
                "draws cover {} cells but the grid has {}",
                samples.n_obs_cells,
                grid.n_cells()
            )));
        }
        if samples.beta.iter().any(|b| b.len() != samples.n_fields) {
            return Err(LgcpError::invalid("expected one intercept per type"));
        }
        Ok(MultitypePrediction { grid, samples })
    }

    pub fn n_types(&self) -> usize {
        self.samples.n_fields
    }

    fn require_draws(&self) -> Result<usize> {
        let have = self.samples.n_retained();
        if have < MIN_SAMPLES {
            return Err(LgcpError::InsufficientSamples { have, need: MIN_SAMPLES });
        }
        Ok(have)
    }

    /// Conditional type probabilities for one retained draw.
    fn draw_probabilities(&self, draw: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.samples.n_obs_cells;
        let m = self.samples.n_fields;
        let s = &self.samples.s_obs[draw];
        let fields: Vec<Vec<f64>> = (0..m).map(|k| s[k * n..(k + 1) * n].to_vec()).collect();
        type_probabilities(&self.samples.beta[draw], &fields)
    }
}

/// Posterior mean of the conditional type probabilities, one raster per
/// type. The rasters sum to one cell by cell.
pub fn type_probability_surfaces(mp: &MultitypePrediction) -> Result<Vec<Raster>> {
    let draws = mp.require_draws()?;
    let n = mp.samples.n_obs_cells;
    let m = mp.n_types();
    let mut means = vec![vec![0.0; n]; m];
    for d in 0..draws {
        let probs = mp.draw_probabilities(d)?;
        for k in 0..m {
            for cell in 0..n {
                means[k][cell] += probs[k][cell];
            }
        }
    }
    means
        .into_iter()
        .map(|mut mk| {
            for v in mk.iter_mut() {
                *v /= draws as f64;
            }
            Raster::over_grid(mp.grid, mk)
        })
        .collect()
}

/// Cells where one type dominates with high posterior confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct SegregationSet {
    pub type_index: usize,
    /// Dominance threshold on the conditional probability.
    pub dominance: f64,
    /// Confidence level on the posterior probability of dominance.
    pub confidence: f64,
    /// Observation-cell indices, ascending.
    pub cells: Vec<usize>,
}

/// For each type and each confidence level in `q_list`, the set of cells
/// whose posterior probability of `p_k(x) > c` exceeds that level. Sets for
/// the same type shrink as the level grows.
pub fn segregation_sets(
    mp: &MultitypePrediction,
    c: f64,
    q_list: &[f64],
) -> Result<Vec<Vec<SegregationSet>>> {
    let draws = mp.require_draws()?;
    if !(c > 0.0 && c < 1.0) {
        return Err(LgcpError::invalid("dominance threshold must lie in (0, 1)"));
    }
    if q_list.iter().any(|q| !(*q >= 0.0 && *q < 1.0)) {
        return Err(LgcpError::invalid("confidence levels must lie in [0, 1)"));
    }
    let n = mp.samples.n_obs_cells;
    let m = mp.n_types();
    let mut dominate = vec![vec![0usize; n]; m];
    for d in 0..draws {
        let probs = mp.draw_probabilities(d)?;
        for k in 0..m {
            for cell in 0..n {
                if probs[k][cell] > c {
                    dominate[k][cell] += 1;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(m);
    for (k, counts) in dominate.iter().enumerate() {
        let mut per_q = Vec::with_capacity(q_list.len());
        for &q in q_list {
            let cells = counts
                .iter()
                .enumerate()
                .filter(|(_, &cnt)| cnt as f64 / draws as f64 > q)
                .map(|(cell, _)| cell)
                .collect();
            per_q.push(SegregationSet { type_index: k, dominance: c, confidence: q, cells });
        }
        out.push(per_q);
    }
    Ok(out)
}

/// Multiplicative effect of one covariate: posterior quantiles of
/// `exp(beta_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateEffect {
    pub name: String,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

/// Summary maps and effect table for an offset-plus-covariates fit.
#[derive(Clone, Debug)]
pub struct RiskReport {
    pub effects: Vec<CovariateEffect>,
    /// Posterior mean of `exp(S)` per cell.
    pub relative_risk: Raster,
    /// Log of the posterior variance of `exp(S)` per cell.
    pub log_variance: Raster,
    /// Posterior probability that `exp(S)` exceeds `RISK_THRESHOLD`.
    pub exceedance: Raster,
}

/// Exceedance level reported for covariate-adjusted relative risk.
pub const RISK_THRESHOLD: f64 = 1.1;

/// Builds the standard report for an aggregated-count fit: multiplicative
/// covariate effects with 95% intervals, the covariate-adjusted relative
/// risk surface, its pointwise variance on the log scale, and the
/// probability that risk exceeds [`RISK_THRESHOLD`].
pub fn aggregated_risk_report(
    ctx: &PredictionContext,
    covariate_names: &[String],
) -> Result<RiskReport> {
    let draws = ctx.require_draws()?;
    if covariate_names.len() != ctx.covariates.len() {
        return Err(LgcpError::invalid(format!(
            "{} covariate names given for {} covariates",
            covariate_names.len(),
            ctx.covariates.len()
        )));
    }
    let mut effects = Vec::with_capacity(covariate_names.len());
    for (j, name) in covariate_names.iter().enumerate() {
        let mut draws_j: Vec<f64> =
            ctx.samples.beta.iter().map(|b| b[j + 1].exp()).collect();
        let lower = nearest_rank_quantile(&mut draws_j, 0.025)?;
        let median = nearest_rank_quantile(&mut draws_j, 0.5)?;
        let upper = nearest_rank_quantile(&mut draws_j, 0.975)?;
        effects.push(CovariateEffect { name: name.clone(), lower, median, upper });
    }

    let n = ctx.grid.n_cells();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut above = vec![0usize; n];
    let mut draw_values = Vec::with_capacity(n);
    for d in 0..draws {
        ctx.functional_draw(d, Functional::ExpS, &mut draw_values)?;
        for (cell, v) in draw_values.iter().enumerate() {
            sum[cell] += *v;
            sum_sq[cell] += *v * *v;
            if *v > RISK_THRESHOLD {
                above[cell] += 1;
            }
        }
    }
    let nf = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let log_var: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            let var = (sq - nf * m * m) / (nf - 1.0);
            // A constant chain yields zero variance; floor it so the log
            // stays finite.
            var.max(f64::MIN_POSITIVE).ln()
        })
        .collect();
    let exceed: Vec<f64> = above.iter().map(|&c| c as f64 / nf).collect();

    Ok(RiskReport {
        effects,
        relative_risk: Raster::over_grid(ctx.grid, mean)?,
        log_variance: Raster::over_grid(ctx.grid, log_var)?,
        exceedance: Raster::over_grid(ctx.grid, exceed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Window;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::build(Window::new(0.0, 0.0, 1.0, 1.0).unwrap(), nx, ny, 2.0).unwrap()
    }

    fn blank_samples(n_fields: usize, n: usize) -> PosteriorSamples {
        PosteriorSamples {
            n_fields,
            n_obs_cells: n,
            burnin: 0,
            thin: 1,
            iterations: Vec::new(),
            log_posterior: Vec::new(),
            beta: Vec::new(),
            sigma: Vec::new(),
            phi: Vec::new(),
            s_obs: Vec::new(),
            gamma: None,
            accept_probs: Vec::new(),
            accepted: Vec::new(),
            final_step: 1.0,
        }
    }

    fn push_draw(samples: &mut PosteriorSamples, beta: Vec<f64>, s: Vec<f64>) {
        samples.iterations.push(samples.iterations.len() as u64 + 1);
        samples.log_posterior.push(0.0);
        samples.beta.push(beta);
        samples.sigma.push(1.0);
        samples.phi.push(0.1);
        samples.s_obs.push(s);
    }

    #[test]
    fn nearest_rank_matches_hand_examples() {
        let mut three = vec![3.0, 1.0, 2.0];
        assert_eq!(nearest_rank_quantile(&mut three, 0.5).unwrap(), 2.0);
        let mut ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank_quantile(&mut ten, 0.025).unwrap(), 1.0);
        assert_eq!(nearest_rank_quantile(&mut ten, 0.5).unwrap(), 5.0);
        assert_eq!(nearest_rank_quantile(&mut ten, 0.975).unwrap(), 10.0);
        assert_eq!(nearest_rank_quantile(&mut ten, 1.0).unwrap(), 10.0);
        assert!(nearest_rank_quantile(&mut ten, 0.0).is_err());
    }

    #[test]
    fn constant_chain_returns_that_draw_everywhere() {
        let g = grid(3, 2);
        let n = g.n_cells();
        let mut samples = blank_samples(1, n);
        for _ in 0..120 {
            push_draw(&mut samples, vec![0.7], vec![0.3; n]);
        }
        let offset = vec![1.0; n];
        let ctx = PredictionContext::new(&g, &offset, &[], &samples).unwrap();
        let surf = percentile_surface(&ctx, Functional::RelativeRisk, 0.5).unwrap();
        for &v in surf.values() {
            assert_relative_eq!(v, 1.0_f64.exp(), max_relative = 1e-12);
        }
        let intensity = percentile_surface(&ctx, Functional::Intensity, 0.9).unwrap();
        for &v in intensity.values() {
            assert_relative_eq!(v, 1.0_f64.exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn too_few_draws_are_rejected() {
        let g = grid(2, 2);
        let n = g.n_cells();
        let mut samples = blank_samples(1, n);
        for _ in 0..99 {
            push_draw(&mut samples, vec![0.0], vec![0.0; n]);
        }
        let offset = vec![1.0; n];
        let ctx = PredictionContext::new(&g, &offset, &[], &samples).unwrap();
        let err = percentile_surface(&ctx, Functional::ExpS, 0.5).unwrap_err();
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn median_of_prior_draws_matches_the_lognormal_median() {
        // With S ~ N(-1/2, 1) per cell, the median of exp(S) is exp(-1/2).
        let g = grid(16, 16);
        let n = g.n_cells();
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let mut samples = blank_samples(1, n);
        for _ in 0..500 {
            let s: Vec<f64> =
                (0..n).map(|_| -0.5 + rng.sample::<f64, _>(StandardNormal)).collect();
            push_draw(&mut samples, vec![0.0], s);
        }
        let offset = vec![1.0; n];
        let ctx = PredictionContext::new(&g, &offset, &[], &samples).unwrap();
        let surf = percentile_surface(&ctx, Functional::ExpS, 0.5).unwrap();
        let mean_median = surf.values().iter().sum::<f64>() / n as f64;
        assert_relative_eq!(mean_median, (-0.5_f64).exp(), max_relative = 0.02);
    }

    #[test]
    fn quantile_surfaces_are_monotone_in_level() {
        let g = grid(4, 4);
        let n = g.n_cells();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut samples = blank_samples(1, n);
        for _ in 0..150 {
            let s: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            push_draw(&mut samples, vec![rng.gen_range(-0.2..0.2)], s);
        }
        let offset = vec![1.0; n];
        let ctx = PredictionContext::new(&g, &offset, &[], &samples).unwrap();
        let lo = percentile_surface(&ctx, Functional::Intensity, 0.25).unwrap();
        let mid = percentile_surface(&ctx, Functional::Intensity, 0.5).unwrap();
        let hi = percentile_surface(&ctx, Functional::Intensity, 0.75).unwrap();
        for i in 0..n {
            assert!(lo.values()[i] <= mid.values()[i]);
            assert!(mid.values()[i] <= hi.values()[i]);
        }
    }

    #[test]
    fn exceedance_hits_the_trivial_bounds_and_stays_antitone() {
        let g = grid(4, 4);
        let n = g.n_cells();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut samples = blank_samples(1, n);
        for _ in 0..200 {
            let s: Vec<f64> =
                (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
            push_draw(&mut samples, vec![0.0], s);
        }
        let offset = vec![1.0; n];
        let ctx = PredictionContext::new(&g, &offset, &[], &samples).unwrap();

        let certain =
            exceedance_probability(&ctx, Functional::ExpS, 0.0, Direction::Above).unwrap();
        assert!(certain.values().iter().all(|&v| v == 1.0));

        let mut prev: Option<Raster> = None;
        for threshold in [2.0, 4.0, 8.0] {
            let r =
                exceedance_probability(&ctx, Functional::ExpS, threshold, Direction::Above)
                    .unwrap();
            assert!(r.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
            if let Some(p) = &prev {
                for i in 0..n {
                    assert!(r.values()[i] <= p.values()[i]);
                }
            }
            prev = Some(r);
        }

        let below =
            exceedance_probability(&ctx, Functional::ExpS, 1.0, Direction::Below).unwrap();
        let above =
            exceedance_probability(&ctx, Functional::ExpS, 1.0, Direction::Above).unwrap();
        for i in 0..n {
            assert_relative_eq!(below.values()[i] + above.values()[i], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_field_never_exceeds_two() {
        let g = grid(3, 3);
        let n = g.n_cells();
        let mut samples = blank_samples(1, n);
        for _ in 0..100 {
            push_draw(&mut samples, vec![0.0], vec![0.0; n]);
        }
        let offset = vec![1.0; n];
        let ctx = PredictionContext::new(&g, &offset, &[], &samples).unwrap();
        let r = exceedance_probability(&ctx, Functional::ExpS, 2.0, Direction::Above).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.0));
    }

    fn symmetric_two_type_samples(
        g: &GridSpec,
        draws: usize,
        noise: f64,
        seed: u64,
    ) -> PosteriorSamples {
        let n = g.n_cells();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut samples = blank_samples(2, n);
        for _ in 0..draws {
            let mut s = Vec::with_capacity(2 * n);
            for _ in 0..2 * n {
                s.push(noise * rng.sample::<f64, _>(StandardNormal));
            }
            push_draw(&mut samples, vec![0.4, 0.4], s);
        }
        samples
    }

    #[test]
    fn symmetric_types_split_evenly_and_sum_to_one() {
        let g = grid(5, 5);
        let samples = symmetric_two_type_samples(&g, 400, 0.3, 13);
        let mp = MultitypePrediction::new(&g, &samples).unwrap();
        let surfaces = type_probability_surfaces(&mp).unwrap();
        assert_eq!(surfaces.len(), 2);
        for cell in 0..g.n_cells() {
            let total: f64 = surfaces.iter().map(|r| r.values()[cell]).sum();
            assert!((total - 1.0).abs() < 1e-10);
            assert!((surfaces[0].values()[cell] - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn east_west_split_recovers_the_partition() {
        let g = grid(8, 8);
        let n = g.n_cells();
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let mut samples = blank_samples(2, n);
        for _ in 0..150 {
            let mut s = vec![0.0; 2 * n];
            for iy in 0..g.ny() {
                for ix in 0..g.nx() {
                    let cell = g.obs_index(ix, iy);
                    let east = ix >= g.nx() / 2;
                    let lean = if east { 1.0 } else { -1.0 };
                    let jitter: f64 = rng.sample(StandardNormal);
                    s[cell] = lean + 0.4 * jitter;
                    let jitter: f64 = rng.sample(StandardNormal);
                    s[n + cell] = -lean + 0.4 * jitter;
                }
            }
            push_draw(&mut samples, vec![0.0, 0.0], s);
        }
        let mp = MultitypePrediction::new(&g, &samples).unwrap();
        let surfaces = type_probability_surfaces(&mp).unwrap();
        let mut east_cells = 0;
        let mut east_recovered = 0;
        for iy in 0..g.ny() {
            for ix in g.nx() / 2..g.nx() {
                east_cells += 1;
                if surfaces[0].values()[g.obs_index(ix, iy)] > 0.5 {
                    east_recovered += 1;
                }
            }
        }
        assert!(
            east_recovered as f64 >= 0.9 * east_cells as f64,
            "recovered {east_recovered} of {east_cells} east cells"
        );
    }

    #[test]
    fn segregation_sets_nest_in_confidence_and_dominance() {
        let g = grid(8, 8);
        let n = g.n_cells();
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let mut samples = blank_samples(2, n);
        for _ in 0..150 {
            let mut s = vec![0.0; 2 * n];
            for cell in 0..n {
                let tilt = 2.0 * (cell as f64 / n as f64) - 1.0;
                let jitter: f64 = rng.sample(StandardNormal);
                s[cell] = tilt + 0.6 * jitter;
                let jitter: f64 = rng.sample(StandardNormal);
                s[n + cell] = -tilt + 0.6 * jitter;
            }
            push_draw(&mut samples, vec![0.0, 0.0], s);
        }
        let mp = MultitypePrediction::new(&g, &samples).unwrap();
        let qs = [0.6, 0.7, 0.8, 0.9];
        let sets = segregation_sets(&mp, 0.6, &qs).unwrap();
        for per_type in &sets {
            for w in per_type.windows(2) {
                assert!(w[1].cells.iter().all(|c| w[0].cells.contains(c)));
                assert!(w[1].cells.len() <= w[0].cells.len());
            }
        }
        assert!(!sets[0][0].cells.is_empty(), "gradient should dominate somewhere");

        let tight = segregation_sets(&mp, 0.8, &qs).unwrap();
        for (loose_t, tight_t) in sets.iter().zip(&tight) {
            for (a, b) in loose_t.iter().zip(tight_t) {
                assert!(b.cells.iter().all(|c| a.cells.contains(c)));
            }
        }
    }

    #[test]
    fn zero_confidence_keeps_every_cell_with_mass() {
        let g = grid(4, 4);
        let samples = symmetric_two_type_samples(&g, 120, 2.0, 17);
        let mp = MultitypePrediction::new(&g, &samples).unwrap();
        let sets = segregation_sets(&mp, 0.5, &[0.0]).unwrap();
        // With large noise every cell sees p > 0.5 in at least one draw.
        assert_eq!(sets[0][0].cells.len(), g.n_cells());
    }

    #[test]
    fn symmetric_model_leaves_strict_sets_empty() {
        let g = grid(5, 5);
        let samples = symmetric_two_type_samples(&g, 400, 0.2, 19);
        let mp = MultitypePrediction::new(&g, &samples).unwrap();
        let sets = segregation_sets(&mp, 0.8, &[0.6]).unwrap();
        assert!(sets[0][0].cells.is_empty());
        assert!(sets[1][0].cells.is_empty());
    }

    #[test]
    fn identical_draws_collapse_the_effect_table() {
        let g = grid(3, 3);
        let n = g.n_cells();
        let mut samples = blank_samples(1, n);
        for _ in 0..150 {
            push_draw(&mut samples, vec![0.2, -0.1], vec![0.05; n]);
        }
        let offset = vec![1.0; n];
        let covs = vec![vec![0.5; n]];
        let ctx = PredictionContext::new(&g, &offset, &covs, &samples).unwrap();
        let report = aggregated_risk_report(&ctx, &["illiteracy".to_string()]).unwrap();
        assert_eq!(report.effects.len(), 1);
        let e = &report.effects[0];
        assert_eq!(e.lower, e.median);
        assert_eq!(e.median, e.upper);
        assert_relative_eq!(e.median, (-0.1_f64).exp(), max_relative = 1e-12);
        for &v in report.relative_risk.values() {
            assert_relative_eq!(v, 0.05_f64.exp(), max_relative = 1e-12);
        }
        for &v in report.exceedance.values() {
            assert_eq!(v, 0.0);
        }
        for &v in report.log_variance.values() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn risk_report_summarises_synthetic_draws() {
        let g = grid(6, 6);
        let n = g.n_cells();
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let mut samples = blank_samples(1, n);
        for _ in 0..400 {
            let beta1 = 0.12 + 0.02 * rng.sample::<f64, _>(StandardNormal);
            let s: Vec<f64> =
                (0..n).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
            push_draw(&mut samples, vec![1.0, beta1], s);
        }
        let offset = vec![1.0; n];
        let covs = vec![vec![0.0; n]];
        let ctx = PredictionContext::new(&g, &offset, &covs, &samples).unwrap();
        let report = aggregated_risk_report(&ctx, &["effect".to_string()]).unwrap();
        let e = &report.effects[0];
        assert!(e.lower < e.median && e.median < e.upper);
        assert!(e.lower > 1.0, "a clearly positive effect excludes one");
        // Mean of exp(S) under S ~ N(0, 0.09) is exp(0.045).
        let mean_rr =
            report.relative_risk.values().iter().sum::<f64>() / n as f64;
        assert_relative_eq!(mean_rr, (0.045_f64).exp(), max_relative = 0.03);
        for &v in report.exceedance.values() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn raster_round_trips_indices_and_rejects_bad_shapes() {
        let g = grid(3, 2);
        let mut r = Raster::filled(&g, 0.0);
        r.set(2, 1, 5.0);
        assert_eq!(r.value(2, 1), 5.0);
        assert_eq!(r.values()[1 * 3 + 2], 5.0);
        assert!(!r.is_nodata(0, 0));
        r.set(0, 0, NODATA);
        assert!(r.is_nodata(0, 0));
        assert!(Raster::over_grid(&g, vec![0.0; 5]).is_err());
        assert!(Raster::from_parts(2, 2, 0.0, 0.0, -1.0, 1.0, NODATA, vec![0.0; 4]).is_err());
    }
}

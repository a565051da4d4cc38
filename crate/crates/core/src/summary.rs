//! Second-moment summaries of point patterns: the reduced second moment
//! (K) function with translation edge correction, a discrepancy between
//! empirical and theoretical K on a transformed scale, and minimum-contrast
//! fitting of the field parameters.

use crate::covariance::{CorrelationFamily, CovarianceModel};
use crate::error::{LgcpError, Result};
use crate::grid::PointPattern;
use crate::optim::nelder_mead;
use crate::quadrature::{adaptive_simpson, trapezoid};

/// Empirical K function on an evenly spaced distance grid starting at zero.
#[derive(Clone, Debug)]
pub struct KEstimate {
    /// Distances `0 = u[0] < u[1] < ... = u_max`.
    pub u: Vec<f64>,
    /// `k_hat[j]` estimates `K(u[j])`; `k_hat[0] = 0`.
    pub k_hat: Vec<f64>,
    pub n_points: usize,
    pub area: f64,
}

/// Estimates K with the translation edge correction:
/// `K_hat(u) = |A| n^-2 sum_{i != j} 1(d_ij <= u) / w_ij` with
/// `w_ij = (W - |dx|)(H - |dy|) / (W H)` for a rectangular window.
///
/// Requires at least two points and `u_max` no larger than half the shorter
/// window side. Coincident pairs are counted from the first positive
/// distance so that `K_hat(0) = 0` always holds.
pub fn estimate_k(pattern: &PointPattern, u_max: f64, n_bins: usize) -> Result<KEstimate> {
    let n = pattern.n();
    if n < 2 {
        return Err(LgcpError::InsufficientData(format!(
            "K estimation needs at least 2 points, got {n}"
        )));
    }
    let win = pattern.window();
    let (w, h) = (win.width(), win.height());
    if !(u_max > 0.0) || u_max > 0.5 * w.min(h) {
        return Err(LgcpError::invalid(format!(
            "u_max must lie in (0, {}], got {u_max}",
            0.5 * w.min(h)
        )));
    }
    if n_bins == 0 {
        return Err(LgcpError::invalid("at least one distance bin required"));
    }
    let du = u_max / n_bins as f64;
    let mut increments = vec![0.0; n_bins + 1];
    let (xs, ys) = (pattern.xs(), pattern.ys());
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = (xs[i] - xs[j]).abs();
            let dy = (ys[i] - ys[j]).abs();
            let d = dx.hypot(dy);
            if d > u_max {
                continue;
            }
            let bin = ((d / du).ceil() as usize).max(1);
            // Ordered pairs: each unordered pair contributes twice with the
            // same weight.
            increments[bin] += 2.0 * (w * h) / ((w - dx) * (h - dy));
        }
    }
    let area = win.area();
    let scale = area / (n * n) as f64;
    let mut k_hat = Vec::with_capacity(n_bins + 1);
    let mut acc = 0.0;
    for inc in &increments {
        acc += inc;
        k_hat.push(scale * acc);
    }
    let u = (0..=n_bins).map(|j| j as f64 * du).collect();
    Ok(KEstimate { u, k_hat, n_points: n, area })
}

/// Theoretical K evaluated on an increasing grid, integrating incrementally
/// between consecutive grid points.
pub fn theoretical_k_grid(cov: &CovarianceModel, us: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(us.len());
    let mut acc = 0.0;
    let mut last = 0.0;
    for (i, &u) in us.iter().enumerate() {
        if !u.is_finite() || u < 0.0 || (i > 0 && u <= last) {
            return Err(LgcpError::invalid("distance grid must be increasing and >= 0"));
        }
        if cov.sigma2 > 0.0 && u > 0.0 {
            let integrand = |v: f64| (cov.sigma2 * cov.corr(v.abs())).exp_m1() * v;
            acc += adaptive_simpson(&integrand, last, u, 1e-12);
        }
        out.push(std::f64::consts::PI * u * u + 2.0 * std::f64::consts::PI * acc);
        last = u;
    }
    Ok(out)
}

/// Contrast between empirical and theoretical K:
/// `D = int_0^u0 weight(u) (K_hat^c(u) - K^c(u))^2 du`,
/// a trapezoid sum over the estimate's own grid restricted to `u <= u0`.
pub fn moment_discrepancy(
    k_est: &KEstimate,
    cov: &CovarianceModel,
    u0: f64,
    c: f64,
    weight: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    let u_max = *k_est.u.last().expect("estimate grid is nonempty");
    if !(u0 > 0.0) || u0 > u_max {
        return Err(LgcpError::invalid(format!(
            "u0 must lie in (0, {u_max}], got {u0}"
        )));
    }
    if !(c > 0.0) {
        return Err(LgcpError::invalid(format!("exponent must be positive, got {c}")));
    }
    let m = k_est.u.iter().take_while(|&&u| u <= u0).count();
    if m < 2 {
        return Err(LgcpError::invalid("u0 leaves fewer than two grid points"));
    }
    let us = &k_est.u[..m];
    let k_theory = theoretical_k_grid(cov, us)?;
    let ys: Vec<f64> = (0..m)
        .map(|j| {
            let diff = k_est.k_hat[j].powf(c) - k_theory[j].powf(c);
            weight(us[j]) * diff * diff
        })
        .collect();
    Ok(trapezoid(us, &ys))
}

/// Result of minimum-contrast fitting.
#[derive(Clone, Debug)]
pub struct MomentFit {
    pub model: CovarianceModel,
    pub discrepancy: f64,
    pub converged: bool,
}

/// Fits `(sigma2, phi)` of the given correlation family by minimizing the
/// moment discrepancy with unit weight. Deterministic: a fixed 5 x 5
/// log-scale multistart feeds a simplex search and the best end point wins.
pub fn fit_moments(
    k_est: &KEstimate,
    family: CorrelationFamily,
    u0: f64,
    c: f64,
) -> Result<MomentFit> {
    // Probe the objective once so argument errors surface immediately.
    let probe = CovarianceModel::with_family(family, 1.0, 0.25 * u0)?;
    moment_discrepancy(k_est, &probe, u0, c, &|_| 1.0)?;

    // The sigma box stops the search before exp(sigma^2 r) becomes so large
    // that the theoretical curve dwarfs anything an estimate could show;
    // sigma = e^2.5 already means a field variance above 140.
    let mut objective = |x: &[f64]| -> f64 {
        let (log_sigma, log_phi) = (x[0], x[1]);
        if !(-12.0..=2.5).contains(&log_sigma) || !(-20.0..=20.0).contains(&log_phi) {
            return f64::INFINITY;
        }
        let sigma = log_sigma.exp();
        let model = match CovarianceModel::with_family(family, sigma * sigma, log_phi.exp()) {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        let d = moment_discrepancy(k_est, &model, u0, c, &|_| 1.0).unwrap_or(f64::INFINITY);
        if d.is_nan() {
            f64::INFINITY
        } else {
            d
        }
    };

    let sigma_starts = [-1.6f64, -0.8, 0.0, 0.8, 1.6];
    let phi_starts: Vec<f64> = [-3.0f64, -1.9, -0.9, 0.0, 0.9]
        .iter()
        .map(|s| s + u0.ln())
        .collect();
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for &ls in &sigma_starts {
        for &lp in &phi_starts {
            let r = nelder_mead(&mut objective, &[ls, lp], &[0.4, 0.4], 1e-12, 400);
            if r.value.is_finite() && best.as_ref().map_or(true, |b| r.value < b.1) {
                best = Some((r.x, r.value, r.converged));
            }
        }
    }
    let (x, value, converged) =
        best.ok_or_else(|| LgcpError::OptimizationFailure("no start produced a finite contrast".into()))?;
    let sigma = x[0].exp();
    let model = CovarianceModel::with_family(family, sigma * sigma, x[1].exp())?;
    Ok(MomentFit { model, discrepancy: value, converged })
}

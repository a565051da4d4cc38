//! Stationary isotropic covariance models for the latent Gaussian field and
//! their circulant representation on the extended torus.
//!
//! A model is a variance `sigma2` times a correlation function `r(u)` with
//! `r(0) = 1`. The exponential family is `r(u) = exp(-u/phi)`; the Matern
//! family with smoothness `kappa` is
//! `r(u) = (u/phi)^kappa K_kappa(u/phi) / (2^(kappa-1) Gamma(kappa))`,
//! which reduces to the exponential at `kappa = 1/2`.
//!
//! On the extended grid the covariance between cells depends only on their
//! toroidal lag, so the full covariance matrix is block circulant and is
//! represented by its base row. Its eigenvalues are the unnormalized 2-D
//! discrete Fourier transform of that base row; tiny negative eigenvalues
//! (embedding artifacts) are clamped to zero, larger deficits are an error.

use crate::bessel::{bessel_k, ln_gamma};
use crate::error::{LgcpError, Result};
use crate::fft::Fft2d;
use crate::grid::GridSpec;
use rustfft::num_complex::Complex;

/// Relative size, against `sigma2`, below which a negative embedding
/// eigenvalue is clamped to zero rather than reported as a failure.
pub const EMBEDDING_CLAMP_REL: f64 = 1e-8;

/// Largest supported Matern smoothness. Above this the unscaled Bessel
/// evaluation can overflow; smoothness beyond a few is indistinguishable in
/// practice anyway.
pub const MAX_KAPPA: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CorrelationFamily {
    Exponential,
    Matern { kappa: f64 },
}

/// Variance and correlation of a stationary isotropic Gaussian field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceModel {
    pub family: CorrelationFamily,
    pub sigma2: f64,
    pub phi: f64,
}

fn validate_scale(sigma2: f64, phi: f64) -> Result<()> {
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(LgcpError::invalid(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    if !phi.is_finite() || phi <= 0.0 {
        return Err(LgcpError::invalid(format!("phi must be > 0, got {phi}")));
    }
    Ok(())
}

/// Matern correlation at scaled distance `z = u/phi`, generic in the
/// smoothness. Exact closed forms cover the half-integer smoothness values
/// used most often; other orders go through the Bessel evaluation.
fn matern_corr(kappa: f64, z: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    if (kappa - 0.5).abs() < 1e-12 {
        (-z).exp()
    } else if (kappa - 1.5).abs() < 1e-12 {
        (1.0 + z) * (-z).exp()
    } else if (kappa - 2.5).abs() < 1e-12 {
        (1.0 + z + z * z / 3.0) * (-z).exp()
    } else {
        matern_corr_general(kappa, z)
    }
}

fn matern_corr_general(kappa: f64, z: f64) -> f64 {
    let k = bessel_k(kappa, z);
    if k == 0.0 {
        return 0.0;
    }
    let norm = ((kappa - 1.0) * std::f64::consts::LN_2 + ln_gamma(kappa)).exp();
    z.powf(kappa) * k / norm
}

impl CovarianceModel {
    pub fn exponential(sigma2: f64, phi: f64) -> Result<Self> {
        validate_scale(sigma2, phi)?;
        Ok(CovarianceModel { family: CorrelationFamily::Exponential, sigma2, phi })
    }

    pub fn matern(sigma2: f64, phi: f64, kappa: f64) -> Result<Self> {
        validate_scale(sigma2, phi)?;
        if !kappa.is_finite() || kappa <= 0.0 || kappa > MAX_KAPPA {
            return Err(LgcpError::invalid(format!(
                "kappa must lie in (0, {MAX_KAPPA}], got {kappa}"
            )));
        }
        Ok(CovarianceModel { family: CorrelationFamily::Matern { kappa }, sigma2, phi })
    }

    pub fn with_family(family: CorrelationFamily, sigma2: f64, phi: f64) -> Result<Self> {
        match family {
            CorrelationFamily::Exponential => Self::exponential(sigma2, phi),
            CorrelationFamily::Matern { kappa } => Self::matern(sigma2, phi, kappa),
        }
    }

    /// Returns a copy with new scale parameters, keeping the family.
    pub fn rescaled(&self, sigma2: f64, phi: f64) -> Result<Self> {
        Self::with_family(self.family, sigma2, phi)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Correlation at distance `u >= 0`.
    pub fn correlation(&self, u: f64) -> Result<f64> {
        if !u.is_finite() || u < 0.0 {
            return Err(LgcpError::invalid(format!("distance must be >= 0, got {u}")));
        }
        Ok(self.corr(u))
    }

    /// Covariance `sigma2 * r(u)` at distance `u >= 0`.
    pub fn covariance(&self, u: f64) -> Result<f64> {
        Ok(self.sigma2 * self.correlation(u)?)
    }

    pub(crate) fn corr(&self, u: f64) -> f64 {
        debug_assert!(u >= 0.0);
        match self.family {
            CorrelationFamily::Exponential => (-u / self.phi).exp(),
            CorrelationFamily::Matern { kappa } => matern_corr(kappa, u / self.phi),
        }
    }
}

/// Base row of the block-circulant covariance on the extended torus:
/// `base[iy * ext_nx + ix] = sigma2 * r(toroidal lag of (ix, iy))`.
pub fn circulant_base(model: &CovarianceModel, grid: &GridSpec) -> Vec<f64> {
    let (nx, ny) = (grid.ext_nx(), grid.ext_ny());
    let mut base = vec![0.0; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            base[iy * nx + ix] = model.sigma2 * model.corr(grid.toroidal_lag(ix, iy));
        }
    }
    base
}

/// Eigenvalue summary of a circulant base row.
#[derive(Clone, Debug)]
pub struct CirculantSpectrum {
    /// Eigenvalues after clamping, all nonnegative, in extended-grid order.
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue before clamping.
    pub min_eigenvalue: f64,
    /// How many eigenvalues were clamped to zero.
    pub n_clamped: usize,
}

/// Computes the eigenvalues of the block-circulant matrix with the given base
/// row (its unnormalized 2-D DFT), clamping negative values within
/// `EMBEDDING_CLAMP_REL * base[0]` of zero and failing on anything worse.
pub fn spectral_check(base: &[f64], ext_nx: usize, ext_ny: usize) -> Result<CirculantSpectrum> {
    if base.len() != ext_nx * ext_ny {
        return Err(LgcpError::invalid(format!(
            "base row has {} entries for a {ext_nx} x {ext_ny} torus",
            base.len()
        )));
    }
    let mut fft = Fft2d::new(ext_nx, ext_ny);
    let mut buf: Vec<Complex<f64>> = base.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.forward(&mut buf);
    finish_spectrum(&buf, base[0])
}

pub(crate) fn finish_spectrum(transformed: &[Complex<f64>], c0: f64) -> Result<CirculantSpectrum> {
    let tol = EMBEDDING_CLAMP_REL * c0;
    let max_re = transformed.iter().fold(0.0f64, |m, v| m.max(v.re.abs()));
    let mut eigenvalues = Vec::with_capacity(transformed.len());
    let mut min_eigenvalue = f64::INFINITY;
    let mut n_clamped = 0;
    for v in transformed {
        if v.im.abs() > 1e-8 * max_re + 1e-300 {
            return Err(LgcpError::invalid(
                "circulant base row is not symmetric: complex eigenvalue encountered",
            ));
        }
        min_eigenvalue = min_eigenvalue.min(v.re);
        if v.re < 0.0 {
            if v.re < -tol {
                return Err(LgcpError::EmbeddingFailure {
                    min_eigenvalue: v.re,
                    tolerance: tol,
                });
            }
            n_clamped += 1;
            eigenvalues.push(0.0);
        } else {
            eigenvalues.push(v.re);
        }
    }
    Ok(CirculantSpectrum { eigenvalues, min_eigenvalue, n_clamped })
}

/// Separable space-time covariance: a spatial model multiplied by an AR(1)
/// correlation `rho^|v|` across integer time lags `v`.
#[derive(Clone, Copy, Debug)]
pub struct SeparableStCovariance {
    pub spatial: CovarianceModel,
    pub rho: f64,
}

impl SeparableStCovariance {
    pub fn new(spatial: CovarianceModel, rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho.abs() >= 1.0 {
            return Err(LgcpError::invalid(format!(
                "temporal correlation must satisfy |rho| < 1, got {rho}"
            )));
        }
        Ok(SeparableStCovariance { spatial, rho })
    }

    /// Correlation at spatial distance `u` and integer time lag `v`.
    pub fn correlation(&self, u: f64, v: i64) -> Result<f64> {
        Ok(self.spatial.correlation(u)? * self.rho.powi(v.unsigned_abs().min(i32::MAX as u64) as i32))
    }

    /// Covariance `sigma2 * r(u) * rho^|v|`.
    pub fn covariance(&self, u: f64, v: i64) -> Result<f64> {
        Ok(self.spatial.sigma2 * self.correlation(u, v)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Window;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_basics() {
        let m = CovarianceModel::exponential(2.0, 0.3).unwrap();
        assert_eq!(m.correlation(0.0).unwrap(), 1.0);
        assert_relative_eq!(m.correlation(0.3).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(m.covariance(0.6).unwrap(), 2.0 * (-2.0f64).exp(), epsilon = 1e-15);
        assert!(m.correlation(-0.1).is_err());
        assert!(m.correlation(f64::NAN).is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(CovarianceModel::exponential(-1.0, 0.3).is_err());
        assert!(CovarianceModel::exponential(1.0, 0.0).is_err());
        assert!(CovarianceModel::matern(1.0, 0.3, 0.0).is_err());
        assert!(CovarianceModel::matern(1.0, 0.3, 25.0).is_err());
        assert!(CovarianceModel::exponential(0.0, 0.3).is_ok());
    }

    #[test]
    fn matern_half_equals_exponential() {
        let e = CovarianceModel::exponential(1.0, 0.25).unwrap();
        let m = CovarianceModel::matern(1.0, 0.25, 0.5).unwrap();
        for &u in &[0.0, 0.01, 0.1, 0.5, 2.0] {
            assert_relative_eq!(
                e.correlation(u).unwrap(),
                m.correlation(u).unwrap(),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn matern_closed_forms_match_bessel_path() {
        for &kappa in &[0.5, 1.5, 2.5] {
            for &z in &[0.03, 0.4, 1.0, 3.0, 10.0] {
                assert_relative_eq!(
                    matern_corr(kappa, z),
                    matern_corr_general(kappa, z),
                    max_relative = 1e-11
                );
            }
        }
    }

    #[test]
    fn matern_matches_reference_values() {
        // Frozen from an independent arbitrary-precision evaluation.
        let cases: &[(f64, f64, f64, f64)] = &[
            (0.8, 0.2, 0.05, 0.900157134608606),
            (0.8, 0.2, 0.2, 0.5231188981946684),
            (0.8, 0.2, 0.7, 0.057125982829399897),
            (1.75, 0.2, 0.05, 0.98060022007189025),
            (1.75, 0.2, 0.2, 0.77920938382455124),
            (1.75, 0.2, 0.7, 0.16672803444057566),
            (3.2, 0.2, 0.05, 0.99294322977341869),
            (3.2, 0.2, 0.2, 0.89644385838455496),
            (3.2, 0.2, 0.7, 0.33892257787011473),
            (1.5, 12.66, 1.0, 0.9970398856818391),
            (1.5, 12.66, 5.0, 0.9397983675991631),
            (1.5, 12.66, 12.66, 0.73575888234288459),
            (1.5, 12.66, 25.0, 0.41289067430400137),
        ];
        for &(kappa, phi, u, expected) in cases {
            let m = CovarianceModel::matern(1.0, phi, kappa).unwrap();
            assert_relative_eq!(m.correlation(u).unwrap(), expected, max_relative = 1e-11);
        }
    }

    #[test]
    fn matern_is_monotone_decreasing() {
        for &kappa in &[0.3, 0.8, 1.5, 2.5, 4.0] {
            let m = CovarianceModel::matern(1.0, 0.5, kappa).unwrap();
            let mut last = 1.0;
            for i in 1..60 {
                let r = m.correlation(i as f64 * 0.05).unwrap();
                assert!(r < last, "kappa={kappa}: not decreasing at step {i}");
                assert!(r > 0.0);
                last = r;
            }
        }
    }

    fn grid_8x4() -> GridSpec {
        GridSpec::build(Window::new(0.0, 0.0, 2.0, 1.0).unwrap(), 4, 2, 2.0).unwrap()
    }

    #[test]
    fn circulant_base_has_torus_symmetry() {
        let grid = grid_8x4();
        let m = CovarianceModel::exponential(1.3, 0.4).unwrap();
        let base = circulant_base(&m, &grid);
        let (nx, ny) = (grid.ext_nx(), grid.ext_ny());
        assert_eq!(base[0], 1.3);
        for iy in 0..ny {
            for ix in 0..nx {
                let mirror = base[((ny - iy) % ny) * nx + (nx - ix) % nx];
                assert_relative_eq!(base[iy * nx + ix], mirror, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn spectrum_matches_dense_eigendecomposition() {
        use nalgebra::DMatrix;
        let grid = grid_8x4();
        let (nx, ny) = (grid.ext_nx(), grid.ext_ny());
        let n = nx * ny;
        let m = CovarianceModel::matern(0.7, 0.3, 1.5).unwrap();
        let base = circulant_base(&m, &grid);
        // Dense block-circulant matrix: entry (a, b) depends on the toroidal
        // lag between cells a and b.
        let dense = DMatrix::from_fn(n, n, |a, b| {
            let (ax, ay) = (a % nx, a / nx);
            let (bx, by) = (b % nx, b / nx);
            let lx = (ax + nx - bx) % nx;
            let ly = (ay + ny - by) % ny;
            base[ly * nx + lx]
        });
        let mut dense_eigs: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().copied().collect();
        let spec = spectral_check(&base, nx, ny).unwrap();
        let mut fft_eigs = spec.eigenvalues.clone();
        dense_eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        fft_eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in fft_eigs.iter().zip(&dense_eigs) {
            assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn eigenvalues_sum_to_trace() {
        let grid = grid_8x4();
        let m = CovarianceModel::exponential(2.0, 0.2).unwrap();
        let base = circulant_base(&m, &grid);
        let spec = spectral_check(&base, grid.ext_nx(), grid.ext_ny()).unwrap();
        let sum: f64 = spec.eigenvalues.iter().sum();
        let trace = 2.0 * grid.n_ext_cells() as f64;
        assert_relative_eq!(sum, trace, max_relative = 1e-12);
    }

    #[test]
    fn zero_variance_yields_zero_spectrum() {
        let grid = grid_8x4();
        let m = CovarianceModel::exponential(0.0, 0.2).unwrap();
        let base = circulant_base(&m, &grid);
        let spec = spectral_check(&base, grid.ext_nx(), grid.ext_ny()).unwrap();
        assert!(spec.eigenvalues.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn smooth_long_range_embedding_fails() {
        // A very smooth correlation with range comparable to the torus cannot
        // be embedded at the minimal extension.
        let grid = GridSpec::build(Window::new(0.0, 0.0, 1.0, 1.0).unwrap(), 16, 16, 2.0).unwrap();
        let m = CovarianceModel::matern(1.0, 1.0, 2.5).unwrap();
        let base = circulant_base(&m, &grid);
        match spectral_check(&base, grid.ext_nx(), grid.ext_ny()) {
            Err(LgcpError::EmbeddingFailure { min_eigenvalue, tolerance }) => {
                assert!(min_eigenvalue < -tolerance);
            }
            other => panic!("expected embedding failure, got {other:?}"),
        }
    }

    #[test]
    fn separable_model_validates_rho() {
        let s = CovarianceModel::exponential(1.0, 0.3).unwrap();
        assert!(SeparableStCovariance::new(s, 1.0).is_err());
        assert!(SeparableStCovariance::new(s, -1.2).is_err());
        let st = SeparableStCovariance::new(s, 0.8).unwrap();
        assert_relative_eq!(
            st.correlation(0.3, 2).unwrap(),
            (-1.0f64).exp() * 0.64,
            epsilon = 1e-14
        );
        assert_relative_eq!(st.correlation(0.0, 0).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(
            st.correlation(0.1, -3).unwrap(),
            st.correlation(0.1, 3).unwrap()
        );
    }
}

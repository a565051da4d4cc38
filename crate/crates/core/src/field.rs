//! Sampling and linear algebra for the latent Gaussian field on the extended
//! torus, all through FFTs of the circulant covariance.
//!
//! The field is parameterized by whitened coefficients: `gamma ~ N(0, I)` maps
//! to `S = -sigma2/2 + B gamma`, where `B` is the unique symmetric positive
//! semidefinite square root of the block-circulant covariance `C`. `B` shares
//! the Fourier eigenvectors of `C` with eigenvalues `sqrt(lambda_k)`, so
//! applying it costs two FFTs. The mean `-sigma2/2` makes `E[exp S] = 1`, so
//! the intercept of a point-process model is the log of its mean intensity.
//!
//! Because `B` is symmetric it is its own adjoint: the same operator that
//! builds the field from white noise also pulls likelihood gradients back to
//! the whitened coordinates.

use crate::covariance::{circulant_base, finish_spectrum, CovarianceModel};
use crate::error::{LgcpError, Result};
use crate::fft::Fft2d;
use crate::grid::GridSpec;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;

/// White-noise coefficients of the latent field, one per extended-grid cell.
#[derive(Clone, Debug)]
pub struct WhitenedField(pub Vec<f64>);

impl WhitenedField {
    pub fn zeros(n_ext: usize) -> Self {
        WhitenedField(vec![0.0; n_ext])
    }

    pub fn standard_normal(n_ext: usize, rng: &mut impl Rng) -> Self {
        WhitenedField((0..n_ext).map(|_| rng.sample(StandardNormal)).collect())
    }

    /// Log prior density up to the additive constant: `-|gamma|^2 / 2`.
    pub fn log_prior(&self) -> f64 {
        -0.5 * self.0.iter().map(|g| g * g).sum::<f64>()
    }
}

/// Latent field values on the extended grid, mean offset included.
#[derive(Clone, Debug)]
pub struct LatentField(pub Vec<f64>);

impl LatentField {
    /// Copies the observation-window cells out of the extended field.
    pub fn gather_obs(&self, grid: &GridSpec, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(grid.n_cells());
        for o in 0..grid.n_cells() {
            out.push(self.0[grid.obs_to_ext(o)]);
        }
    }
}

/// Reusable FFT buffers plus the spectral decomposition of one covariance
/// model on one grid. Rebuilding for new scale parameters reuses every
/// allocation; the grid itself is fixed at construction.
pub struct FieldWorkspace {
    grid: GridSpec,
    model: CovarianceModel,
    fft: Fft2d,
    eigenvalues: Vec<f64>,
    sqrt_eigenvalues: Vec<f64>,
    min_eigenvalue: f64,
    buf: Vec<Complex<f64>>,
}

impl FieldWorkspace {
    pub fn new(model: &CovarianceModel, grid: &GridSpec) -> Result<Self> {
        let n = grid.n_ext_cells();
        let mut ws = FieldWorkspace {
            grid: grid.clone(),
            model: *model,
            fft: Fft2d::new(grid.ext_nx(), grid.ext_ny()),
            eigenvalues: vec![0.0; n],
            sqrt_eigenvalues: vec![0.0; n],
            min_eigenvalue: 0.0,
            buf: vec![Complex::default(); n],
        };
        ws.rebuild()?;
        Ok(ws)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Smallest raw embedding eigenvalue seen at the last rebuild.
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Switches to new scale parameters of the same family, reusing buffers.
    pub fn set_model(&mut self, model: &CovarianceModel) -> Result<()> {
        if *model == self.model {
            return Ok(());
        }
        let old = self.model;
        self.model = *model;
        if let Err(e) = self.rebuild() {
            self.model = old;
            self.rebuild().expect("restoring a previously valid model");
            return Err(e);
        }
        Ok(())
    }

    fn rebuild(&mut self) -> Result<()> {
        let base = circulant_base(&self.model, &self.grid);
        for (slot, &v) in self.buf.iter_mut().zip(&base) {
            *slot = Complex::new(v, 0.0);
        }
        self.fft.forward(&mut self.buf);
        let spectrum = finish_spectrum(&self.buf, base[0])?;
        self.min_eigenvalue = spectrum.min_eigenvalue;
        self.eigenvalues = spectrum.eigenvalues;
        for (s, &l) in self.sqrt_eigenvalues.iter_mut().zip(&self.eigenvalues) {
            *s = l.sqrt();
        }
        Ok(())
    }

    /// Multiplies by the symmetric square root `B` of the covariance:
    /// `out = B x`. Linear; the field mean is not applied here.
    pub fn apply_sqrt_cov(&mut self, x: &[f64], out: &mut Vec<f64>) {
        self.apply_diagonal(x, out, false);
    }

    /// Pulls a gradient with respect to the field values back to the
    /// whitened coordinates. `B` is self-adjoint, so this is again `B`.
    pub fn grad_transport(&mut self, grad_s: &[f64], out: &mut Vec<f64>) {
        self.apply_sqrt_cov(grad_s, out);
    }

    /// Multiplies by the full covariance `C = B B`.
    pub fn apply_cov(&mut self, x: &[f64], out: &mut Vec<f64>) {
        self.apply_diagonal(x, out, true);
    }

    fn apply_diagonal(&mut self, x: &[f64], out: &mut Vec<f64>, full: bool) {
        let n = self.grid.n_ext_cells();
        assert_eq!(x.len(), n, "input length must match the extended grid");
        for (slot, &v) in self.buf.iter_mut().zip(x) {
            *slot = Complex::new(v, 0.0);
        }
        self.fft.forward(&mut self.buf);
        let diag = if full { &self.eigenvalues } else { &self.sqrt_eigenvalues };
        for (slot, &d) in self.buf.iter_mut().zip(diag) {
            *slot *= d;
        }
        self.fft.inverse(&mut self.buf);
        out.clear();
        out.extend(self.buf.iter().map(|c| c.re));
    }

    /// The latent field for given whitened coefficients:
    /// `S = -sigma2/2 + B gamma`.
    pub fn field_from_gamma(&mut self, gamma: &WhitenedField) -> LatentField {
        let mut values = Vec::new();
        self.apply_sqrt_cov(&gamma.0, &mut values);
        let offset = -0.5 * self.model.sigma2;
        for v in values.iter_mut() {
            *v += offset;
        }
        LatentField(values)
    }

    /// Draws a field by whitening: fresh `gamma ~ N(0, I)` pushed through `B`
    /// with the mean offset applied.
    pub fn sample_field(&mut self, rng: &mut impl Rng) -> LatentField {
        let gamma = WhitenedField::standard_normal(self.grid.n_ext_cells(), rng);
        self.field_from_gamma(&gamma)
    }

    /// Log density of the latent field under the current model, including all
    /// constants. Fails if the covariance is singular on the torus.
    pub fn log_density(&mut self, field: &LatentField) -> Result<f64> {
        let n = self.grid.n_ext_cells();
        assert_eq!(field.0.len(), n);
        let mean = -0.5 * self.model.sigma2;
        for (slot, &v) in self.buf.iter_mut().zip(&field.0) {
            *slot = Complex::new(v - mean, 0.0);
        }
        self.fft.forward(&mut self.buf);
        let mut transformed = std::mem::take(&mut self.buf);
        let result = self.log_density_transformed(&transformed, 0.0);
        self.buf = std::mem::take(&mut transformed);
        // keep buf allocation; clear content is irrelevant
        result
    }

    /// Forward transform of raw field values, for callers that evaluate the
    /// same field under many models.
    pub(crate) fn forward_transform(&mut self, x: &[f64], out: &mut Vec<Complex<f64>>) {
        out.clear();
        out.extend(x.iter().map(|&v| Complex::new(v, 0.0)));
        self.fft.forward(out);
    }

    /// Log density given the transform of the *uncentered* field values,
    /// shifted by the mean in frequency space: only the DC bin moves when the
    /// mean is constant.
    pub(crate) fn log_density_transformed(
        &self,
        xhat: &[Complex<f64>],
        mean: f64,
    ) -> Result<f64> {
        let n = self.grid.n_ext_cells();
        let mut log_det = 0.0;
        let mut quad = 0.0;
        for (k, (&l, &x)) in self.eigenvalues.iter().zip(xhat).enumerate() {
            if l <= 0.0 {
                return Err(LgcpError::invalid(
                    "covariance is singular on the torus: zero eigenvalue in log density",
                ));
            }
            let x = if k == 0 { x - Complex::new(mean * n as f64, 0.0) } else { x };
            log_det += l.ln();
            quad += x.norm_sqr() / l;
        }
        quad /= n as f64;
        Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
    }

    /// Log density from a precomputed power spectrum `|x_hat|^2` of the raw
    /// field plus the real DC coefficient, with the constant mean applied in
    /// frequency space. Lets callers score one stored field under many models
    /// without keeping the full complex transform.
    pub(crate) fn log_density_power(&self, power: &[f64], dc: f64, mean: f64) -> Result<f64> {
        let n = self.grid.n_ext_cells();
        assert_eq!(power.len(), n);
        let shift = mean * n as f64;
        let mut log_det = 0.0;
        let mut quad = 0.0;
        for (k, (&l, &p)) in self.eigenvalues.iter().zip(power).enumerate() {
            if l <= 0.0 {
                return Err(LgcpError::invalid(
                    "covariance is singular on the torus: zero eigenvalue in log density",
                ));
            }
            let p = if k == 0 { p - 2.0 * shift * dc + shift * shift } else { p };
            log_det += l.ln();
            quad += p / l;
        }
        quad /= n as f64;
        Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
    }
}

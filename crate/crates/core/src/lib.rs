//! Log-Gaussian Cox processes on regular grids: simulation, summary
//! statistics, Bayesian inference, and predictive mapping.
//!
//! The intensity of a log-Gaussian Cox process is `Lambda(x) = d(x) *
//! exp(z(x)'beta + S(x))` where `S` is a stationary Gaussian field with
//! variance `sigma2`, correlation scale `phi`, and mean `-sigma2/2` so that
//! `E[exp S] = 1`. Counts in grid cells are conditionally Poisson given `S`.
//! Everything heavy runs through the circulant embedding of the covariance on
//! an extended torus, so simulation and likelihood evaluations cost a few
//! FFTs regardless of the correlation range.
//!
//! Module map:
//! - [`grid`]: windows, grids, point patterns, regional count data.
//! - [`covariance`]: exponential and Matern models, circulant spectra.
//! - [`field`]: whitened sampling of the latent field and its linear maps.
//! - [`models`]: cell likelihoods, simulation, multitype and space-time models.
//! - [`summary`]: inhomogeneity-free K function estimation and moment fits.
//! - [`mcmc`]: preconditioned Langevin-within-Metropolis posterior sampling.
//! - [`mclik`]: simulated-draw Monte Carlo likelihood and maximization.
//! - [`predict`]: posterior summary rasters, exceedance and type probabilities.
//! - [`io`]: plain-text readers and writers for patterns, chains, rasters.

pub mod bessel;
pub mod covariance;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod io;
pub mod mclik;
pub mod mcmc;
pub mod models;
pub mod optim;
pub mod predict;
pub mod quadrature;
pub mod summary;

pub use covariance::{CorrelationFamily, CovarianceModel, SeparableStCovariance};
pub use error::{LgcpError, Result};
pub use field::{FieldWorkspace, LatentField, WhitenedField};
pub use grid::{GridSpec, PointPattern, RegionPartition, Window};

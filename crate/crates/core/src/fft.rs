//! Thin two-dimensional FFT built from rustfft's one-dimensional plans.
//!
//! Data is row-major with x fastest (row length `nx`, `ny` rows), matching
//! the grid indexing. Forward and inverse transforms are both unnormalized;
//! `inverse` scales by `1/(nx*ny)` at the end so that a forward/inverse round
//! trip is the identity.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Fft2d {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    col: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Fft2d {
    pub fn new(nx: usize, ny: usize) -> Self {
        assert!(nx > 0 && ny > 0);
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(nx);
        let inv_x = planner.plan_fft_inverse(nx);
        let fwd_y = planner.plan_fft_forward(ny);
        let inv_y = planner.plan_fft_inverse(ny);
        let scratch_len = fwd_x
            .get_inplace_scratch_len()
            .max(inv_x.get_inplace_scratch_len())
            .max(fwd_y.get_inplace_scratch_len())
            .max(inv_y.get_inplace_scratch_len());
        Fft2d {
            nx,
            ny,
            fwd_x,
            inv_x,
            fwd_y,
            inv_y,
            col: vec![Complex::default(); ny],
            scratch: vec![Complex::default(); scratch_len],
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    fn transform(&mut self, data: &mut [Complex<f64>], forward: bool) {
        assert_eq!(data.len(), self.nx * self.ny);
        let row_fft = if forward { &self.fwd_x } else { &self.inv_x };
        for row in data.chunks_exact_mut(self.nx) {
            row_fft.process_with_scratch(row, &mut self.scratch);
        }
        let col_fft = if forward { &self.fwd_y } else { &self.inv_y };
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                self.col[iy] = data[iy * self.nx + ix];
            }
            col_fft.process_with_scratch(&mut self.col, &mut self.scratch);
            for iy in 0..self.ny {
                data[iy * self.nx + ix] = self.col[iy];
            }
        }
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&mut self, data: &mut [Complex<f64>]) {
        self.transform(data, true);
    }

    /// Inverse transform, in place, scaled so forward then inverse is the identity.
    pub fn inverse(&mut self, data: &mut [Complex<f64>]) {
        self.transform(data, false);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let (nx, ny) = (8, 4);
        let mut fft = Fft2d::new(nx, ny);
        let orig: Vec<Complex<f64>> = (0..nx * ny)
            .map(|i| Complex::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut data = orig.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let (nx, ny) = (4, 4);
        let mut fft = Fft2d::new(nx, ny);
        let input: Vec<Complex<f64>> = (0..nx * ny)
            .map(|i| Complex::new(i as f64, (i as f64 * 0.5).sin()))
            .collect();
        let mut data = input.clone();
        fft.forward(&mut data);
        let tau = std::f64::consts::TAU;
        for ky in 0..ny {
            for kx in 0..nx {
                let mut acc = Complex::new(0.0, 0.0);
                for iy in 0..ny {
                    for ix in 0..nx {
                        let phase = -tau
                            * (kx as f64 * ix as f64 / nx as f64
                                + ky as f64 * iy as f64 / ny as f64);
                        acc += input[iy * nx + ix] * Complex::from_polar(1.0, phase);
                    }
                }
                assert!((data[ky * nx + kx] - acc).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_input_concentrates_at_dc() {
        let (nx, ny) = (8, 8);
        let mut fft = Fft2d::new(nx, ny);
        let mut data = vec![Complex::new(2.5, 0.0); nx * ny];
        fft.forward(&mut data);
        assert!((data[0] - Complex::new(2.5 * 64.0, 0.0)).norm() < 1e-10);
        for v in &data[1..] {
            assert!(v.norm() < 1e-10);
        }
    }
}

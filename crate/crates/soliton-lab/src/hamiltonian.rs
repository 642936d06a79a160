//! The matrix Hamiltonian of the linearization about a soliton background W:
//!
//!   H = [ Delta + 2|W|^2 - alpha,          W^2            ]
//!       [       -conj(W)^2,       -Delta - 2|W|^2 + alpha ]
//!
//! acting on spinors (z1, z2); the linearized flow is dZ/dt = i H Z + forcing.
//! The Hermitian adjoint is sigma_3 H sigma_3. Kinetic terms are applied
//! spectrally, potentials pointwise.

use crate::error::Result;
use crate::field::{apply_multiplier, Fft3, Field3, Spinor};
use crate::grid::Grid3D;
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

/// Pointwise potential block [[2a, b], [-conj(b), -2a]] with a = |W|^2,
/// b = W^2.
#[derive(Debug, Clone)]
pub struct PotentialMatrix {
    pub grid: Grid3D,
    pub a: Vec<f64>,
    pub b: Vec<Complex64>,
}

impl PotentialMatrix {
    pub fn from_background(w: &Field3) -> Self {
        let a = w.data.par_iter().map(|v| v.norm_sqr()).collect();
        let b = w.data.par_iter().map(|v| v * v).collect();
        PotentialMatrix { grid: w.grid, a, b }
    }

    pub fn zero(grid: Grid3D) -> Self {
        PotentialMatrix {
            grid,
            a: vec![0.0; grid.len()],
            b: vec![Complex64::ZERO; grid.len()],
        }
    }

    /// Pointwise operator norm of the 2x2 block; for a = |W|^2, b = W^2 the
    /// row sum is exactly 3|W|^2.
    pub fn pointwise_norm(&self) -> Vec<f64> {
        self.a
            .par_iter()
            .zip(self.b.par_iter())
            .map(|(a, b)| 2.0 * a.abs() + b.norm())
            .collect()
    }

    /// Entrywise difference self - other, as a potential block.
    pub fn difference(&self, other: &PotentialMatrix) -> Result<PotentialMatrix> {
        self.grid.same_as(&other.grid)?;
        Ok(PotentialMatrix {
            grid: self.grid,
            a: self
                .a
                .par_iter()
                .zip(other.a.par_iter())
                .map(|(x, y)| x - y)
                .collect(),
            b: self
                .b
                .par_iter()
                .zip(other.b.par_iter())
                .map(|(x, y)| x - y)
                .collect(),
        })
    }

    fn apply_into(&self, z: &Spinor, out1: &mut [Complex64], out2: &mut [Complex64]) {
        out1.par_iter_mut()
            .zip(out2.par_iter_mut())
            .zip(z.z1.par_iter().zip(z.z2.par_iter()))
            .zip(self.a.par_iter().zip(self.b.par_iter()))
            .for_each(|(((o1, o2), (z1, z2)), (a, b))| {
                *o1 += 2.0 * a * z1 + b * z2;
                *o2 += -b.conj() * z1 - 2.0 * a * z2;
            });
    }
}

pub struct LinearizedOperator {
    pub grid: Grid3D,
    pub alpha: f64,
    pub pot: PotentialMatrix,
    pub fft: Arc<Fft3>,
}

impl LinearizedOperator {
    pub fn new(w: &Field3, alpha: f64, fft: Arc<Fft3>) -> Self {
        LinearizedOperator {
            grid: w.grid,
            alpha,
            pot: PotentialMatrix::from_background(w),
            fft,
        }
    }

    pub fn free(grid: Grid3D, alpha: f64, fft: Arc<Fft3>) -> Self {
        LinearizedOperator {
            grid,
            alpha,
            pot: PotentialMatrix::zero(grid),
            fft,
        }
    }

    /// H Z.
    pub fn apply(&self, z: &Spinor) -> Result<Spinor> {
        self.grid.same_as(&z.grid)?;
        let alpha = self.alpha;
        // Kinetic part (Delta - alpha) z1, (-Delta + alpha) z2 in Fourier.
        let mut k1 = z.z1.clone();
        let mut k2 = z.z2.clone();
        self.fft.forward(&mut k1);
        self.fft.forward(&mut k2);
        apply_multiplier(&self.grid, &mut k1, |_, k2v| Complex64::new(-k2v - alpha, 0.0));
        apply_multiplier(&self.grid, &mut k2, |_, k2v| Complex64::new(k2v + alpha, 0.0));
        self.fft.inverse(&mut k1);
        self.fft.inverse(&mut k2);
        self.pot.apply_into(z, &mut k1, &mut k2);
        Ok(Spinor { grid: self.grid, z1: k1, z2: k2 })
    }

    /// H* Z = sigma_3 H sigma_3 Z (Hermitian adjoint).
    pub fn apply_adjoint(&self, z: &Spinor) -> Result<Spinor> {
        Ok(self.apply(&z.sigma3())?.sigma3())
    }
}

/// Split the operator about background `w` relative to the frozen reference
/// `w0`: H_w = H_{w0} + C with C the potential-difference block. Built as an
/// exact identity; callers use C as the small localized correction along a
/// parameter path.
pub fn path_split(w: &Field3, w0: &Field3) -> Result<PotentialMatrix> {
    PotentialMatrix::from_background(w).difference(&PotentialMatrix::from_background(w0))
}

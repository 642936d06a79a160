//! Complex fields on the periodic cube, their FFT, and the two pairings.
//!
//! The spinor pairing used for spectral bookkeeping is the bilinear dot
//! <U, V> = int (u1 v1 + u2 v2) dx with NO conjugation; for states of the
//! conjugate-pair form Z = (z, conj z) paired against real-profile vectors it
//! produces real numbers. The Hermitian product is kept alongside for norms
//! and adjoint checks.

use crate::error::Result;
use crate::grid::Grid3D;
use crate::radial::RadialProfile;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Relative size the lifted profile may still have at the nearest box face.
pub const PROFILE_EDGE_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Field3 {
    pub grid: Grid3D,
    pub data: Vec<Complex64>,
}

impl Field3 {
    pub fn zeros(grid: Grid3D) -> Self {
        Field3 { grid, data: vec![Complex64::ZERO; grid.len()] }
    }

    pub fn from_fn(grid: Grid3D, f: impl Fn(f64, f64, f64) -> Complex64 + Sync) -> Self {
        let n = grid.n;
        let mut data = vec![Complex64::ZERO; grid.len()];
        data.par_chunks_mut(n * n).enumerate().for_each(|(i, plane)| {
            let x = grid.coord(i);
            for j in 0..n {
                let y = grid.coord(j);
                for k in 0..n {
                    plane[j * n + k] = f(x, y, grid.coord(k));
                }
            }
        });
        Field3 { grid, data }
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.data.par_iter().map(|v| v.norm_sqr()).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data
            .par_iter()
            .map(|v| v.norm())
            .reduce(|| 0.0, f64::max)
    }

    pub fn l6_norm(&self) -> f64 {
        let s: f64 = self
            .data
            .par_iter()
            .map(|v| {
                let a = v.norm_sqr();
                a * a * a
            })
            .sum();
        (s * self.grid.cell_volume()).powf(1.0 / 6.0)
    }

    /// Hermitian inner product int conj(self) other dx.
    pub fn inner(&self, other: &Field3) -> Result<Complex64> {
        self.grid.same_as(&other.grid)?;
        let s: Complex64 = self
            .data
            .par_iter()
            .zip(other.data.par_iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn scale(&mut self, c: Complex64) {
        self.data.par_iter_mut().for_each(|v| *v *= c);
    }

    pub fn axpy(&mut self, a: Complex64, x: &Field3) {
        debug_assert_eq!(self.grid, x.grid);
        self.data
            .par_iter_mut()
            .zip(x.data.par_iter())
            .for_each(|(v, u)| *v += a * u);
    }
}

/// Two-component field (z1, z2) on the cube. States of the NLS linearization
/// live here as (z, conj z); generalized eigenvectors need not obey that
/// symmetry.
#[derive(Debug, Clone)]
pub struct Spinor {
    pub grid: Grid3D,
    pub z1: Vec<Complex64>,
    pub z2: Vec<Complex64>,
}

impl Spinor {
    pub fn zeros(grid: Grid3D) -> Self {
        Spinor {
            grid,
            z1: vec![Complex64::ZERO; grid.len()],
            z2: vec![Complex64::ZERO; grid.len()],
        }
    }

    /// Lift a scalar state z to the conjugate pair (z, conj z).
    pub fn conjugate_pair(field: &Field3) -> Self {
        Spinor {
            grid: field.grid,
            z1: field.data.clone(),
            z2: field.data.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn is_conjugate_pair(&self, tol: f64) -> bool {
        let worst = self
            .z1
            .par_iter()
            .zip(self.z2.par_iter())
            .map(|(a, b)| (a.conj() - b).norm())
            .reduce(|| 0.0, f64::max);
        let scale = self.l2_norm().max(1e-300);
        worst * self.grid.cell_volume().sqrt() <= tol * scale
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self
            .z1
            .par_iter()
            .zip(self.z2.par_iter())
            .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
            .sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// Bilinear pairing int (u1 v1 + u2 v2) dx, no conjugation.
    pub fn bilinear_pair(&self, other: &Spinor) -> Result<Complex64> {
        self.grid.same_as(&other.grid)?;
        let s: Complex64 = self
            .z1
            .par_iter()
            .zip(other.z1.par_iter())
            .map(|(a, b)| a * b)
            .sum::<Complex64>()
            + self
                .z2
                .par_iter()
                .zip(other.z2.par_iter())
                .map(|(a, b)| a * b)
                .sum::<Complex64>();
        Ok(s * self.grid.cell_volume())
    }

    /// Hermitian product int (conj(u1) v1 + conj(u2) v2) dx.
    pub fn hermitian_inner(&self, other: &Spinor) -> Result<Complex64> {
        self.grid.same_as(&other.grid)?;
        let s: Complex64 = self
            .z1
            .par_iter()
            .zip(other.z1.par_iter())
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            + self
                .z2
                .par_iter()
                .zip(other.z2.par_iter())
                .map(|(a, b)| a.conj() * b)
                .sum::<Complex64>();
        Ok(s * self.grid.cell_volume())
    }

    pub fn scale(&mut self, c: Complex64) {
        self.z1.par_iter_mut().for_each(|v| *v *= c);
        self.z2.par_iter_mut().for_each(|v| *v *= c);
    }

    pub fn axpy(&mut self, a: Complex64, x: &Spinor) {
        debug_assert_eq!(self.grid, x.grid);
        self.z1
            .par_iter_mut()
            .zip(x.z1.par_iter())
            .for_each(|(v, u)| *v += a * u);
        self.z2
            .par_iter_mut()
            .zip(x.z2.par_iter())
            .for_each(|(v, u)| *v += a * u);
    }

    /// sigma_3 (z1, z2) = (z1, -z2).
    pub fn sigma3(&self) -> Spinor {
        Spinor {
            grid: self.grid,
            z1: self.z1.clone(),
            z2: self.z2.iter().map(|v| -v).collect(),
        }
    }

    /// Componentwise complex conjugate.
    pub fn conj_components(&self) -> Spinor {
        Spinor {
            grid: self.grid,
            z1: self.z1.iter().map(|v| v.conj()).collect(),
            z2: self.z2.iter().map(|v| v.conj()).collect(),
        }
    }
}

/// Cached 3d FFT plans for one cube size. Forward leaves the raw DFT sums;
/// inverse divides by n^3.
pub struct Fft3 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn pass(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n);
        // Axis 2 is contiguous.
        data.par_chunks_mut(n).for_each_init(
            || vec![Complex64::ZERO; fft.get_inplace_scratch_len()],
            |scratch, line| fft.process_with_scratch(line, scratch),
        );
        // Axis 1: stride-n columns within each i-plane.
        data.par_chunks_mut(n * n).for_each_init(
            || {
                (
                    vec![Complex64::ZERO; fft.get_inplace_scratch_len()],
                    vec![Complex64::ZERO; n],
                )
            },
            |(scratch, col), plane| {
                for k in 0..n {
                    for j in 0..n {
                        col[j] = plane[j * n + k];
                    }
                    fft.process_with_scratch(col, scratch);
                    for j in 0..n {
                        plane[j * n + k] = col[j];
                    }
                }
            },
        );
        // Axis 0: transpose so the lines become contiguous, batch, restore.
        let mut t = vec![Complex64::ZERO; n * n * n];
        t.par_chunks_mut(n).enumerate().for_each(|(jk, line)| {
            let (j, k) = (jk / n, jk % n);
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[(i * n + j) * n + k];
            }
        });
        t.par_chunks_mut(n).for_each_init(
            || vec![Complex64::ZERO; fft.get_inplace_scratch_len()],
            |scratch, line| fft.process_with_scratch(line, scratch),
        );
        data.par_chunks_mut(n * n).enumerate().for_each(|(i, plane)| {
            for j in 0..n {
                for k in 0..n {
                    plane[j * n + k] = t[(j * n + k) * n + i];
                }
            }
        });
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.pass(data, &self.fwd.clone());
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.pass(data, &self.inv.clone());
        let s = 1.0 / (self.n * self.n * self.n) as f64;
        data.par_iter_mut().for_each(|v| *v *= s);
    }
}

/// Apply f(k_vec, |k|^2) as a pointwise factor in Fourier space. The caller
/// is responsible for being in Fourier space.
pub fn apply_multiplier(
    grid: &Grid3D,
    data: &mut [Complex64],
    f: impl Fn([f64; 3], f64) -> Complex64 + Sync,
) {
    let n = grid.n;
    data.par_chunks_mut(n * n).enumerate().for_each(|(i, plane)| {
        let kx = grid.k(i);
        for j in 0..n {
            let ky = grid.k(j);
            for k in 0..n {
                let kz = grid.k(k);
                let k2 = kx * kx + ky * ky + kz * kz;
                plane[j * n + k] *= f([kx, ky, kz], k2);
            }
        }
    });
}

/// Spectral laplacian of a scalar field.
pub fn laplacian(fft: &Fft3, field: &Field3) -> Field3 {
    let mut data = field.data.clone();
    fft.forward(&mut data);
    apply_multiplier(&field.grid, &mut data, |_, k2| Complex64::new(-k2, 0.0));
    fft.inverse(&mut data);
    Field3 { grid: field.grid, data }
}

/// Spectral gradient of a scalar field, one component per axis. The
/// unpaired Nyquist mode is dropped: an odd multiplier there would turn
/// real input into complex junk.
pub fn gradient(fft: &Fft3, field: &Field3) -> [Field3; 3] {
    let grid = field.grid;
    let n = grid.n;
    let nyq = if n % 2 == 0 { -((n as i64) / 2) } else { i64::MIN };
    let mut hat = field.data.clone();
    fft.forward(&mut hat);
    let make = |axis: usize| {
        let mut d = hat.clone();
        d.par_chunks_mut(n * n).enumerate().for_each(|(i, plane)| {
            for j in 0..n {
                for k in 0..n {
                    let ia = [i, j, k][axis];
                    let kv = if grid.signed_index(ia) == nyq {
                        0.0
                    } else {
                        grid.k(ia)
                    };
                    plane[j * n + k] *= Complex64::new(0.0, kv);
                }
            }
        });
        fft.inverse(&mut d);
        Field3 { grid, data: d }
    };
    [make(0), make(1), make(2)]
}

/// Zero every mode whose signed index exceeds n/3 on any axis (2/3 rule).
pub fn dealias(grid: &Grid3D, data: &mut [Complex64]) {
    let n = grid.n;
    let cut = n as f64 / 3.0;
    data.par_chunks_mut(n * n).enumerate().for_each(|(i, plane)| {
        let si = grid.signed_index(i).unsigned_abs() as f64;
        for j in 0..n {
            let sj = grid.signed_index(j).unsigned_abs() as f64;
            for k in 0..n {
                let sk = grid.signed_index(k).unsigned_abs() as f64;
                if si > cut || sj > cut || sk > cut {
                    plane[j * n + k] = Complex64::ZERO;
                }
            }
        }
    });
}

/// Sample a radial profile onto the cube around `center` (periodic images
/// through the minimum-image radius). Errors if the profile has not decayed
/// by the nearest face.
pub fn lift_profile(p: &RadialProfile, grid: Grid3D, center: [f64; 3]) -> Result<Field3> {
    lift_radial(grid, center, p.center_value(), |r| p.eval(r))
}

/// The same sampling without the decay check, for experiments that knowingly
/// run a soliton wide relative to the box.
pub fn lift_profile_unchecked(p: &RadialProfile, grid: Grid3D, center: [f64; 3]) -> Field3 {
    Field3::from_fn(grid, |x, y, z| {
        let r = grid.min_image_radius(x - center[0], y - center[1], z - center[2]);
        Complex64::new(p.eval(r), 0.0)
    })
}

/// Same lifting for an arbitrary radial function with known centre value.
pub fn lift_radial(
    grid: Grid3D,
    center: [f64; 3],
    center_value: f64,
    f: impl Fn(f64) -> f64 + Sync,
) -> Result<Field3> {
    let fold_dist = |c: f64| {
        let span = 2.0 * grid.l;
        let v = (c + grid.l).rem_euclid(span) - grid.l;
        grid.l - v.abs()
    };
    let edge = fold_dist(center[0])
        .min(fold_dist(center[1]))
        .min(fold_dist(center[2]));
    let boundary = f(edge).abs();
    let limit = PROFILE_EDGE_LIMIT * center_value.abs();
    if boundary > limit {
        return Err(crate::error::Error::ProfileTooWide { boundary, limit });
    }
    Ok(Field3::from_fn(grid, |x, y, z| {
        let r = grid.min_image_radius(x - center[0], y - center[1], z - center[2]);
        Complex64::new(f(r), 0.0)
    }))
}

//! Uniform grids: the radial half-line grid used by the profile solver and
//! the periodic cube used by the 3-d spectral code.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform grid on [0, r_max] with n nodes, r_j = j * spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub n: usize,
    pub r_max: f64,
}

impl RadialGrid {
    pub fn new(n: usize, r_max: f64) -> Result<Self> {
        if n < 16 || !r_max.is_finite() || r_max <= 0.0 {
            return Err(Error::ConfigInvalid {
                detail: format!("radial grid needs n >= 16 and r_max > 0, got n = {n}, r_max = {r_max}"),
            });
        }
        Ok(RadialGrid { n, r_max })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.r_max / (self.n - 1) as f64
    }

    #[inline]
    pub fn r(&self, j: usize) -> f64 {
        j as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.r(j))
    }
}

/// Periodic cube [-l, l)^3 sampled at cell centers, n points per axis.
///
/// Index (i, j, k) is flattened as (i * n + j) * n + k; the Fourier mode for
/// index i is kvec = (pi / l) * m with m the signed index in [-n/2, n/2).
///
/// Samples sit at -l + (i + 1/2) h, not at -l + i h: the lattice then maps to
/// itself under x -> -x (i pairs with n-1-i), so sums of odd integrands cancel
/// exactly instead of leaving an unpaired wrap plane. Diagonal Fourier
/// multipliers are blind to the half-cell shift (the phase twist commutes),
/// so the spectral code is unchanged by this choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3D {
    pub n: usize,
    pub l: f64,
}

impl Grid3D {
    pub fn new(n: usize, l: f64) -> Result<Self> {
        if n < 8 || n % 2 != 0 || !l.is_finite() || l <= 0.0 {
            return Err(Error::ConfigInvalid {
                detail: format!("cubic grid needs even n >= 8 and l > 0, got n = {n}, l = {l}"),
            });
        }
        Ok(Grid3D { n, l })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    /// Cell volume h^3, the weight of the Riemann-sum quadrature.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h * h * h
    }

    /// Coordinate along one axis for index i in 0..n (cell center).
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.l + (i as f64 + 0.5) * self.spacing()
    }

    /// Signed Fourier index for axis position i.
    #[inline]
    pub fn signed_index(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Fourier wavenumber along one axis for index i.
    #[inline]
    pub fn k(&self, i: usize) -> f64 {
        std::f64::consts::PI / self.l * self.signed_index(i) as f64
    }

    #[inline]
    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn same_as(&self, other: &Grid3D) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch {
                left: format!("{}^3, l = {}", self.n, self.l),
                right: format!("{}^3, l = {}", other.n, other.l),
            });
        }
        Ok(())
    }

    /// Displacement folded to the nearest periodic image, componentwise.
    #[inline]
    pub fn min_image_disp(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let fold = |u: f64| {
            let span = 2.0 * self.l;
            let mut v = (u + self.l).rem_euclid(span) - self.l;
            if v < -self.l {
                v += span;
            }
            v
        };
        [fold(x), fold(y), fold(z)]
    }

    /// Distance from (x, y, z) to the nearest periodic image of the origin.
    #[inline]
    pub fn min_image_radius(&self, x: f64, y: f64, z: f64) -> f64 {
        let [x, y, z] = self.min_image_disp(x, y, z);
        (x * x + y * y + z * z).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_grid_nodes() {
        let g = RadialGrid::new(31, 3.0).unwrap();
        assert_eq!(g.spacing(), 0.1);
        assert!((g.r(30) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn cubic_grid_wavenumbers() {
        let g = Grid3D::new(8, 4.0).unwrap();
        assert_eq!(g.signed_index(0), 0);
        assert_eq!(g.signed_index(4), -4);
        assert_eq!(g.signed_index(7), -1);
        assert!((g.k(1) - std::f64::consts::PI / 4.0).abs() < 1e-15);
        assert!((g.coord(0) + 3.5).abs() < 1e-15);
    }

    #[test]
    fn lattice_is_parity_symmetric() {
        let g = Grid3D::new(10, 7.0).unwrap();
        for i in 0..10 {
            assert!((g.coord(i) + g.coord(9 - i)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_odd_n() {
        assert!(Grid3D::new(9, 4.0).is_err());
    }

    #[test]
    fn min_image_folds() {
        let g = Grid3D::new(16, 8.0).unwrap();
        assert!((g.min_image_radius(15.0, 0.0, 0.0) - 1.0).abs() < 1e-12);
    }
}

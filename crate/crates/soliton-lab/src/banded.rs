//! Banded LU with partial pivoting, sized for the radial collocation systems.
//!
//! Storage follows the LAPACK general-band layout: entry (i, j) lives at
//! row kl + ku + i - j of column j, with kl extra rows for pivoting fill-in.

use crate::error::{Error, Result};

pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    stride: usize,
    ab: Vec<f64>,
}

impl Banded {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let stride = 2 * kl + ku + 1;
        Banded {
            n,
            kl,
            ku,
            stride,
            ab: vec![0.0; stride * n],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        j * self.stride + (self.kl + self.ku + i) - j
    }

    /// Add v to entry (i, j). Panics outside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i + self.ku && i <= j + self.kl, "({i},{j}) outside band");
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i + self.ku && i <= j + self.kl);
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    /// Factor in place and solve A x = b, overwriting b with x.
    pub fn solve(mut self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let kl = self.kl;
        let ku = self.ku;
        let mut pivots = vec![0usize; n];

        for col in 0..n {
            // Partial pivot among rows col..=col+kl.
            let last = (col + kl).min(n - 1);
            let mut p = col;
            let mut pmax = 0.0_f64;
            for i in col..=last {
                let v = self.ab[self.slot(i, col)].abs();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax == 0.0 || !pmax.is_finite() {
                return Err(Error::SingularJacobian { pivot: pmax });
            }
            pivots[col] = p;
            if p != col {
                // Swap rows col and p across the affected columns.
                let jmax = (col + ku + kl).min(n - 1);
                for j in col..=jmax {
                    let a = self.slot(col, j);
                    let b_ = self.slot(p, j);
                    self.ab.swap(a, b_);
                }
                b.swap(col, p);
            }
            let diag = self.ab[self.slot(col, col)];
            for i in (col + 1)..=last {
                let s = self.slot(i, col);
                let m = self.ab[s] / diag;
                self.ab[s] = m;
                if m != 0.0 {
                    let jmax = (col + ku + kl).min(n - 1);
                    for j in (col + 1)..=jmax {
                        let src = self.ab[self.slot(col, j)];
                        if src != 0.0 {
                            let dst = self.slot(i, j);
                            self.ab[dst] -= m * src;
                        }
                    }
                    b[i] -= m * b[col];
                }
            }
        }

        // Back substitution.
        for col in (0..n).rev() {
            let jmax = (col + ku + kl).min(n - 1);
            let mut s = b[col];
            for j in (col + 1)..=jmax {
                s -= self.ab[self.slot(col, j)] * b[j];
            }
            b[col] = s / self.ab[self.slot(col, col)];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_solve() {
        // Pentadiagonal test system with known solution.
        let n = 40;
        let (kl, ku) = (2, 2);
        let mut a = Banded::new(n, kl, ku);
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut x_true = vec![0.0; n];
        for i in 0..n {
            x_true[i] = (i as f64 * 0.37).sin() + 0.1;
            for dj in -(kl as isize)..=(ku as isize) {
                let j = i as isize + dj;
                if j < 0 || j >= n as isize {
                    continue;
                }
                let j = j as usize;
                let v = if dj == 0 {
                    4.0 + (i as f64).cos() * 0.3
                } else {
                    1.0 / (1.0 + dj.abs() as f64) * ((i + j) as f64 * 0.11).sin()
                };
                a.set(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let xv = nalgebra::DVector::from_column_slice(&x_true);
        let rhs = &dense * &xv;
        let mut b: Vec<f64> = rhs.iter().cloned().collect();
        a.solve(&mut b).unwrap();
        for i in 0..n {
            assert!((b[i] - x_true[i]).abs() < 1e-10, "i={i}: {} vs {}", b[i], x_true[i]);
        }
    }

    #[test]
    fn singular_reports() {
        let mut a = Banded::new(3, 1, 1);
        a.set(0, 0, 1.0);
        a.set(1, 1, 0.0);
        a.set(2, 2, 1.0);
        let mut b = vec![1.0, 1.0, 1.0];
        assert!(a.solve(&mut b).is_err());
    }
}

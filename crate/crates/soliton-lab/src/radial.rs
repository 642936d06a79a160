//! Radial ground-state solver.
//!
//! Solves -phi'' - (2/r) phi' + alpha phi = phi^3 on [0, r_max] for the
//! positive decaying profile: bisection shooting from a series start at the
//! origin, then a Newton polish of the full collocation residual on the grid.
//! The 1-parameter family obeys phi(x, alpha) = alpha^(1/2) phi(alpha^(1/2) x, 1),
//! which fixes d/dalpha phi = (phi + r phi') / (2 alpha) in closed form.

use crate::banded::Banded;
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use serde::{Deserialize, Serialize};

pub const DEFAULT_N: usize = 8192;
/// r_max defaults to 30 / sqrt(alpha): the tail is ~ e^{-30} there.
pub const DEFAULT_RMAX_SCALE: f64 = 30.0;
pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest tolerated boundary-to-centre ratio before a profile is declared
/// too wide for its grid.
pub const BOUNDARY_RATIO_LIMIT: f64 = 1e-8;

pub fn default_grid(alpha: f64) -> Result<RadialGrid> {
    RadialGrid::new(DEFAULT_N, DEFAULT_RMAX_SCALE / alpha.sqrt())
}

/// Ground-state profile together with its radial and scaling derivatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialProfile {
    pub grid: RadialGrid,
    pub alpha: f64,
    pub values: Vec<f64>,
    pub d_r: Vec<f64>,
    pub d_alpha: Vec<f64>,
    /// Sup-norm of the collocation residual at the end of the solve.
    pub residual: f64,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Shot {
    /// Turned around while still positive: centre value too small.
    Low,
    /// Crossed zero: centre value too large.
    High,
}

fn rhs(r: f64, phi: f64, dphi: f64, alpha: f64) -> (f64, f64) {
    (dphi, alpha * phi - phi * phi * phi - 2.0 * dphi / r)
}

/// Integrate outward from the series start and record node values.
/// Returns the classification and the trajectory (abandoned at the event).
fn integrate(c: f64, alpha: f64, grid: &RadialGrid) -> (Shot, Vec<f64>) {
    let h = grid.spacing();
    let n = grid.n;
    let a2 = c * (alpha - c * c) / 6.0;
    let a4 = (alpha - 3.0 * c * c) * a2 / 20.0;
    let mut traj = vec![0.0; n];
    traj[0] = c;
    let mut phi = c + a2 * h * h + a4 * h * h * h * h;
    let mut dphi = 2.0 * a2 * h + 4.0 * a4 * h * h * h;
    traj[1] = phi;
    let guard = 1e-13 * c;
    for j in 1..n - 1 {
        let r = grid.r(j);
        // Classical RK4 step of size h.
        let (k1p, k1d) = rhs(r, phi, dphi, alpha);
        let (k2p, k2d) = rhs(r + 0.5 * h, phi + 0.5 * h * k1p, dphi + 0.5 * h * k1d, alpha);
        let (k3p, k3d) = rhs(r + 0.5 * h, phi + 0.5 * h * k2p, dphi + 0.5 * h * k2d, alpha);
        let (k4p, k4d) = rhs(r + h, phi + h * k3p, dphi + h * k3d, alpha);
        phi += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        dphi += h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
        traj[j + 1] = phi;
        if phi < 0.0 {
            return (Shot::High, traj);
        }
        if dphi > 0.0 && phi < 0.9 * c && phi > guard {
            return (Shot::Low, traj);
        }
        if phi < guard {
            // Effectively converged to zero before the event fired.
            return (Shot::Low, traj);
        }
    }
    (if phi > 0.0 { Shot::Low } else { Shot::High }, traj)
}

/// Bisection shooting for the centre value phi(0). This is deliberately
/// self-contained (no collocation machinery) so it can serve as an
/// independent cross-check of the full solver.
pub fn shoot_center_value(alpha: f64, grid: &RadialGrid) -> Result<(f64, Vec<f64>)> {
    let s = alpha.sqrt();
    let mut lo = 1.5 * s;
    let mut hi = 6.0 * s;
    let (class_lo, _) = integrate(lo, alpha, grid);
    let (class_hi, _) = integrate(hi, alpha, grid);
    if class_lo != Shot::Low || class_hi != Shot::High {
        return Err(Error::NoBracketing { lo, hi });
    }
    let mut traj = Vec::new();
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let (class, t) = integrate(mid, alpha, grid);
        match class {
            Shot::Low => lo = mid,
            Shot::High => {
                hi = mid;
                traj = t;
            }
        }
    }
    if traj.is_empty() {
        let (_, t) = integrate(hi, alpha, grid);
        traj = t;
    }
    Ok((0.5 * (lo + hi), traj))
}

/// Replace the post-peel-off tail of a shot trajectory by the asymptotic
/// decay phi ~ C e^{-sqrt(alpha) r} / r, giving Newton a clean start.
fn clean_tail(traj: &mut [f64], alpha: f64, grid: &RadialGrid) {
    let n = traj.len();
    let c = traj[0];
    let mut cut = n - 1;
    for j in 2..n {
        if traj[j] <= 0.0 || traj[j] > traj[j - 1] || traj[j] < 1e-12 * c {
            cut = j - 1;
            break;
        }
    }
    let r0 = grid.r(cut).max(grid.spacing());
    let v0 = traj[cut].max(1e-300);
    let s = alpha.sqrt();
    for j in cut + 1..n {
        let r = grid.r(j);
        traj[j] = v0 * (r0 / r) * (-s * (r - r0)).exp();
    }
}

/// Collocation residual of -lap(phi) + alpha phi - phi^3 (sign flipped so the
/// rows read lap(phi) - alpha phi + phi^3), 4th order inside, Robin row at
/// r_max matching the exponential tail.
fn collocation_residual(phi: &[f64], alpha: f64, grid: &RadialGrid) -> Vec<f64> {
    let n = grid.n;
    let h = grid.spacing();
    let h2 = 12.0 * h * h;
    let h1 = 12.0 * h;
    let mut res = vec![0.0; n];

    let cubic = |v: f64| v * v * v;
    // Row 0: laplacian at the origin is 3 phi''(0); even extension.
    let ddr0 = (-30.0 * phi[0] + 32.0 * phi[1] - 2.0 * phi[2]) / h2;
    res[0] = 3.0 * ddr0 - alpha * phi[0] + cubic(phi[0]);
    // Row 1 uses the even image phi[-1] = phi[1].
    {
        let r = grid.r(1);
        let lap = (-phi[1] + 16.0 * phi[0] - 30.0 * phi[1] + 16.0 * phi[2] - phi[3]) / h2
            + (2.0 / r) * (phi[1] - 8.0 * phi[0] + 8.0 * phi[2] - phi[3]) / h1;
        res[1] = lap - alpha * phi[1] + cubic(phi[1]);
    }
    for j in 2..n - 2 {
        let r = grid.r(j);
        let lap = (-phi[j - 2] + 16.0 * phi[j - 1] - 30.0 * phi[j] + 16.0 * phi[j + 1]
            - phi[j + 2])
            / h2
            + (2.0 / r) * (phi[j - 2] - 8.0 * phi[j - 1] + 8.0 * phi[j + 1] - phi[j + 2]) / h1;
        res[j] = lap - alpha * phi[j] + cubic(phi[j]);
    }
    {
        let j = n - 2;
        let r = grid.r(j);
        let lap = (phi[j - 1] - 2.0 * phi[j] + phi[j + 1]) / (h * h)
            + (2.0 / r) * (phi[j + 1] - phi[j - 1]) / (2.0 * h);
        res[j] = lap - alpha * phi[j] + cubic(phi[j]);
    }
    {
        let j = n - 1;
        let robin = alpha.sqrt() + 1.0 / grid.r_max;
        res[j] = (3.0 * phi[j] - 4.0 * phi[j - 1] + phi[j - 2]) / (2.0 * h) + robin * phi[j];
    }
    res
}

fn collocation_jacobian(phi: &[f64], alpha: f64, grid: &RadialGrid) -> Banded {
    let n = grid.n;
    let h = grid.spacing();
    let h2 = 12.0 * h * h;
    let h1 = 12.0 * h;
    let mut jac = Banded::new(n, 2, 2);
    let dcubic = |v: f64| 3.0 * v * v;

    jac.add(0, 0, 3.0 * (-30.0) / h2 - alpha + dcubic(phi[0]));
    jac.add(0, 1, 3.0 * 32.0 / h2);
    jac.add(0, 2, 3.0 * (-2.0) / h2);
    {
        let r = grid.r(1);
        jac.add(1, 0, 16.0 / h2 + (2.0 / r) * (-8.0) / h1);
        jac.add(1, 1, (-31.0) / h2 + (2.0 / r) / h1 - alpha + dcubic(phi[1]));
        jac.add(1, 2, 16.0 / h2 + (2.0 / r) * 8.0 / h1);
        jac.add(1, 3, -1.0 / h2 + (2.0 / r) * (-1.0) / h1);
    }
    for j in 2..n - 2 {
        let r = grid.r(j);
        jac.add(j, j - 2, -1.0 / h2 + (2.0 / r) / h1);
        jac.add(j, j - 1, 16.0 / h2 + (2.0 / r) * (-8.0) / h1);
        jac.add(j, j, -30.0 / h2 - alpha + dcubic(phi[j]));
        jac.add(j, j + 1, 16.0 / h2 + (2.0 / r) * 8.0 / h1);
        jac.add(j, j + 2, -1.0 / h2 + (2.0 / r) * (-1.0) / h1);
    }
    {
        let j = n - 2;
        let r = grid.r(j);
        jac.add(j, j - 1, 1.0 / (h * h) + (2.0 / r) * (-1.0) / (2.0 * h));
        jac.add(j, j, -2.0 / (h * h) - alpha + dcubic(phi[j]));
        jac.add(j, j + 1, 1.0 / (h * h) + (2.0 / r) / (2.0 * h));
    }
    {
        let j = n - 1;
        let robin = alpha.sqrt() + 1.0 / grid.r_max;
        jac.add(j, j - 2, 1.0 / (2.0 * h));
        jac.add(j, j - 1, -4.0 / (2.0 * h));
        jac.add(j, j, 3.0 / (2.0 * h) + robin);
    }
    jac
}

/// 4th-order first derivative on the grid; parity-aware at the origin.
pub fn radial_derivative(values: &[f64], grid: &RadialGrid) -> Vec<f64> {
    let n = grid.n;
    let h = grid.spacing();
    let h1 = 12.0 * h;
    let mut d = vec![0.0; n];
    // Odd derivative of an even function vanishes at r = 0.
    d[0] = 0.0;
    d[1] = (values[1] - 8.0 * values[0] + 8.0 * values[2] - values[3]) / h1;
    for j in 2..n - 2 {
        d[j] = (values[j - 2] - 8.0 * values[j - 1] + 8.0 * values[j + 1] - values[j + 2]) / h1;
    }
    d[n - 2] = (values[n - 1] - values[n - 3]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    d
}

/// Scaling derivative of the ground-state family, (phi + r phi') / (2 alpha).
pub fn alpha_derivative(values: &[f64], d_r: &[f64], alpha: f64, grid: &RadialGrid) -> Vec<f64> {
    (0..grid.n)
        .map(|j| (values[j] + grid.r(j) * d_r[j]) / (2.0 * alpha))
        .collect()
}

pub fn solve_ground_state(alpha: f64, grid: RadialGrid, tol: f64) -> Result<RadialProfile> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::ConfigInvalid {
            detail: format!("alpha must be positive and finite, got {alpha}"),
        });
    }
    let (_, mut phi) = shoot_center_value(alpha, &grid)?;
    clean_tail(&mut phi, alpha, &grid);

    // The residual sums stencil terms of size ~ 5 |phi|_inf / h^2, so it
    // cannot be evaluated below roundoff of that scale. Stop there.
    let h = grid.spacing();
    let phi_max = phi.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = 4.0 * f64::EPSILON * 6.0 * phi_max / (h * h);
    let target = tol.max(floor);

    let mut residual = f64::INFINITY;
    for iter in 0..25 {
        let res = collocation_residual(&phi, alpha, &grid);
        residual = res.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !residual.is_finite() {
            return Err(Error::NonFinite { what: "ground-state collocation residual" });
        }
        if residual <= target {
            break;
        }
        if iter == 24 {
            return Err(Error::NotConverged {
                what: "ground-state Newton polish",
                residual,
                iterations: iter,
                tol: target,
            });
        }
        let jac = collocation_jacobian(&phi, alpha, &grid);
        let mut step: Vec<f64> = res;
        jac.solve(&mut step)?;
        for j in 0..grid.n {
            phi[j] -= step[j];
        }
    }

    let d_r = radial_derivative(&phi, &grid);
    let d_alpha = alpha_derivative(&phi, &d_r, alpha, &grid);
    Ok(RadialProfile {
        grid,
        alpha,
        values: phi,
        d_r,
        d_alpha,
        residual,
    })
}

/// Trapezoid quadrature of 4 pi * integral f(r) r^2 dr over the grid.
pub fn radial_integral(grid: &RadialGrid, f: impl Fn(usize) -> f64) -> f64 {
    let h = grid.spacing();
    let mut acc = 0.0;
    for j in 0..grid.n {
        let w = if j == 0 || j == grid.n - 1 { 0.5 } else { 1.0 };
        let r = grid.r(j);
        acc += w * f(j) * r * r;
    }
    4.0 * std::f64::consts::PI * acc * h
}

impl RadialProfile {
    /// L2 mass of the profile, 4 pi * integral phi^2 r^2 dr.
    pub fn mass(&self) -> f64 {
        radial_integral(&self.grid, |j| self.values[j] * self.values[j])
    }

    pub fn center_value(&self) -> f64 {
        self.values[0]
    }

    fn interp(&self, data: &[f64], r: f64) -> f64 {
        let r = r.abs();
        let h = self.grid.spacing();
        let n = self.grid.n;
        if r > self.grid.r_max {
            // Exponential tail extension off the end of the grid.
            let v_end = data[n - 1];
            return v_end * (self.grid.r_max / r) * (-(self.alpha.sqrt()) * (r - self.grid.r_max)).exp();
        }
        let t = r / h;
        let j = (t as usize).min(n - 2);
        let s = j.saturating_sub(1).min(n - 4);
        let x = t - s as f64;
        // 4-point Lagrange on nodes s..s+3.
        let (d0, d1, d2, d3) = (x, x - 1.0, x - 2.0, x - 3.0);
        let w0 = -d1 * d2 * d3 / 6.0;
        let w1 = d0 * d2 * d3 / 2.0;
        let w2 = -d0 * d1 * d3 / 2.0;
        let w3 = d0 * d1 * d2 / 6.0;
        w0 * data[s] + w1 * data[s + 1] + w2 * data[s + 2] + w3 * data[s + 3]
    }

    /// Cubic interpolation of phi at radius r (even extension, tail model
    /// beyond r_max).
    pub fn eval(&self, r: f64) -> f64 {
        self.interp(&self.values, r)
    }

    /// Cubic interpolation of phi' at radius r. Odd about the origin.
    pub fn eval_d_r(&self, r: f64) -> f64 {
        let v = self.interp(&self.d_r, r.abs());
        if r < 0.0 {
            -v
        } else {
            v
        }
    }

    pub fn eval_d_alpha(&self, r: f64) -> f64 {
        self.interp(&self.d_alpha, r)
    }
}

/// Map a solved profile to a different alpha through the exact scaling
/// phi(r, alpha_to) = s^(1/2) phi(s^(1/2) r, alpha_from), s = alpha_to / alpha_from,
/// sampled on the same grid.
pub fn rescale_profile(p: &RadialProfile, alpha_to: f64) -> Result<RadialProfile> {
    if !(alpha_to > 0.0) || !alpha_to.is_finite() {
        return Err(Error::ConfigInvalid {
            detail: format!("alpha must be positive and finite, got {alpha_to}"),
        });
    }
    let s = alpha_to / p.alpha;
    let sq = s.sqrt();
    let grid = p.grid;
    let values: Vec<f64> = (0..grid.n).map(|j| sq * p.eval(sq * grid.r(j))).collect();
    let boundary = values[grid.n - 1].abs();
    let center = values[0].abs();
    if boundary > BOUNDARY_RATIO_LIMIT * center {
        return Err(Error::InterpolationOutOfRange {
            r: sq * grid.r_max,
            r_max: grid.r_max,
        });
    }
    let d_r = radial_derivative(&values, &grid);
    let d_alpha = alpha_derivative(&values, &d_r, alpha_to, &grid);
    let residual = collocation_residual(&values, alpha_to, &grid)
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(RadialProfile {
        grid,
        alpha: alpha_to,
        values,
        d_r,
        d_alpha,
        residual,
    })
}

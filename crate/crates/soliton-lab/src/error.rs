//! Error type shared by every module in the crate.
//!
//! Numerical failures carry enough context (residuals, iteration counts,
//! offending values) to diagnose a run from the log alone.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shooting bracket endpoints classify the same way; no sign change to bisect.
    #[error("no bracketing interval for the shooting parameter in [{lo}, {hi}]")]
    NoBracketing { lo: f64, hi: f64 },

    /// An iterative solve stopped above its tolerance.
    #[error("{what} did not converge: residual {residual:.3e} after {iterations} iterations (tol {tol:.3e})")]
    NotConverged {
        what: &'static str,
        residual: f64,
        iterations: usize,
        tol: f64,
    },

    /// A profile was evaluated outside the radius covered by its grid.
    #[error("interpolation out of range: r = {r:.6} exceeds r_max = {r_max:.6} with non-negligible tail")]
    InterpolationOutOfRange { r: f64, r_max: f64 },

    /// A rescaled or lifted profile no longer fits the target domain.
    #[error("profile too wide for the target domain: boundary value {boundary:.3e} exceeds {limit:.3e}")]
    ProfileTooWide { boundary: f64, limit: f64 },

    /// Two fields or operators live on different grids.
    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    /// Eigenvalue search found nothing in the expected window.
    #[error("eigenvalue not found: {detail}")]
    NotFound { detail: String },

    /// A quantity was computed but misses the requested tolerance.
    #[error("{what}: achieved {achieved:.3e}, required {required:.3e}")]
    ToleranceUnmet {
        what: &'static str,
        achieved: f64,
        required: f64,
    },

    /// Biorthogonality matrix too close to singular to invert reliably.
    #[error("ill-conditioned Gram matrix: condition estimate {cond:.3e}")]
    IllConditionedGram { cond: f64 },

    /// Newton iteration left its basin (step exceeded the trust bound).
    #[error("Newton diverged in {what}: step {step:.3e} exceeds bound {bound:.3e}")]
    NewtonDiverged {
        what: &'static str,
        step: f64,
        bound: f64,
    },

    /// Modulation-fit Jacobian numerically singular.
    #[error("singular modulation Jacobian (pivot {pivot:.3e})")]
    SingularJacobian { pivot: f64 },

    /// Path parameters stopped converging (limits at t -> infinity undefined).
    #[error("path not convergent: {detail}")]
    PathNotConvergent { detail: String },

    /// Fitted soliton centre wandered outside the computational box.
    #[error("soliton centre |y| = {y:.3} left the box of half-width {half_width:.3}")]
    SolitonLeftBox { y: f64, half_width: f64 },

    /// A transformed sample point fell outside the source field's box.
    #[error("transformed sample point |x'| = {point:.3} outside source half-width {half_width:.3}")]
    SupportOverflow { point: f64, half_width: f64 },

    /// Tail integrals for the asymptotic frame did not settle.
    #[error("tail quadrature not converged: {detail}")]
    TailNotConverged { detail: String },

    /// NaN or infinity appeared in a field.
    #[error("non-finite value encountered in {what}")]
    NonFinite { what: &'static str },

    /// A stored path was queried beyond its final sample.
    #[error("path exhausted: t = {t:.4} beyond final sample {t_end:.4}")]
    PathExhausted { t: f64, t_end: f64 },

    /// Shooting for the unstable correction found no sign change.
    #[error("correction bracket failed on [{lo:.3e}, {hi:.3e}]: same terminal sign")]
    BracketFailed { lo: f64, hi: f64 },

    /// Probe horizon too short to discriminate growth from dispersion.
    #[error("probe horizon {horizon:.3} shorter than required {required:.3}")]
    HorizonTooShort { horizon: f64, required: f64 },

    /// Decay-fit window has too few usable samples.
    #[error("fit window too short: {count} samples in [{t0:.3}, {t1:.3}]")]
    WindowTooShort { count: usize, t0: f64, t1: f64 },

    /// Two-time check called with coincident times.
    #[error("coincident times t = s = {t:.6}")]
    CoincidentPoints { t: f64 },

    /// Configuration file or CLI flags invalid.
    #[error("invalid configuration: {detail}")]
    ConfigInvalid { detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid { .. } => 2,
            Error::Io(_) | Error::Serde(_) => 5,
            Error::NonFinite { .. } => 4,
            _ => 3,
        }
    }
}

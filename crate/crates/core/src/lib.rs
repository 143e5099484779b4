//! Closed-loop simulation of a grid-forming (GFM) inverter behind an LC
//! filter and a line impedance, together with the analysis checks used to
//! verify its behaviour.
//!
//! The crate is organized around a small set of pure evaluation modules and
//! one stateful engine:
//!
//! - [`frames`]: rotating-frame kinematics (local dq <-> global DQ).
//! - [`plant`]: per-unit circuit dynamics of the LC filter and the line.
//! - [`power_droop`]: instantaneous power, saturated second-order power
//!   filters, and the droop laws producing the voltage reference and the
//!   frame frequency.
//! - [`controllers`]: the adaptive backstepping voltage controller (with
//!   deadzone-gated gain adaptation) and a conventional dual-loop PI
//!   baseline.
//! - [`safety`]: the closed-form current-limiting filter that keeps the
//!   terminal current inside a circular constraint, plus episode
//!   bookkeeping.
//! - [`sim`]: scenario configuration, the closed-loop right-hand side, the
//!   adaptive embedded Runge-Kutta integrator, and trajectory recording.
//! - [`analysis`]: trajectory-level checks (residual band, decay envelope,
//!   current invariance, gain monotonicity) and the independent oracles
//!   used to validate the numerics.
//! - [`verify`]: the composed verification pipeline run by the CLI.
//!
//! All electrical quantities are per-unit; `omega_b` (rad/s) converts
//! per-unit frequency into radian time derivatives.

pub mod analysis;
pub mod controllers;
pub mod frames;
pub mod plant;
pub mod power_droop;
pub mod safety;
pub mod sim;
pub mod verify;

/// Axis label for diagnostics attached to per-axis controller state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    D,
    Q,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::D => write!(f, "d"),
            Axis::Q => write!(f, "q"),
        }
    }
}

/// Errors surfaced by configuration handling, control evaluation, and the
/// integration engine.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    /// Configuration could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// An adaptive gain state grew past the guarded-exponential limit, so
    /// `exp(z)` would overflow; the run is aborted rather than silently
    /// saturated.
    #[error("adaptive gain blow-up on axis {axis}: z = {z:.6e} at t = {t:.9} s")]
    GainBlowUp { axis: Axis, z: f64, t: f64 },

    /// The error controller demanded a step below the configured floor.
    #[error(
        "step size underflow at t = {t:.9} s: required h = {h:.3e} s is below the floor {min_step:.3e} s"
    )]
    StepUnderflow { t: f64, h: f64, min_step: f64 },

    /// A non-finite value appeared in a derivative or accepted state.
    #[error("non-finite value at t = {t:.9} s: {detail}")]
    NonFinite { t: f64, detail: String },

    /// The integration exceeded its hard step budget (a symptom of
    /// crawling at the minimum step for the whole horizon).
    #[error("step budget exceeded at t = {t:.9} s after {attempts} attempted steps")]
    StepBudgetExceeded { t: f64, attempts: u64 },

    /// A time series was fed out of order.
    #[error("non-monotone time sample: {t} after {prev}")]
    NonMonotoneTime { prev: f64, t: f64 },

    /// Underlying I/O failure (CSV/report writing).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type SimResult<T> = Result<T, SimError>;

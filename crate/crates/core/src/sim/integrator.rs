//! Adaptive explicit Runge–Kutta integration with an embedded error
//! estimate.
//!
//! The pair is Cash–Karp 5(4). Its fifth-order weights are all
//! non-negative, so a state component whose derivative is non-negative at
//! every stage can never decrease across an accepted step — not even by
//! rounding in the combination. The adaptive-gain states rely on exactly
//! that property.

use serde::Serialize;

use crate::sim::config::SolverConfig;
use crate::{SimError, SimResult};

/// Step-size control inputs.
#[derive(Debug, Clone, Copy)]
pub struct StepperSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
    /// First trial step; defaults to `max_step`.
    pub initial_step: Option<f64>,
}

impl StepperSettings {
    pub fn from_solver(cfg: &SolverConfig) -> Self {
        StepperSettings {
            rel_tol: cfg.rel_tol,
            abs_tol: cfg.abs_tol,
            max_step: cfg.max_step,
            min_step: cfg.min_step,
            initial_step: None,
        }
    }
}

/// Counters and step-size extremes for one integration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
    pub min_accepted_step: f64,
    pub max_accepted_step: f64,
}

impl Default for StepStats {
    fn default() -> Self {
        StepStats {
            accepted: 0,
            rejected: 0,
            rhs_evals: 0,
            min_accepted_step: f64::INFINITY,
            max_accepted_step: 0.0,
        }
    }
}

impl StepStats {
    /// Merges counters from a later integration leg.
    pub fn absorb(&mut self, other: &StepStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.rhs_evals += other.rhs_evals;
        self.min_accepted_step = self.min_accepted_step.min(other.min_accepted_step);
        self.max_accepted_step = self.max_accepted_step.max(other.max_accepted_step);
    }
}

/// One accepted step, handed to the observer: both endpoints with their
/// derivatives, enabling cubic Hermite interpolation inside the step.
pub struct StepRecord<'a> {
    pub t0: f64,
    pub y0: &'a [f64],
    pub f0: &'a [f64],
    pub t1: f64,
    pub y1: &'a [f64],
    pub f1: &'a [f64],
}

impl StepRecord<'_> {
    /// Cubic Hermite interpolant at `t` within `[t0, t1]`, exact for
    /// polynomials up to degree three.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for i in 0..out.len() {
            out[i] = h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i];
        }
    }
}

// Cash–Karp tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 3.0 / 5.0;
const C5: f64 = 1.0;
const C6: f64 = 7.0 / 8.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 3.0 / 10.0;
const A42: f64 = -9.0 / 10.0;
const A43: f64 = 6.0 / 5.0;
const A51: f64 = -11.0 / 54.0;
const A52: f64 = 5.0 / 2.0;
const A53: f64 = -70.0 / 27.0;
const A54: f64 = 35.0 / 27.0;
const A61: f64 = 1631.0 / 55296.0;
const A62: f64 = 175.0 / 512.0;
const A63: f64 = 575.0 / 13824.0;
const A64: f64 = 44275.0 / 110592.0;
const A65: f64 = 253.0 / 4096.0;
// Fifth-order weights (all non-negative; B2 = B5 = 0).
const B1: f64 = 37.0 / 378.0;
const B3: f64 = 250.0 / 621.0;
const B4: f64 = 125.0 / 594.0;
const B6: f64 = 512.0 / 1771.0;
// Difference against the embedded fourth-order weights.
const E1: f64 = 37.0 / 378.0 - 2825.0 / 27648.0;
const E3: f64 = 250.0 / 621.0 - 18575.0 / 48384.0;
const E4: f64 = 125.0 / 594.0 - 13525.0 / 55296.0;
const E5: f64 = -277.0 / 14336.0;
const E6: f64 = 512.0 / 1771.0 - 1.0 / 4.0;

// Step-size controller constants (classic PI controller for embedded
// pairs: damped growth, limited shrink/growth ratios).
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const MIN_RATIO: f64 = 0.2;
const MAX_RATIO: f64 = 10.0;
/// Hard cap on step attempts, guarding against a run that crawls forever
/// at the minimum step.
const MAX_ATTEMPTS: u64 = 500_000_000;

/// Integrates `dy/dt = f(t, y)` from `t0` to `t_end`, calling `observe`
/// after every accepted step, and returns the final state with the step
/// statistics.
///
/// `f` errors at interior stages are treated as a rejected step (the
/// trial state overshot into invalid territory) until the step cannot
/// shrink further; errors at an accepted point are fatal.
pub fn integrate_adaptive<F, O>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    settings: &StepperSettings,
    mut observe: O,
) -> SimResult<(Vec<f64>, StepStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> SimResult<()>,
    O: FnMut(&StepRecord<'_>) -> SimResult<()>,
{
    let n = y0.len();
    let mut stats = StepStats::default();
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; n];
    let mut y_stage = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut f_new = vec![0.0; n];

    let mut t = t0;
    let mut h = settings
        .initial_step
        .unwrap_or(settings.max_step)
        .min(settings.max_step)
        .max(settings.min_step);
    let mut facold: f64 = 1e-4;
    let mut just_rejected = false;

    f(t, &y, &mut k1)?;
    stats.rhs_evals += 1;

    while t < t_end {
        if stats.accepted + stats.rejected >= MAX_ATTEMPTS {
            return Err(SimError::StepBudgetExceeded { t, attempts: MAX_ATTEMPTS });
        }
        let remaining = t_end - t;
        let ht = h.min(remaining);
        let reaches_end = ht >= remaining;

        // A trial state may wander outside the model's guarded domain;
        // treat that as a failed step and retry smaller, unless the step
        // is already at the floor.
        let mut stage_error: Option<SimError> = None;
        let mut run_stage = |ti: f64, yi: &[f64], ki: &mut [f64], evals: &mut u64| -> SimResult<bool> {
            *evals += 1;
            match f(ti, yi, ki) {
                Ok(()) => Ok(true),
                Err(e) if ht <= settings.min_step * (1.0 + 1e-9) => Err(e),
                Err(e) => {
                    stage_error = Some(e);
                    Ok(false)
                }
            }
        };

        let stages_ok = (|| -> SimResult<bool> {
            for i in 0..n {
                y_stage[i] = y[i] + ht * A21 * k1[i];
            }
            if !run_stage(t + C2 * ht, &y_stage, &mut k2, &mut stats.rhs_evals)? {
                return Ok(false);
            }
            for i in 0..n {
                y_stage[i] = y[i] + ht * (A31 * k1[i] + A32 * k2[i]);
            }
            if !run_stage(t + C3 * ht, &y_stage, &mut k3, &mut stats.rhs_evals)? {
                return Ok(false);
            }
            for i in 0..n {
                y_stage[i] = y[i] + ht * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            if !run_stage(t + C4 * ht, &y_stage, &mut k4, &mut stats.rhs_evals)? {
                return Ok(false);
            }
            for i in 0..n {
                y_stage[i] = y[i] + ht * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            if !run_stage(t + C5 * ht, &y_stage, &mut k5, &mut stats.rhs_evals)? {
                return Ok(false);
            }
            for i in 0..n {
                y_stage[i] = y[i]
                    + ht * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            run_stage(t + C6 * ht, &y_stage, &mut k6, &mut stats.rhs_evals)
        })()?;

        if !stages_ok {
            debug_assert!(stage_error.is_some());
            let _ = stage_error;
            stats.rejected += 1;
            h = (ht * 0.25).max(settings.min_step);
            just_rejected = true;
            continue;
        }

        let mut err_sq = 0.0;
        let mut finite = true;
        for i in 0..n {
            y_new[i] = y[i] + ht * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B6 * k6[i]);
            let e = ht * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]);
            let sk = settings.abs_tol + settings.rel_tol * y[i].abs().max(y_new[i].abs());
            let r = e / sk;
            err_sq += r * r;
            finite &= y_new[i].is_finite();
        }
        let err = (err_sq / n as f64).sqrt();
        let accept = finite && err.is_finite() && err <= 1.0;

        if accept {
            let t_new = if reaches_end { t_end } else { t + ht };
            // The endpoint derivative doubles as the next step's first
            // stage; a failure here means the accepted state itself is
            // outside the model's domain, which is fatal.
            f(t_new, &y_new, &mut f_new)?;
            stats.rhs_evals += 1;
            observe(&StepRecord {
                t0: t,
                y0: &y,
                f0: &k1,
                t1: t_new,
                y1: &y_new,
                f1: &f_new,
            })?;
            stats.accepted += 1;
            stats.min_accepted_step = stats.min_accepted_step.min(ht);
            stats.max_accepted_step = stats.max_accepted_step.max(ht);

            let fac11 = err.max(1e-16).powf(EXPO);
            let mut fac = fac11 / facold.powf(BETA);
            fac = (fac / SAFETY).clamp(1.0 / MAX_RATIO, 1.0 / MIN_RATIO);
            let mut h_next = ht / fac;
            if just_rejected {
                h_next = h_next.min(ht);
            }
            facold = err.max(1e-4);
            just_rejected = false;

            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut f_new);
            h = h_next.min(settings.max_step);
        } else {
            stats.rejected += 1;
            let fac11 = if err.is_finite() { err.max(1e-16).powf(EXPO) } else { f64::INFINITY };
            let shrink = (fac11 / SAFETY).min(1.0 / MIN_RATIO).max(1.0);
            let h_next = ht / shrink;
            if h_next < settings.min_step {
                return Err(SimError::StepUnderflow {
                    t,
                    h: h_next,
                    min_step: settings.min_step,
                });
            }
            h = h_next;
            just_rejected = true;
        }
    }

    Ok((y, stats))
}

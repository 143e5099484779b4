//! Current-limiting safety filter and its episode bookkeeping.
//!
//! The filter keeps the terminal current inside the disc
//! `h(i_t) = i_max^2 - |i_t|^2 >= 0`. For a candidate terminal voltage
//! `v_t^n` it evaluates the margin
//!
//! ```text
//! eta = -2*i_t'*A*i_t + (2*omega_b/l_f)*i_t'*v_c
//!       - (2*omega_b/l_f)*i_t'*v_t^n + c*h,
//! A = [[-r_f*omega_b/l_f,  omega_b*omega],
//!      [-omega_b*omega,   -r_f*omega_b/l_f]],
//! ```
//!
//! which is the decay-rate condition `h' >= -c*h` under the candidate
//! input. If `eta >= 0` the candidate passes through unchanged; otherwise
//! the smallest correction restoring `eta = 0` is applied, a step of length
//! `|eta| * l_f / (2*omega_b*|i_t|)` against the current direction. The
//! correction is exactly the Euclidean projection of the candidate onto the
//! closed half-space `{v : (2*omega_b/l_f)*i_t'*v <= drift + c*h}`.

use serde::{Deserialize, Serialize};

use crate::frames::Vec2;
use crate::plant::KnownPhys;
use crate::{SimError, SimResult};

/// Squared-norm threshold treated as "zero current": below it the filter
/// direction is undefined and the constraint cannot be active anyway.
pub const CURRENT_NORM_SQ_FLOOR: f64 = 1e-30;

/// Safety-filter parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyParams {
    /// Whether the filter modifies the applied terminal voltage.
    pub enabled: bool,
    /// Terminal current limit (p.u.).
    pub i_max: f64,
    /// Barrier decay rate (1/s). Larger values intervene later and harder:
    /// the constraint activates once the barrier shrinks to roughly
    /// (drift)/c, so a large rate rides the boundary with a thinner margin
    /// against integration error, and values much above 1e6 force the
    /// explicit integrator into extremely small steps while the constraint
    /// is active. The default keeps the measured boundary overshoot three
    /// orders of magnitude inside the 1e-6 invariance tolerance.
    pub c: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        SafetyParams {
            enabled: false,
            i_max: 1.2,
            c: 1e4,
        }
    }
}

/// Result of one filter evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyDecision {
    /// The terminal voltage to apply (equals the nominal when inactive).
    pub v_t: Vec2,
    /// The margin evaluated at the nominal candidate.
    pub eta: f64,
    /// Barrier value at the current state.
    pub h: f64,
    /// True iff the filter modified the candidate.
    pub active: bool,
}

/// Barrier function `i_max^2 - |i_t|^2`.
pub fn barrier(i_t: Vec2, i_max: f64) -> f64 {
    i_max * i_max - i_t.norm_sq()
}

/// Margin `eta` of the decay-rate condition under a candidate terminal
/// voltage. `omega` is the instantaneous frame frequency (p.u.).
pub fn eta(
    i_t: Vec2,
    v_c: Vec2,
    v_t_nominal: Vec2,
    omega: f64,
    phys: &KnownPhys,
    safety: &SafetyParams,
) -> f64 {
    let wb = phys.omega_b;
    let a_diag = -phys.r_f * wb / phys.l_f;
    let a_skew = wb * omega;
    let a_i = Vec2::new(a_diag * i_t.d + a_skew * i_t.q, -a_skew * i_t.d + a_diag * i_t.q);
    let gain = 2.0 * wb / phys.l_f;
    let h = barrier(i_t, safety.i_max);
    -2.0 * i_t.dot(a_i) + gain * i_t.dot(v_c) - gain * i_t.dot(v_t_nominal) + safety.c * h
}

/// Applies the current-limiting filter to a nominal terminal voltage.
///
/// Returns the nominal unchanged (inactive) when the filter is disabled,
/// when `eta >= 0`, or when the current norm is below
/// [`CURRENT_NORM_SQ_FLOOR`].
pub fn apply_filter(
    i_t: Vec2,
    v_c: Vec2,
    v_t_nominal: Vec2,
    omega: f64,
    phys: &KnownPhys,
    safety: &SafetyParams,
) -> SafetyDecision {
    let h = barrier(i_t, safety.i_max);
    let margin = eta(i_t, v_c, v_t_nominal, omega, phys, safety);
    let norm_sq = i_t.norm_sq();
    if !safety.enabled || margin >= 0.0 || norm_sq <= CURRENT_NORM_SQ_FLOOR {
        return SafetyDecision {
            v_t: v_t_nominal,
            eta: margin,
            h,
            active: false,
        };
    }
    let correction = i_t * (phys.l_f / (2.0 * phys.omega_b) * margin / norm_sq);
    SafetyDecision {
        v_t: v_t_nominal + correction,
        eta: margin,
        h,
        active: true,
    }
}

/// Bookkeeping of filter-active episodes along a run.
///
/// Samples are fed in time order. Boolean samples ([`record_eta`]) open and
/// close episodes exactly at the sample times; value samples
/// ([`record_eta_value`]) place the transition at the linearly interpolated
/// zero crossing of `eta` between consecutive samples. A sample that is
/// active at the very first time opens an episode there, so a run that
/// starts constrained is counted.
///
/// [`record_eta`]: SafetyEventLog::record_eta
/// [`record_eta_value`]: SafetyEventLog::record_eta_value
#[derive(Debug, Clone, Default)]
pub struct SafetyEventLog {
    episodes: Vec<(f64, Option<f64>)>,
    last_t: Option<f64>,
    last_eta: Option<f64>,
    closed_time: f64,
}

impl SafetyEventLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_monotone(&self, t: f64) -> SimResult<()> {
        if let Some(prev) = self.last_t {
            if t < prev {
                return Err(SimError::NonMonotoneTime { prev, t });
            }
        }
        Ok(())
    }

    fn open(&mut self, t: f64) {
        self.episodes.push((t, None));
    }

    fn close(&mut self, t: f64) {
        if let Some((on, off @ None)) = self.episodes.last_mut() {
            *off = Some(t);
            self.closed_time += t - *on;
        }
    }

    fn currently_active(&self) -> bool {
        matches!(self.episodes.last(), Some((_, None)))
    }

    /// Records an activity flag at time `t`; transitions happen at `t`.
    pub fn record_eta(&mut self, t: f64, active: bool) -> SimResult<()> {
        self.check_monotone(t)?;
        match (self.currently_active(), active) {
            (false, true) => self.open(t),
            (true, false) => self.close(t),
            _ => {}
        }
        self.last_t = Some(t);
        self.last_eta = None;
        Ok(())
    }

    /// Records a margin sample at time `t`; activity is `eta < 0`, and
    /// transitions are placed at the interpolated zero crossing between the
    /// previous and the current sample.
    pub fn record_eta_value(&mut self, t: f64, eta: f64) -> SimResult<()> {
        self.check_monotone(t)?;
        let active = eta < 0.0;
        let transition_t = match (self.last_t, self.last_eta) {
            (Some(t0), Some(e0)) if (e0 < 0.0) != active && (eta - e0).abs() > 0.0 => {
                let frac = (0.0 - e0) / (eta - e0);
                t0 + frac.clamp(0.0, 1.0) * (t - t0)
            }
            _ => t,
        };
        match (self.currently_active(), active) {
            (false, true) => self.open(transition_t),
            (true, false) => self.close(transition_t),
            _ => {}
        }
        self.last_t = Some(t);
        self.last_eta = Some(eta);
        Ok(())
    }

    /// Number of episodes, including a still-open one.
    pub fn n_eta(&self) -> usize {
        self.episodes.len()
    }

    /// Total active time: closed episodes plus the elapsed part of an open
    /// episode up to the last recorded sample.
    pub fn t_eta(&self) -> f64 {
        let open = match (self.episodes.last(), self.last_t) {
            (Some((on, None)), Some(t)) => t - on,
            _ => 0.0,
        };
        self.closed_time + open
    }

    pub fn episodes(&self) -> &[(f64, Option<f64>)] {
        &self.episodes
    }
}

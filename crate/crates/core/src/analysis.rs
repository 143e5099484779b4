//! Trajectory-level checks and the independent oracles backing them.
//!
//! Each check consumes recorded trajectory data (plus, where available,
//! the per-step extreme-value metrics) and produces a [`CheckReport`]
//! with the measured worst value, the threshold it was compared against,
//! and where the worst value occurred.

use serde::Serialize;

use crate::frames::Vec2;
use crate::sim::record::{RunMetrics, TrajectoryRecord};
use crate::sim::rhs::CtrlState;
use crate::{SimError, SimResult};

/// Outcome of one check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// Worst measured value of the checked quantity.
    pub measured: f64,
    /// Bound the measurement was compared against.
    pub threshold: f64,
    /// Time of the worst measurement (NaN when not applicable).
    pub worst_t: f64,
    pub details: String,
}

impl CheckReport {
    fn new(name: &str, pass: bool, measured: f64, threshold: f64, worst_t: f64, details: String) -> Self {
        CheckReport { name: name.to_string(), pass, measured, threshold, worst_t, details }
    }

    /// One-line human-readable rendering.
    pub fn line(&self) -> String {
        format!(
            "{} {}: measured {:.6e} vs threshold {:.6e}{} — {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            if self.worst_t.is_nan() { String::new() } else { format!(" (worst at t = {:.6} s)", self.worst_t) },
            self.details,
        )
    }
}

/// Steady-state band implied by the adaptation deadzone: a composite
/// error `W <= epsilon` bounds each tracked component by `sqrt(2 epsilon)`.
/// `slack` widens the band for sampling and integration tolerance.
pub fn residual_band_threshold(epsilon: f64, slack: f64) -> f64 {
    (2.0 * epsilon).sqrt() * (1.0 + slack)
}

/// Largest voltage-tracking residual (inf-norm over the two axes) among
/// records with `t_a <= t <= t_b`, with the time it occurred. `None` if
/// the window contains no records.
pub fn max_residual_in_window(records: &[TrajectoryRecord], t_a: f64, t_b: f64) -> Option<(f64, f64)> {
    let mut worst: Option<(f64, f64)> = None;
    for r in records.iter().filter(|r| r.t >= t_a && r.t <= t_b) {
        let res = r.voltage_residual();
        let mag = res.d.abs().max(res.q.abs());
        if worst.map_or(true, |(m, _)| mag > m) {
            worst = Some((mag, r.t));
        }
    }
    worst
}

/// Checks that the voltage-tracking residual stays inside the deadzone
/// band over one time window.
pub fn check_residual_band(
    records: &[TrajectoryRecord],
    name: &str,
    window: (f64, f64),
    epsilon: f64,
    slack: f64,
) -> CheckReport {
    let threshold = residual_band_threshold(epsilon, slack);
    match max_residual_in_window(records, window.0, window.1) {
        Some((measured, worst_t)) => CheckReport::new(
            name,
            measured <= threshold,
            measured,
            threshold,
            worst_t,
            format!("window [{:.4}, {:.4}] s", window.0, window.1),
        ),
        None => CheckReport::new(
            name,
            false,
            f64::NAN,
            threshold,
            f64::NAN,
            format!("no records in window [{:.4}, {:.4}] s", window.0, window.1),
        ),
    }
}

/// Residual-band check applied to the tail of every constant-grid
/// segment: the last `settle` seconds of each (the whole segment when it
/// is shorter than `settle`).
pub fn check_residual_band_segments(
    records: &[TrajectoryRecord],
    segments: &[(f64, f64)],
    settle: f64,
    epsilon: f64,
    slack: f64,
) -> CheckReport {
    let threshold = residual_band_threshold(epsilon, slack);
    let mut measured = f64::NAN;
    let mut worst_t = f64::NAN;
    let mut missing = Vec::new();
    for &(a, b) in segments {
        let start = (b - settle).max(a);
        match max_residual_in_window(records, start, b) {
            Some((m, t)) if measured.is_nan() || m > measured => {
                measured = m;
                worst_t = t;
            }
            Some(_) => {}
            None => missing.push((a, b)),
        }
    }
    let pass = !measured.is_nan() && missing.is_empty() && measured <= threshold;
    CheckReport::new(
        "residual_band_segments",
        pass,
        measured,
        threshold,
        worst_t,
        if missing.is_empty() {
            format!("{} segment tails of {settle} s", segments.len())
        } else {
            format!("segments without records: {missing:?}")
        },
    )
}

/// Checks the composite-error decay envelope on both axes:
/// `2 W(t) <= 2 W(0) exp(-2 k t) + mu (1 + r^2 + vg_bound^2) / (k l^2) + slack`.
#[allow(clippy::too_many_arguments)]
pub fn check_decay_envelope(
    records: &[TrajectoryRecord],
    k: f64,
    r_line: f64,
    l_line: f64,
    mu_d: f64,
    mu_q: f64,
    vg_bound: f64,
    slack: f64,
) -> CheckReport {
    if records.is_empty() {
        return CheckReport::new("decay_envelope", false, f64::NAN, 0.0, f64::NAN, "no records".into());
    }
    let t0 = records[0].t;
    let w0 = (records[0].w_d, records[0].w_q);
    let disturbance = 1.0 + r_line * r_line + vg_bound * vg_bound;
    let offset_d = mu_d * disturbance / (k * l_line * l_line);
    let offset_q = mu_q * disturbance / (k * l_line * l_line);
    let mut measured = f64::NEG_INFINITY;
    let mut worst_t = f64::NAN;
    for r in records {
        let decay = (-2.0 * k * (r.t - t0)).exp();
        for (w, w_init, offset) in [(r.w_d, w0.0, offset_d), (r.w_q, w0.1, offset_q)] {
            let excess = 2.0 * w - (2.0 * w_init * decay + offset + slack);
            if excess > measured {
                measured = excess;
                worst_t = r.t;
            }
        }
    }
    CheckReport::new(
        "decay_envelope",
        measured <= 0.0,
        measured,
        0.0,
        worst_t,
        format!("rate 2k = {}, asymptotic offsets ({offset_d:.3e}, {offset_q:.3e})", 2.0 * k),
    )
}

/// Checks forward invariance of the current constraint on a safe run:
/// the terminal-current magnitude never exceeds `i_max (1 + tol_rel)` and
/// the barrier value never drops below its exponential floor
/// `h(0) exp(-c t) - floor_tol`.
pub fn check_current_invariance(
    records: &[TrajectoryRecord],
    metrics: Option<&RunMetrics>,
    i_max: f64,
    c: f64,
    tol_rel: f64,
    floor_tol: f64,
) -> CheckReport {
    if records.is_empty() {
        return CheckReport::new("current_invariance", false, f64::NAN, i_max, f64::NAN, "no records".into());
    }
    let t0 = records[0].t;
    let h0 = metrics.map_or(records[0].h, |m| m.h_initial);

    let mut max_norm = f64::NEG_INFINITY;
    let mut worst_t = f64::NAN;
    let mut min_floor_margin = f64::INFINITY;
    let mut floor_worst_t = f64::NAN;
    for r in records {
        let norm = r.elec.i_t.norm();
        if norm > max_norm {
            max_norm = norm;
            worst_t = r.t;
        }
        let margin = r.h - h0 * (-c * (r.t - t0)).exp();
        if margin < min_floor_margin {
            min_floor_margin = margin;
            floor_worst_t = r.t;
        }
    }
    if let Some(m) = metrics {
        if m.max_i_t_norm > max_norm {
            max_norm = m.max_i_t_norm;
            worst_t = m.t_at_max_i_t;
        }
        if m.min_h_floor_margin < min_floor_margin {
            min_floor_margin = m.min_h_floor_margin;
            floor_worst_t = m.t_at_min_h_floor_margin;
        }
    }

    let threshold = i_max * (1.0 + tol_rel);
    let pass = max_norm <= threshold && min_floor_margin >= -floor_tol;
    CheckReport::new(
        "current_invariance",
        pass,
        max_norm,
        threshold,
        worst_t,
        format!(
            "min barrier-floor margin {min_floor_margin:.3e} (tolerance {floor_tol:.1e}) at t = {floor_worst_t:.6} s"
        ),
    )
}

/// Checks that an unprotected run really violates the current limit
/// inside the window (the positive control justifying the safety filter).
pub fn check_current_exceedance(
    records: &[TrajectoryRecord],
    i_max: f64,
    window: (f64, f64),
) -> CheckReport {
    let mut max_norm = f64::NEG_INFINITY;
    let mut worst_t = f64::NAN;
    for r in records.iter().filter(|r| r.t >= window.0 && r.t <= window.1) {
        let norm = r.elec.i_t.norm();
        if norm > max_norm {
            max_norm = norm;
            worst_t = r.t;
        }
    }
    CheckReport::new(
        "current_exceedance_expected",
        max_norm > i_max,
        max_norm,
        i_max,
        worst_t,
        format!("window [{:.4}, {:.4}] s; pass requires exceeding the threshold", window.0, window.1),
    )
}

/// Checks the adaptive-gain trajectories: never decreasing (beyond
/// `step_tol`), finite at the end, and frozen (drift at most `freeze_tol`)
/// across every maximal stretch of records whose composite error sits
/// inside the deadzone.
pub fn check_gain_monotone_bounded(
    records: &[TrajectoryRecord],
    metrics: Option<&RunMetrics>,
    epsilon: f64,
    step_tol: f64,
    freeze_tol: f64,
) -> CheckReport {
    let series: Vec<(f64, [f64; 2], [f64; 2])> = records
        .iter()
        .filter_map(|r| match r.ctrl {
            CtrlState::Dads(a) => Some((r.t, [a.z_d, a.z_q], [r.w_d, r.w_q])),
            CtrlState::Pi(_) => None,
        })
        .collect();
    if series.len() != records.len() || series.is_empty() {
        return CheckReport::new(
            "gain_monotone_bounded",
            false,
            f64::NAN,
            -step_tol,
            f64::NAN,
            "trajectory has no adaptive gain states".into(),
        );
    }

    let mut min_dz = f64::INFINITY;
    let mut worst_t = f64::NAN;
    for pair in series.windows(2) {
        for axis in 0..2 {
            let dz = pair[1].1[axis] - pair[0].1[axis];
            if dz < min_dz {
                min_dz = dz;
                worst_t = pair[1].0;
            }
        }
    }
    if let Some(m) = metrics {
        for dz in [m.min_step_dz_d, m.min_step_dz_q] {
            if dz < min_dz {
                min_dz = dz;
                worst_t = f64::NAN;
            }
        }
    }

    let last = series.last().unwrap();
    let finite = last.1[0].is_finite() && last.1[1].is_finite();

    // Freeze drift: within each maximal run of samples whose w stays
    // inside the deadzone, the gain state must not move.
    let mut max_freeze_drift: f64 = 0.0;
    for axis in 0..2 {
        let mut run_start: Option<f64> = None;
        for (i, (_, z, w)) in series.iter().enumerate() {
            let inside = w[axis] <= epsilon;
            match (inside, run_start) {
                (true, None) => run_start = Some(z[axis]),
                (true, Some(z0)) => {
                    if i == series.len() - 1 {
                        max_freeze_drift = max_freeze_drift.max((z[axis] - z0).abs());
                    }
                }
                (false, Some(z0)) => {
                    // The run ended at the previous sample.
                    let z_prev = series[i - 1].1[axis];
                    max_freeze_drift = max_freeze_drift.max((z_prev - z0).abs());
                    run_start = None;
                }
                (false, None) => {}
            }
        }
    }

    let pass = min_dz >= -step_tol && finite && max_freeze_drift <= freeze_tol;
    CheckReport::new(
        "gain_monotone_bounded",
        pass,
        min_dz,
        -step_tol,
        worst_t,
        format!(
            "final z = ({:.6}, {:.6}), max in-deadzone drift {max_freeze_drift:.3e} (tolerance {freeze_tol:.1e})",
            last.1[0], last.1[1]
        ),
    )
}

/// First time after which every remaining record keeps the voltage
/// residual inside the deadzone band; +inf when the final record is
/// still outside.
pub fn settle_time_into_band(records: &[TrajectoryRecord], epsilon: f64, slack: f64) -> f64 {
    let threshold = residual_band_threshold(epsilon, slack);
    let mut settle = records.first().map_or(f64::INFINITY, |r| r.t);
    let mut outside_seen = false;
    for r in records {
        let res = r.voltage_residual();
        if res.d.abs().max(res.q.abs()) > threshold {
            settle = r.t;
            outside_seen = true;
        }
    }
    if outside_seen && records.last().map_or(true, |r| r.t == settle) {
        f64::INFINITY
    } else {
        settle
    }
}

fn check_filter_shape(b: f64, xi: f64) -> SimResult<f64> {
    if !(b > 0.0) || !b.is_finite() {
        return Err(SimError::Config(format!("filter natural frequency must be positive, got {b}")));
    }
    if !(xi > 1.0) || !xi.is_finite() {
        return Err(SimError::Config(format!("filter damping ratio must exceed 1, got {xi}")));
    }
    Ok((xi * xi - 1.0).sqrt())
}

/// Closed-form bounds on an overdamped second-order filter's states for
/// any input bounded by `m`, given the initial state: the filter state
/// `eta1` never exceeds the first bound, its derivative `eta2` never
/// exceeds the second.
pub fn filter_peak_bounds(b: f64, xi: f64, eta10: f64, eta20: f64, m: f64) -> SimResult<(f64, f64)> {
    let root = check_filter_shape(b, xi)?;
    if !(m >= 0.0) {
        return Err(SimError::Config(format!("input bound must be non-negative, got {m}")));
    }
    let bound1 = (xi * eta10.abs() + eta20.abs() / b) / root + m;
    let bound2 = (b * eta10.abs() + xi * eta20.abs()) / root + b * m / root;
    Ok((bound1, bound2))
}

/// Exact response of the overdamped filter `eta1'' = -2 xi b eta1' -
/// b^2 (eta1 - u)` to a constant input `u`, via the real eigenvalue
/// decomposition. Serves as the independent oracle for integration tests.
pub fn filter_exponential_oracle(
    b: f64,
    xi: f64,
    eta10: f64,
    eta20: f64,
    u: f64,
    t: f64,
) -> SimResult<(f64, f64)> {
    let root = check_filter_shape(b, xi)?;
    let gamma1 = b * (xi + root);
    let gamma2 = b * (xi - root);
    let d0 = eta10 - u;
    let denom = gamma1 - gamma2;
    let c1 = (-gamma2 * d0 - eta20) / denom;
    let c2 = (gamma1 * d0 + eta20) / denom;
    let e1 = (-gamma1 * t).exp();
    let e2 = (-gamma2 * t).exp();
    Ok((u + c1 * e1 + c2 * e2, -gamma1 * c1 * e1 - gamma2 * c2 * e2))
}

/// Euclidean projection of `v` onto the half-space `normal . v <= offset`.
/// The independent oracle for the closed-form safety filter: when the
/// constraint is violated, the minimally invasive feasible point is the
/// orthogonal projection onto the boundary plane.
pub fn qp_projection_oracle(v: Vec2, normal: Vec2, offset: f64) -> SimResult<Vec2> {
    let slack = normal.dot(v) - offset;
    if slack <= 0.0 {
        return Ok(v);
    }
    let norm_sq = normal.norm_sq();
    if norm_sq <= 1e-30 {
        return Err(SimError::Config(
            "half-space normal is degenerate while the constraint is violated".into(),
        ));
    }
    Ok(v - normal * (slack / norm_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::AdaptiveState;
    use crate::plant::PlantState;
    use crate::power_droop::power_filter_derivative;
    use crate::power_droop::FilterState;
    use crate::sim::integrator::{integrate_adaptive, StepperSettings};

    /// Minimal record with the fields the checks read; everything else
    /// neutral.
    fn rec(t: f64, v_c: Vec2, v_ref_d: f64, i_t: Vec2, h: f64, w: (f64, f64), z: (f64, f64)) -> TrajectoryRecord {
        TrajectoryRecord {
            t,
            elec: PlantState { v_c, i_t, i_g: Vec2::ZERO },
            q1: 0.0,
            q2: 0.0,
            p1: 0.0,
            p2: 0.0,
            theta: 0.0,
            ctrl: CtrlState::Dads(AdaptiveState { z_d: z.0, z_q: z.1 }),
            p: 0.0,
            q: 0.0,
            omega: 1.0,
            v_ref_d,
            w_d: w.0,
            w_q: w.1,
            eta: 0.0,
            h,
            filter_active: false,
            v_t: Vec2::ZERO,
            v_t_nominal: Vec2::ZERO,
        }
    }

    fn simple_rec(t: f64, residual_d: f64) -> TrajectoryRecord {
        rec(t, Vec2::new(1.0 + residual_d, 0.0), 1.0, Vec2::ZERO, 1.44, (0.0, 0.0), (0.0, 0.0))
    }

    #[test]
    fn band_threshold_matches_deadzone_geometry() {
        // W = eps = 1e-4 allows |e| up to sqrt(2e-4).
        let th = residual_band_threshold(1e-4, 0.0);
        assert!((th - (2e-4_f64).sqrt()).abs() < 1e-18);
        assert!((residual_band_threshold(1e-4, 0.05) - th * 1.05).abs() < 1e-18);
    }

    #[test]
    fn residual_band_passes_and_fails_as_expected() {
        let recs: Vec<_> = (0..=100)
            .map(|i| simple_rec(i as f64 * 0.01, 1e-3 * (-3.0 * i as f64 * 0.01).exp()))
            .collect();
        let ok = check_residual_band(&recs, "band", (0.5, 1.0), 1e-4, 0.05);
        assert!(ok.pass, "{}", ok.line());

        let bad = check_residual_band(&recs, "band", (0.0, 1.0), 1e-8, 0.05);
        assert!(!bad.pass);
        assert_eq!(bad.worst_t, 0.0);
        assert!((bad.measured - 1e-3).abs() < 1e-15);

        let empty = check_residual_band(&recs, "band", (2.0, 3.0), 1e-4, 0.05);
        assert!(!empty.pass);
        assert!(empty.measured.is_nan());
    }

    #[test]
    fn segment_band_takes_only_the_tails() {
        // Residual is large early in each segment and tiny at the end.
        let mut recs = Vec::new();
        for i in 0..=200 {
            let t = i as f64 * 0.01;
            let seg_t = if t <= 1.0 { t } else { t - 1.0 };
            recs.push(simple_rec(t, 0.5 * (-8.0 * seg_t).exp()));
        }
        let report = check_residual_band_segments(&recs, &[(0.0, 1.0), (1.0, 2.0)], 0.3, 1e-4, 0.05);
        assert!(report.pass, "{}", report.line());

        // A settle window longer than the decay leaves violations inside.
        let report = check_residual_band_segments(&recs, &[(0.0, 1.0), (1.0, 2.0)], 0.9, 1e-4, 0.05);
        assert!(!report.pass);
    }

    #[test]
    fn decay_envelope_accepts_decay_and_rejects_flat_excess() {
        let w0 = 0.3;
        let k = 10.0;
        let recs: Vec<_> = (0..=100)
            .map(|i| {
                let t = i as f64 * 0.01;
                rec(t, Vec2::new(1.0, 0.0), 1.0, Vec2::ZERO, 1.44, (0.9 * w0 * (-2.0 * k * t).exp(), 0.0), (0.0, 0.0))
            })
            .collect();
        let ok = check_decay_envelope(&recs, k, 0.2, 0.8, 1.0, 1.0, 1.0, 1e-6);
        assert!(ok.pass, "{}", ok.line());

        // A flat composite error above the asymptotic offset must fail.
        let offset = 1.0 * (1.0 + 0.04 + 1.0) / (10.0 * 0.64);
        let flat: Vec<_> = (0..=100)
            .map(|i| rec(i as f64 * 0.01, Vec2::new(1.0, 0.0), 1.0, Vec2::ZERO, 1.44, (offset, 0.0), (0.0, 0.0)))
            .collect();
        let bad = check_decay_envelope(&flat, k, 0.2, 0.8, 1.0, 1.0, 1.0, 1e-6);
        assert!(!bad.pass, "{}", bad.line());
        assert!(bad.worst_t > 0.5);
    }

    #[test]
    fn invariance_checks_magnitude_and_barrier_floor() {
        let c = 1e6;
        let i_max = 1.2;
        let recs: Vec<_> = (0..=50)
            .map(|i| {
                let t = i as f64 * 1e-3;
                let norm = 1.19;
                rec(
                    t,
                    Vec2::new(1.0, 0.0),
                    1.0,
                    Vec2::new(norm, 0.0),
                    i_max * i_max - norm * norm,
                    (0.0, 0.0),
                    (0.0, 0.0),
                )
            })
            .collect();
        let ok = check_current_invariance(&recs, None, i_max, c, 1e-4, 1e-6);
        assert!(ok.pass, "{}", ok.line());

        // Record-level data fine but the per-step metrics caught a spike.
        let metrics = RunMetrics {
            max_i_t_norm: 1.3,
            t_at_max_i_t: 0.017,
            h_initial: recs[0].h,
            ..RunMetrics::default()
        };
        let bad = check_current_invariance(&recs, Some(&metrics), i_max, c, 1e-4, 1e-6);
        assert!(!bad.pass);
        assert_eq!(bad.measured, 1.3);
        assert_eq!(bad.worst_t, 0.017);

        // Barrier dipping below its exponential floor fails even though
        // the magnitude stays legal: with a slow decay rate, an inflated
        // h(0) keeps the floor above every later recorded h.
        let mut dipped = recs.clone();
        dipped[0].h = 1.4;
        let bad = check_current_invariance(&dipped, None, i_max, 1.0, 1e-4, 1e-6);
        assert!(!bad.pass, "{}", bad.line());
    }

    #[test]
    fn exceedance_check_is_window_scoped() {
        let recs: Vec<_> = (0..=100)
            .map(|i| {
                let t = i as f64 * 0.01;
                let norm = if (0.4..0.6).contains(&t) { 1.5 } else { 0.8 };
                rec(t, Vec2::new(1.0, 0.0), 1.0, Vec2::new(norm, 0.0), 0.0, (0.0, 0.0), (0.0, 0.0))
            })
            .collect();
        assert!(check_current_exceedance(&recs, 1.2, (0.3, 0.7)).pass);
        assert!(!check_current_exceedance(&recs, 1.2, (0.7, 1.0)).pass);
    }

    #[test]
    fn gain_check_enforces_monotonicity_freeze_and_finiteness() {
        let eps = 1e-4;
        let make = |zs: &[(f64, f64, f64)]| -> Vec<TrajectoryRecord> {
            zs.iter()
                .map(|&(t, z, w)| rec(t, Vec2::new(1.0, 0.0), 1.0, Vec2::ZERO, 1.0, (w, 0.0), (z, 0.0)))
                .collect()
        };

        let ok = make(&[(0.0, 0.0, 1e-3), (0.1, 0.5, 1e-3), (0.2, 0.9, 5e-5), (0.3, 0.9, 5e-5)]);
        let report = check_gain_monotone_bounded(&ok, None, eps, 1e-12, 1e-9);
        assert!(report.pass, "{}", report.line());

        let dip = make(&[(0.0, 0.0, 1e-3), (0.1, 0.5, 1e-3), (0.2, 0.4999, 1e-3)]);
        assert!(!check_gain_monotone_bounded(&dip, None, eps, 1e-12, 1e-9).pass);

        // Frozen stretch drifting beyond tolerance.
        let drift = make(&[(0.0, 0.0, 5e-5), (0.1, 1e-6, 5e-5), (0.2, 2e-6, 5e-5)]);
        assert!(!check_gain_monotone_bounded(&drift, None, eps, 1e-12, 1e-9).pass);

        // Metrics can veto a record-level pass.
        let metrics = RunMetrics { min_step_dz_d: -1e-9, ..RunMetrics::default() };
        assert!(!check_gain_monotone_bounded(&ok, Some(&metrics), eps, 1e-12, 1e-9).pass);
    }

    #[test]
    fn settle_time_finds_last_band_violation() {
        let recs: Vec<_> = (0..=100)
            .map(|i| simple_rec(i as f64 * 0.01, if i <= 37 { 0.5 } else { 1e-6 }))
            .collect();
        assert_eq!(settle_time_into_band(&recs, 1e-4, 0.05), 0.37);

        let never: Vec<_> = (0..=10).map(|i| simple_rec(i as f64 * 0.01, 0.5)).collect();
        assert_eq!(settle_time_into_band(&never, 1e-4, 0.05), f64::INFINITY);

        let always: Vec<_> = (0..=10).map(|i| simple_rec(i as f64 * 0.01, 1e-6)).collect();
        assert_eq!(settle_time_into_band(&always, 1e-4, 0.05), 0.0);
    }

    #[test]
    fn filter_peak_bounds_match_frozen_values() {
        let (b1, b2) = filter_peak_bounds(2.0, 1.2, 1.0, 0.0, 0.0).unwrap();
        assert!((b1 - 1.8090680674665818).abs() < 1e-15);
        assert!((b2 - 3.0151134457776365).abs() < 1e-15);

        // A bounded input adds m to the state bound and b m / root to the
        // derivative bound.
        let (c1, c2) = filter_peak_bounds(2.0, 1.2, 1.0, 0.0, 2.0).unwrap();
        let root = (1.2_f64 * 1.2 - 1.0).sqrt();
        assert!((c1 - (b1 + 2.0)).abs() < 1e-15);
        assert!((c2 - (b2 + 2.0 * 2.0 / root)).abs() < 1e-12);

        assert!(filter_peak_bounds(2.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(filter_peak_bounds(-2.0, 1.2, 1.0, 0.0, 0.0).is_err());
        assert!(filter_peak_bounds(2.0, 1.2, 1.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn exponential_oracle_matches_initial_state_and_frozen_spot() {
        let (x1, x2) = filter_exponential_oracle(2.0, 1.2, 1.0, 0.0, 0.5, 0.0).unwrap();
        assert!((x1 - 1.0).abs() < 1e-15);
        assert!(x2.abs() < 1e-15);

        let (y1, y2) = filter_exponential_oracle(2.0, 1.2, 1.0, 0.0, 0.5, 0.7).unwrap();
        assert!((y1 - 0.8163879247652177).abs() < 1e-15, "y1 = {y1:.16e}");
        assert!((y2 - -0.3000777339019683).abs() < 1e-15, "y2 = {y2:.16e}");
    }

    #[test]
    fn exponential_oracle_satisfies_the_differential_equation() {
        let (b, xi, u) = (3.7, 1.6, -0.8);
        let dt = 1e-6;
        for t in [0.05, 0.3, 1.1] {
            let (x1, x2) = filter_exponential_oracle(b, xi, 0.4, 1.3, u, t).unwrap();
            let (p1, p2) = filter_exponential_oracle(b, xi, 0.4, 1.3, u, t + dt).unwrap();
            let (m1, m2) = filter_exponential_oracle(b, xi, 0.4, 1.3, u, t - dt).unwrap();
            let d1 = (p1 - m1) / (2.0 * dt);
            let d2 = (p2 - m2) / (2.0 * dt);
            assert!((d1 - x2).abs() < 1e-6 * (1.0 + x2.abs()), "d1 = {d1}, x2 = {x2}");
            let rhs = -2.0 * xi * b * x2 - b * b * (x1 - u);
            assert!((d2 - rhs).abs() < 1e-4 * (1.0 + rhs.abs()), "d2 = {d2}, rhs = {rhs}");
        }
    }

    #[test]
    fn integrated_filter_lands_on_the_oracle() {
        // Dual route: the production filter derivative integrated by the
        // production stepper must land on the closed form.
        let (b, xi, u) = (2.0, 1.2, 0.5);
        let settings = StepperSettings {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            max_step: 0.05,
            min_step: 1e-12,
            initial_step: None,
        };
        let (y, _) = integrate_adaptive(
            |_t, y, dy| {
                let d = power_filter_derivative(FilterState { x1: y[0], x2: y[1] }, u, f64::INFINITY, xi, b);
                dy[0] = d.x1;
                dy[1] = d.x2;
                Ok(())
            },
            0.0,
            &[1.0, 0.0],
            0.7,
            &settings,
            |_| Ok(()),
        )
        .unwrap();
        let (o1, o2) = filter_exponential_oracle(b, xi, 1.0, 0.0, u, 0.7).unwrap();
        assert!((y[0] - o1).abs() < 1e-10, "{} vs {}", y[0], o1);
        assert!((y[1] - o2).abs() < 1e-10, "{} vs {}", y[1], o2);
    }

    #[test]
    fn projection_oracle_examples() {
        // Feasible points pass through untouched.
        let v = Vec2::new(0.5, -0.5);
        assert_eq!(qp_projection_oracle(v, Vec2::new(1.0, 0.0), 1.0).unwrap(), v);

        // Axis-aligned violation projects onto the plane x = 1.
        let p = qp_projection_oracle(Vec2::new(2.0, 0.3), Vec2::new(1.0, 0.0), 1.0).unwrap();
        assert!((p.d - 1.0).abs() < 1e-15);
        assert!((p.q - 0.3).abs() < 1e-15);

        // Slanted half-space, worked by hand: lambda = 12/29, landing on
        // (22.5/29, 20/29).
        let p = qp_projection_oracle(Vec2::new(0.9, 0.4), Vec2::new(0.3, -0.7), -0.25).unwrap();
        assert!((p.d - 0.7758620689655172).abs() < 1e-15, "p.d = {:.16e}", p.d);
        assert!((p.q - 0.6896551724137931).abs() < 1e-15, "p.q = {:.16e}", p.q);

        // Degenerate normal with a violated constraint cannot be projected.
        assert!(qp_projection_oracle(Vec2::new(1.0, 0.0), Vec2::ZERO, -1.0).is_err());
    }

    #[test]
    fn projection_is_idempotent_and_feasible() {
        let cases = [
            (Vec2::new(0.9, 0.4), Vec2::new(0.3, -0.7), -0.25),
            (Vec2::new(-2.0, 5.0), Vec2::new(1.5, 2.5), 0.1),
            (Vec2::new(1e3, -1e3), Vec2::new(-0.2, 0.9), 3.0),
        ];
        for (v, n, o) in cases {
            let p = qp_projection_oracle(v, n, o).unwrap();
            let scale = 1.0 + n.norm() * p.norm() + o.abs();
            assert!(n.dot(p) - o <= 1e-12 * scale, "constraint violated: {}", n.dot(p) - o);
            let p2 = qp_projection_oracle(p, n, o).unwrap();
            assert!((p2 - p).norm() <= 1e-12 * (1.0 + p.norm()));
        }
    }
}

//! Composed verification pipeline: randomized oracle suites for the
//! filter bounds and the safety-filter projection, plus scenario-level
//! trajectory checks across the four controller/filter variants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    check_current_exceedance, check_current_invariance, check_decay_envelope,
    check_gain_monotone_bounded, check_residual_band_segments, filter_exponential_oracle,
    filter_peak_bounds, qp_projection_oracle, CheckReport,
};
use crate::frames::Vec2;
use crate::power_droop::{power_filter_derivative, FilterState};
use crate::safety::{apply_filter, barrier, eta, SafetyParams};
use crate::sim::config::ControllerKind;
use crate::sim::integrator::{integrate_adaptive, StepperSettings};
use crate::sim::record::SimOutput;
use crate::sim::{integrate, ClosedLoop, ScenarioConfig};
use crate::SimResult;

/// Default tolerance pins for the scenario checks.
pub const BAND_SLACK: f64 = 0.05;
pub const SETTLE_WINDOW: f64 = 0.5;
pub const CURRENT_TOL_REL: f64 = 1e-4;
pub const BARRIER_FLOOR_TOL: f64 = 1e-6;
pub const GAIN_STEP_TOL: f64 = 1e-12;
pub const GAIN_FREEZE_TOL: f64 = 1e-9;
pub const ENVELOPE_SLACK: f64 = 1e-6;

/// Adaptation-rate ceiling applied to the filtered adaptive variant.
///
/// While the current limiter overrides the voltage loop, the tracking
/// error stays large and the adaptive gain keeps integrating it; at the
/// default rate the gain grows until the closed loop's fastest mode
/// outruns any explicit integrator. Capping the rate for that one
/// variant keeps the run finishable without touching the invariance
/// semantics being checked (the limiter, not the gain, enforces the
/// current bound).
pub const FILTERED_GAMMA_CAP: f64 = 1e2;

/// Overall verification outcome.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    fn from_checks(checks: Vec<CheckReport>) -> Self {
        VerifyReport { pass: checks.iter().all(|c| c.pass), checks }
    }
}

/// Randomized suite for the overdamped-filter bounds: draws filter
/// shapes, initial states, and constant inputs; integrates the production
/// filter dynamics; and checks that the trajectory (a) respects the
/// closed-form bounds and (b) lands on the matrix-exponential solution.
pub fn filter_oracle_suite(seed: u64, draws: usize) -> SimResult<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_excess_draw = 0usize;
    let mut worst_dev: f64 = 0.0;
    let mut worst_dev_draw = 0usize;

    for draw in 0..draws {
        let b = rng.gen_range(1.0..=1000.0);
        let xi = 3.0 - rng.gen_range(0.0..2.0);
        let m = rng.gen_range(0.0..=2.0);
        let eta10 = rng.gen_range(-2.0..=2.0);
        let eta20 = rng.gen_range(-2.0..=2.0);
        let u = rng.gen_range(-m..=m);

        let (bound1, bound2) = filter_peak_bounds(b, xi, eta10, eta20, m)?;
        let root = (xi * xi - 1.0).sqrt();
        let gamma2 = b * (xi - root);
        let t_end = (5.0 / gamma2).clamp(0.05, 20.0);
        let settings = StepperSettings {
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            max_step: t_end / 20.0,
            min_step: 1e-15,
            initial_step: None,
        };

        let mut excess = f64::NEG_INFINITY;
        let mut dev: f64 = 0.0;
        integrate_adaptive(
            |_t, y, dy| {
                let d = power_filter_derivative(FilterState { x1: y[0], x2: y[1] }, u, f64::INFINITY, xi, b);
                dy[0] = d.x1;
                dy[1] = d.x2;
                Ok(())
            },
            0.0,
            &[eta10, eta20],
            t_end,
            &settings,
            |step| {
                excess = excess
                    .max(step.y1[0].abs() - bound1)
                    .max(step.y1[1].abs() - bound2);
                let (o1, o2) = filter_exponential_oracle(b, xi, eta10, eta20, u, step.t1)?;
                dev = dev.max((step.y1[0] - o1).abs()).max((step.y1[1] - o2).abs());
                Ok(())
            },
        )?;

        if excess > worst_excess {
            worst_excess = excess;
            worst_excess_draw = draw;
        }
        if dev > worst_dev {
            worst_dev = dev;
            worst_dev_draw = draw;
        }
    }

    Ok(vec![
        CheckReport {
            name: "filter_bounds_hold".into(),
            pass: worst_excess <= 1e-6,
            measured: worst_excess,
            threshold: 1e-6,
            worst_t: f64::NAN,
            details: format!("{draws} draws; worst bound excess on draw {worst_excess_draw}"),
        },
        CheckReport {
            name: "filter_matches_exponential_oracle".into(),
            pass: worst_dev <= 1e-6,
            measured: worst_dev,
            threshold: 1e-6,
            worst_t: f64::NAN,
            details: format!("{draws} draws; worst oracle deviation on draw {worst_dev_draw}"),
        },
    ])
}

/// Randomized suite for the safety filter: at random states the
/// closed-form filter output must coincide with the Euclidean projection
/// onto the admissible half-space, and whenever the filter is active the
/// recomputed margin rate at its output must vanish.
pub fn qp_equivalence_suite(seed: u64, draws: usize) -> SimResult<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phys = crate::plant::PhysicalParams::default().known();
    let mut worst_dev: f64 = 0.0;
    let mut worst_margin: f64 = 0.0;
    let mut active_count = 0usize;

    for _ in 0..draws {
        let i_t = loop {
            let cand = Vec2::new(rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0));
            if cand.norm() >= 1e-3 {
                break cand;
            }
        };
        let v_c = Vec2::new(rng.gen_range(-2.0..=2.0), rng.gen_range(-2.0..=2.0));
        let v_tn = Vec2::new(rng.gen_range(-3.0..=3.0), rng.gen_range(-3.0..=3.0));
        let omega = rng.gen_range(0.9..=1.1);
        let safety = SafetyParams {
            enabled: true,
            i_max: rng.gen_range(0.3..=1.5),
            c: (rng.gen_range(1e2_f64.ln()..=1e7_f64.ln())).exp(),
        };

        let decision = apply_filter(i_t, v_c, v_tn, omega, &phys, &safety);
        if decision.active {
            active_count += 1;
        }

        // Independent restatement of the admissible set as a half-space:
        // the constraint rate stays non-negative iff
        // gain * (i_t . v_t) <= drift + c h.
        let gain = 2.0 * phys.omega_b / phys.l_f;
        let a_diag = -phys.r_f * phys.omega_b / phys.l_f;
        let s = phys.omega_b * omega;
        let a_i = Vec2::new(a_diag * i_t.d + s * i_t.q, -s * i_t.d + a_diag * i_t.q);
        let drift = -2.0 * i_t.dot(a_i) + gain * i_t.dot(v_c);
        let h = barrier(i_t, safety.i_max);
        let normal = i_t * gain;
        let offset = drift + safety.c * h;

        let projected = qp_projection_oracle(v_tn, normal, offset)?;
        let dev = (decision.v_t - projected).norm();
        worst_dev = worst_dev.max(dev);

        if decision.active {
            let margin = eta(i_t, v_c, decision.v_t, omega, &phys, &safety);
            let scale = 1.0 + (safety.c * h).abs() + gain.abs() * i_t.norm() * decision.v_t.norm();
            worst_margin = worst_margin.max(margin.abs() / scale);
        }
    }

    Ok(vec![
        CheckReport {
            name: "filter_equals_halfspace_projection".into(),
            pass: worst_dev <= 1e-8,
            measured: worst_dev,
            threshold: 1e-8,
            worst_t: f64::NAN,
            details: format!("{draws} draws, {active_count} with the constraint active"),
        },
        CheckReport {
            name: "active_filter_zeroes_the_margin_rate".into(),
            pass: worst_margin <= 1e-9,
            measured: worst_margin,
            threshold: 1e-9,
            worst_t: f64::NAN,
            details: format!("relative margin rate across {active_count} active draws"),
        },
    ])
}

/// The four controller/filter combinations derived from one base
/// scenario.
pub fn scenario_variants(base: &ScenarioConfig) -> Vec<(String, ScenarioConfig)> {
    let mut out = Vec::with_capacity(4);
    for (kind, kind_name) in [(ControllerKind::Dads, "dads"), (ControllerKind::Pi, "pi")] {
        for (enabled, filter_name) in [(false, "nofilter"), (true, "filter")] {
            let mut cfg = base.clone();
            cfg.controller.kind = kind;
            cfg.safety.enabled = enabled;
            if kind == ControllerKind::Dads && enabled {
                let dads = &mut cfg.controller.dads;
                dads.gamma_d = dads.gamma_d.min(FILTERED_GAMMA_CAP);
                dads.gamma_q = dads.gamma_q.min(FILTERED_GAMMA_CAP);
            }
            out.push((format!("{kind_name}_{filter_name}"), cfg));
        }
    }
    out
}

/// The checks appropriate for one finished variant run.
///
/// - Unfiltered runs of the adaptive controller carry the regulation
///   claims: residual band per constant-grid segment, the decay
///   envelope, and gain monotonicity.
/// - Unfiltered runs with a grid disturbance must demonstrate that the
///   current limit is actually violated (the positive control).
/// - Filtered runs carry the invariance claims instead: regulation is
///   deliberately sacrificed while the filter holds the current, so the
///   residual band is not asserted there.
pub fn checks_for_variant(cfg: &ScenarioConfig, out: &SimOutput) -> Vec<CheckReport> {
    let model = ClosedLoop::new(cfg);
    let segments = model.profile.segments(cfg.sim.t_end);
    let mut checks = Vec::new();

    checks.push(CheckReport {
        name: "run_completed".into(),
        pass: out.final_time() == cfg.sim.t_end && out.final_state.elec.v_c.is_finite(),
        measured: out.final_time(),
        threshold: cfg.sim.t_end,
        worst_t: f64::NAN,
        details: format!(
            "{} records, {} accepted steps, {} rejected",
            out.records.len(),
            out.stats.accepted,
            out.stats.rejected
        ),
    });

    let is_dads = cfg.controller.kind == ControllerKind::Dads;
    if is_dads {
        checks.push(check_gain_monotone_bounded(
            &out.records,
            Some(&out.metrics),
            cfg.controller.dads.epsilon,
            GAIN_STEP_TOL,
            GAIN_FREEZE_TOL,
        ));
    }

    if cfg.safety.enabled {
        checks.push(check_current_invariance(
            &out.records,
            Some(&out.metrics),
            cfg.safety.i_max,
            cfg.safety.c,
            CURRENT_TOL_REL,
            BARRIER_FLOOR_TOL,
        ));
    } else {
        if is_dads {
            checks.push(check_residual_band_segments(
                &out.records,
                &segments,
                SETTLE_WINDOW,
                cfg.controller.dads.epsilon,
                BAND_SLACK,
            ));
            let k = cfg.controller.dads.k_vc.min(cfg.controller.dads.k_cc);
            checks.push(check_decay_envelope(
                &out.records,
                k,
                cfg.physical.r,
                cfg.physical.l,
                cfg.controller.dads.mu_d,
                cfg.controller.dads.mu_q,
                model.profile.max_norm(),
                ENVELOPE_SLACK,
            ));
        }
        if model.profile.has_disturbance() {
            let first_switch = model.profile.interior_switch_times(cfg.sim.t_end)[0];
            checks.push(check_current_exceedance(
                &out.records,
                cfg.safety.i_max,
                (first_switch, cfg.sim.t_end),
            ));
        }
    }
    checks
}

/// Runs the full verification: all four scenario variants with their
/// checks, then the randomized oracle suites.
pub fn run_verification(base: &ScenarioConfig, seed: u64) -> SimResult<VerifyReport> {
    let mut checks = Vec::new();
    for (name, cfg) in scenario_variants(base) {
        cfg.validate()?;
        let out = integrate(&cfg)?;
        for mut check in checks_for_variant(&cfg, &out) {
            check.name = format!("{name}/{}", check.name);
            checks.push(check);
        }
    }
    for mut check in filter_oracle_suite(seed, 100)? {
        check.name = format!("oracle/{}", check.name);
        checks.push(check);
    }
    for mut check in qp_equivalence_suite(seed.wrapping_add(1), 1000)? {
        check.name = format!("oracle/{}", check.name);
        checks.push(check);
    }
    Ok(VerifyReport::from_checks(checks))
}

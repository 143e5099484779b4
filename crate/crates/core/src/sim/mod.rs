//! Simulation engine: configuration, the closed-loop model, adaptive
//! integration, and trajectory recording, composed by [`integrate`].
//!
//! Runs are split into integration legs at the grid-voltage switch times,
//! so each leg sees a smooth right-hand side; the error controller never
//! has to resolve a discontinuity by step-size crawling.

pub mod config;
pub mod grid;
pub mod integrator;
pub mod record;
pub mod rhs;

pub use config::{set_param, ControllerKind, ScenarioConfig};
pub use grid::GridProfile;
pub use integrator::{integrate_adaptive, StepRecord, StepStats, StepperSettings};
pub use record::{csv_document, csv_header, csv_row, RunMetrics, SimOutput, TrajectoryRecord};
pub use rhs::{AugmentedState, ClosedLoop, CtrlState, Staged};

use crate::safety::{barrier, SafetyEventLog};
use crate::SimResult;

/// Accumulates records, extreme-value metrics, and safety events while
/// the integrator advances.
struct Recorder<'a> {
    model: &'a ClosedLoop,
    records: Vec<TrajectoryRecord>,
    metrics: RunMetrics,
    events: SafetyEventLog,
    /// Index of the next uniform output-grid point to emit.
    next_grid: u64,
    grid_dt: f64,
    record_every: u32,
    accepted: u64,
    scratch: Vec<f64>,
}

impl<'a> Recorder<'a> {
    fn new(model: &'a ClosedLoop, x0: &AugmentedState) -> SimResult<Self> {
        let cfg = &model.cfg;
        let expected = (cfg.sim.t_end / cfg.sim.output_grid).ceil() as usize + 2;
        let mut rec = Recorder {
            model,
            records: Vec::with_capacity(expected.min(1 << 22)),
            metrics: RunMetrics {
                h_initial: barrier(x0.elec.i_t, cfg.safety.i_max),
                ..RunMetrics::default()
            },
            events: SafetyEventLog::default(),
            next_grid: 0,
            grid_dt: cfg.sim.output_grid,
            record_every: cfg.sim.record_every,
            accepted: 0,
            scratch: vec![0.0; x0.dim()],
        };
        let staged = model.stage(0.0, x0)?;
        rec.records.push(TrajectoryRecord::new(0.0, x0, &staged));
        rec.next_grid = 1;
        rec.update_pointwise(0.0, x0, &staged)?;
        Ok(rec)
    }

    fn update_pointwise(&mut self, t: f64, x: &AugmentedState, staged: &Staged) -> SimResult<()> {
        let norm = x.elec.i_t.norm();
        if norm > self.metrics.max_i_t_norm {
            self.metrics.max_i_t_norm = norm;
            self.metrics.t_at_max_i_t = t;
        }
        if self.model.cfg.safety.enabled {
            let floor = (-self.model.cfg.safety.c * t).exp() * self.metrics.h_initial;
            let margin = staged.decision.h - floor;
            if margin < self.metrics.min_h_floor_margin {
                self.metrics.min_h_floor_margin = margin;
                self.metrics.t_at_min_h_floor_margin = t;
            }
            self.events.record_eta_value(t, staged.decision.eta)?;
        }
        Ok(())
    }

    fn observe(&mut self, step: &StepRecord<'_>) -> SimResult<()> {
        self.accepted += 1;
        let kind = self.model.kind();

        // Uniform-grid records inside (t0, t1]. The Hermite interpolant is
        // exact at the endpoints, so a grid point coinciding with t1 uses
        // the accepted state bit-for-bit.
        loop {
            let g = self.next_grid as f64 * self.grid_dt;
            if g > step.t1 {
                break;
            }
            if g > step.t0 {
                step.interpolate(g, &mut self.scratch);
                let x = AugmentedState::unpack(&self.scratch, kind);
                let staged = self.model.stage(g, &x)?;
                self.records.push(TrajectoryRecord::new(g, &x, &staged));
            }
            self.next_grid += 1;
        }

        let x1 = AugmentedState::unpack(step.y1, kind);
        let staged1 = self.model.stage(step.t1, &x1)?;

        if self.record_every > 0
            && self.accepted % u64::from(self.record_every) == 0
            && self.records.last().map_or(true, |r| r.t < step.t1)
        {
            self.records.push(TrajectoryRecord::new(step.t1, &x1, &staged1));
        }

        if let CtrlState::Dads(_) = x1.ctrl {
            let dz_d = step.y1[11] - step.y0[11];
            let dz_q = step.y1[12] - step.y0[12];
            self.metrics.min_step_dz_d = self.metrics.min_step_dz_d.min(dz_d);
            self.metrics.min_step_dz_q = self.metrics.min_step_dz_q.min(dz_q);
        }

        self.update_pointwise(step.t1, &x1, &staged1)
    }

    fn finish(&mut self, t_end: f64, y_end: &[f64]) -> SimResult<()> {
        if self.records.last().map_or(true, |r| r.t < t_end) {
            let x = AugmentedState::unpack(y_end, self.model.kind());
            let staged = self.model.stage(t_end, &x)?;
            self.records.push(TrajectoryRecord::new(t_end, &x, &staged));
        }
        Ok(())
    }
}

/// Runs one scenario end to end: validates the configuration, integrates
/// leg by leg between grid switches, and returns the recorded trajectory
/// with events, metrics, and step statistics.
pub fn integrate(cfg: &ScenarioConfig) -> SimResult<SimOutput> {
    cfg.validate()?;
    let model = ClosedLoop::new(cfg);
    let x0 = model.initial_state();
    let settings = StepperSettings::from_solver(&cfg.sim);

    let mut recorder = Recorder::new(&model, &x0)?;
    let mut y = x0.to_vec();
    let mut stats = StepStats::default();

    for (seg_start, seg_end) in model.profile.segments(cfg.sim.t_end) {
        let v_g = model.profile.voltage_global(seg_start);
        let (y_end, leg_stats) = integrate_adaptive(
            |t, yy, dy| model.rhs_with_voltage(t, yy, dy, v_g),
            seg_start,
            &y,
            seg_end,
            &settings,
            |step| recorder.observe(step),
        )?;
        y = y_end;
        stats.absorb(&leg_stats);
    }

    recorder.finish(cfg.sim.t_end, &y)?;
    let final_state = AugmentedState::unpack(&y, model.kind());
    Ok(SimOutput {
        records: recorder.records,
        events: recorder.events,
        metrics: recorder.metrics,
        stats,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::Vec2;
    use crate::sim::config::GridStep;

    fn smoke_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.sim.t_end = 0.02;
        cfg.sim.output_grid = 5e-3;
        cfg.grid.steps = vec![GridStep { t: 0.0, v_d: 1.0, v_q: 0.0 }];
        cfg
    }

    #[test]
    fn smoke_run_produces_grid_records() {
        let out = integrate(&smoke_cfg()).unwrap();
        let times: Vec<f64> = out.records.iter().map(|r| r.t).collect();
        assert_eq!(times.len(), 5);
        assert_eq!(times[0], 0.0);
        assert_eq!(*times.last().unwrap(), 0.02);
        for w in times.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(out.stats.accepted > 0);
        assert!(out.stats.max_accepted_step <= 1e-4);
        assert!(out.metrics.max_i_t_norm > 0.0);
        assert!(out.final_state.elec.v_c.d.is_finite());
        // Safety filter disabled: no episodes, margins untouched.
        assert_eq!(out.events.n_eta(), 0);
        assert!(out.metrics.min_h_floor_margin.is_infinite());
    }

    #[test]
    fn per_step_recording_interleaves_with_the_grid() {
        let mut cfg = smoke_cfg();
        cfg.sim.record_every = 1;
        let out = integrate(&cfg).unwrap();
        assert!(out.records.len() as u64 >= out.stats.accepted);
        for w in out.records.windows(2) {
            assert!(w[1].t > w[0].t, "{} then {}", w[0].t, w[1].t);
        }
        // Adaptive-gain step increments were tracked.
        assert!(out.metrics.min_step_dz_d.is_finite());
        assert!(out.metrics.min_step_dz_d >= 0.0);
    }

    #[test]
    fn runs_are_reproducible_bitwise() {
        let a = integrate(&smoke_cfg()).unwrap();
        let b = integrate(&smoke_cfg()).unwrap();
        assert_eq!(a.stats.accepted, b.stats.accepted);
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.t, rb.t);
            assert_eq!(ra.elec.v_c, rb.elec.v_c);
            assert_eq!(ra.eta, rb.eta);
        }
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn grid_switches_split_the_run_into_legs() {
        let mut cfg = smoke_cfg();
        cfg.grid.steps = vec![
            GridStep { t: 0.0, v_d: 1.0, v_q: 0.0 },
            GridStep { t: 0.01, v_d: 0.5, v_q: 0.0 },
        ];
        let out = integrate(&cfg).unwrap();
        // The switch instant is on the output grid; the record there must
        // exist and be staged with the post-switch voltage.
        let at_switch = out.records.iter().find(|r| r.t == 0.01).unwrap();
        assert!(at_switch.eta.is_finite());
        let times: Vec<f64> = out.records.iter().map(|r| r.t).collect();
        assert_eq!(times, vec![0.0, 5e-3, 0.01, 0.015, 0.02]);
    }

    #[test]
    fn pi_controller_smoke_run() {
        let mut cfg = smoke_cfg();
        cfg.controller.kind = ControllerKind::Pi;
        let out = integrate(&cfg).unwrap();
        assert_eq!(out.records.len(), 5);
        match out.final_state.ctrl {
            CtrlState::Pi(p) => assert!(p.gamma_d.is_finite()),
            CtrlState::Dads(_) => panic!("expected PI controller state"),
        }
        // PI runs have no adaptive gains to track.
        assert!(out.metrics.min_step_dz_d.is_infinite());
    }

    #[test]
    fn invalid_config_is_rejected_before_integrating() {
        let mut cfg = smoke_cfg();
        cfg.sim.t_end = -1.0;
        assert!(matches!(integrate(&cfg), Err(crate::SimError::Config(_))));
    }

    #[test]
    fn enabled_filter_tracks_barrier_margins() {
        let mut cfg = smoke_cfg();
        cfg.safety.enabled = true;
        cfg.droop.q_bar = 1.5;
        let out = integrate(&cfg).unwrap();
        assert!(out.metrics.min_h_floor_margin.is_finite());
        let i0 = Vec2::new(cfg.initial.i_t[0], cfg.initial.i_t[1]);
        assert_eq!(out.metrics.h_initial, barrier(i0, cfg.safety.i_max));
    }
}

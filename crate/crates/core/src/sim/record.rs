//! Trajectory records, per-run extreme-value metrics, and CSV output.

use serde::Serialize;

use crate::frames::Vec2;
use crate::plant::PlantState;
use crate::safety::SafetyEventLog;
use crate::sim::config::ControllerKind;
use crate::sim::integrator::StepStats;
use crate::sim::rhs::{AugmentedState, CtrlState, Staged};

/// One sampled point of a run: the augmented state plus every derived
/// signal staged at that instant.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub elec: PlantState,
    pub q1: f64,
    pub q2: f64,
    pub p1: f64,
    pub p2: f64,
    pub theta: f64,
    pub ctrl: CtrlState,
    pub p: f64,
    pub q: f64,
    pub omega: f64,
    pub v_ref_d: f64,
    /// Composite tracking errors, one per axis.
    pub w_d: f64,
    pub w_q: f64,
    /// Safety margin rate signal (evaluated even when the filter is off).
    pub eta: f64,
    /// Barrier value `i_max^2 - |i_t|^2`.
    pub h: f64,
    pub filter_active: bool,
    /// Terminal voltage actually applied.
    pub v_t: Vec2,
    /// Terminal voltage requested by the controller.
    pub v_t_nominal: Vec2,
}

impl TrajectoryRecord {
    pub fn new(t: f64, x: &AugmentedState, staged: &Staged) -> Self {
        TrajectoryRecord {
            t,
            elec: x.elec,
            q1: x.q1,
            q2: x.q2,
            p1: x.p1,
            p2: x.p2,
            theta: x.theta,
            ctrl: x.ctrl,
            p: staged.p,
            q: staged.q,
            omega: staged.omega,
            v_ref_d: staged.v_ref_d,
            w_d: staged.control.w_d,
            w_q: staged.control.w_q,
            eta: staged.decision.eta,
            h: staged.decision.h,
            filter_active: staged.decision.active,
            v_t: staged.decision.v_t,
            v_t_nominal: staged.control.v_t_nominal,
        }
    }

    /// Residual of the voltage-tracking objective: `(v_c_d - v_ref_d,
    /// v_c_q)`, the quantity the residual-band checks bound.
    pub fn voltage_residual(&self) -> Vec2 {
        Vec2::new(self.elec.v_c.d - self.v_ref_d, self.elec.v_c.q)
    }
}

/// Extreme values tracked at every accepted integrator step, independent
/// of how sparsely the trajectory is recorded.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunMetrics {
    /// Largest terminal-current magnitude and when it occurred.
    pub max_i_t_norm: f64,
    pub t_at_max_i_t: f64,
    /// Barrier value at the start of the run.
    pub h_initial: f64,
    /// Smallest value of `h(t) - exp(-c t) h(0)` (only meaningful when the
    /// safety filter is enabled; +inf otherwise) and when it occurred.
    pub min_h_floor_margin: f64,
    pub t_at_min_h_floor_margin: f64,
    /// Smallest per-step increment of each adaptive gain state (negative
    /// only if the state ever decreased; +inf before any step and for the
    /// PI controller).
    pub min_step_dz_d: f64,
    pub min_step_dz_q: f64,
}

impl Default for RunMetrics {
    fn default() -> Self {
        RunMetrics {
            max_i_t_norm: 0.0,
            t_at_max_i_t: 0.0,
            h_initial: f64::NAN,
            min_h_floor_margin: f64::INFINITY,
            t_at_min_h_floor_margin: 0.0,
            min_step_dz_d: f64::INFINITY,
            min_step_dz_q: f64::INFINITY,
        }
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub records: Vec<TrajectoryRecord>,
    pub events: SafetyEventLog,
    pub metrics: RunMetrics,
    pub stats: StepStats,
    pub final_state: AugmentedState,
}

impl SimOutput {
    pub fn final_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV header matching [`csv_row`]. Controller-state columns depend on
/// which controller produced the run.
pub fn csv_header(kind: ControllerKind) -> String {
    let ctrl_cols = match kind {
        ControllerKind::Dads => "z_d,z_q",
        ControllerKind::Pi => "gamma_d,gamma_q,beta_d,beta_q",
    };
    format!(
        "t,v_c_d,v_c_q,i_t_d,i_t_q,i_g_d,i_g_q,q1,q2,p1,p2,theta,{ctrl_cols},\
         p,q,omega,v_ref_d,w_d,w_q,eta,h,filter_active,v_t_d,v_t_q,v_t_n_d,v_t_n_q"
    )
}

/// One CSV line for a record, floats rendered with 17 significant digits
/// so that round-tripping them recovers the exact binary values.
pub fn csv_row(rec: &TrajectoryRecord) -> String {
    let mut cols: Vec<String> = vec![
        fmt_float(rec.t),
        fmt_float(rec.elec.v_c.d),
        fmt_float(rec.elec.v_c.q),
        fmt_float(rec.elec.i_t.d),
        fmt_float(rec.elec.i_t.q),
        fmt_float(rec.elec.i_g.d),
        fmt_float(rec.elec.i_g.q),
        fmt_float(rec.q1),
        fmt_float(rec.q2),
        fmt_float(rec.p1),
        fmt_float(rec.p2),
        fmt_float(rec.theta),
    ];
    match rec.ctrl {
        CtrlState::Dads(a) => {
            cols.push(fmt_float(a.z_d));
            cols.push(fmt_float(a.z_q));
        }
        CtrlState::Pi(p) => {
            cols.push(fmt_float(p.gamma_d));
            cols.push(fmt_float(p.gamma_q));
            cols.push(fmt_float(p.beta_d));
            cols.push(fmt_float(p.beta_q));
        }
    }
    cols.extend([
        fmt_float(rec.p),
        fmt_float(rec.q),
        fmt_float(rec.omega),
        fmt_float(rec.v_ref_d),
        fmt_float(rec.w_d),
        fmt_float(rec.w_q),
        fmt_float(rec.eta),
        fmt_float(rec.h),
        (rec.filter_active as u8).to_string(),
        fmt_float(rec.v_t.d),
        fmt_float(rec.v_t.q),
        fmt_float(rec.v_t_nominal.d),
        fmt_float(rec.v_t_nominal.q),
    ]);
    cols.join(",")
}

/// Renders a full trajectory as a CSV document.
pub fn csv_document(kind: ControllerKind, records: &[TrajectoryRecord]) -> String {
    let mut out = String::with_capacity(64 * 26 * (records.len() + 1));
    out.push_str(&csv_header(kind));
    out.push('\n');
    for rec in records {
        out.push_str(&csv_row(rec));
        out.push('\n');
    }
    out
}

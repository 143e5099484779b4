//! Scenario configuration: a TOML-backed description of one closed-loop
//! run. Every field has a documented default, unknown keys are rejected,
//! and [`ScenarioConfig::validate`] enforces the domain constraints before
//! a run starts.

use serde::{Deserialize, Serialize};

use crate::controllers::{DadsParams, PiParams, EXP_GUARD};
use crate::plant::PhysicalParams;
use crate::power_droop::DroopParams;
use crate::safety::SafetyParams;
use crate::{SimError, SimResult};

/// Which controller closes the voltage loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Dads,
    Pi,
}

/// Controller selection plus the parameter blocks for both controllers
/// (only the selected one is read during a run).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub dads: DadsParams,
    pub pi: PiParams,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            kind: ControllerKind::Dads,
            dads: DadsParams::default(),
            pi: PiParams::default(),
        }
    }
}

/// One piecewise-constant grid-voltage step in the global DQ frame,
/// effective from time `t` onward.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridStep {
    pub t: f64,
    pub v_d: f64,
    pub v_q: f64,
}

/// Grid-voltage profile. The default is a bolted fault: nominal voltage,
/// zero during `t in [2, 4)`, then restored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub steps: Vec<GridStep>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            steps: vec![
                GridStep { t: 0.0, v_d: 1.0, v_q: 0.0 },
                GridStep { t: 2.0, v_d: 0.0, v_q: 0.0 },
                GridStep { t: 4.0, v_d: 1.0, v_q: 0.0 },
            ],
        }
    }
}

/// Integrator and output settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Simulation horizon (s).
    pub t_end: f64,
    /// Relative tolerance of the per-step error test.
    pub rel_tol: f64,
    /// Absolute tolerance of the per-step error test.
    pub abs_tol: f64,
    /// Hard cap on the step size (s).
    pub max_step: f64,
    /// Floor on the step size (s); the run aborts if the error control
    /// demands less.
    pub min_step: f64,
    /// Spacing of the uniform output grid (s).
    pub output_grid: f64,
    /// Additionally record every Nth accepted step (0 = grid-only). Dense
    /// per-step recording of a stiff full-horizon run can produce millions
    /// of records; the default keeps memory bounded by the output grid.
    pub record_every: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            t_end: 6.0,
            rel_tol: 1e-7,
            abs_tol: 1e-9,
            max_step: 1e-4,
            min_step: 1e-9,
            output_grid: 1e-3,
            record_every: 0,
        }
    }
}

/// Initial conditions. `power_filters` is `[q1, q2, p1, p2]`; when absent,
/// the filters start at their equilibrium for the initial electrical
/// state: `x1` equal to the saturated instantaneous power, `x2 = 0`.
///
/// The defaults place the electrical, measurement-filter, and angle
/// states at the operating point the adaptive closed loop settles to for
/// the default grid profile and droop settings (obtained by relaxing the
/// loop on a constant grid for 30 s), while the controller states start
/// fresh. Runs therefore begin on station and the disturbances in the
/// grid profile are the only transients. Set the electrical states to
/// zero (and `v_c` to `[1, 0]`) for a cold start.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub v_c: [f64; 2],
    pub i_t: [f64; 2],
    pub i_g: [f64; 2],
    pub theta: f64,
    /// Adaptive gain states `[z_d, z_q]` (adaptive controller only).
    pub z: [f64; 2],
    /// PI integrator states `[gamma_d, gamma_q, beta_d, beta_q]`.
    pub pi_integrators: [f64; 4],
    pub power_filters: Option<[f64; 4]>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig {
            v_c: [9.85889843632427709e-1, -1.41416875634092377e-2],
            i_t: [1.01565945302167404e0, 9.39307521381097105e-2],
            i_g: [1.01141694675261395e0, -2.01836204606395564e-1],
            theta: 8.99326381628466121e-1,
            z: [0.0, 0.0],
            pi_integrators: [0.0; 4],
            power_filters: Some([1.84685121742848180e-1, 0.0, 1.0, 0.0]),
        }
    }
}

/// Complete description of one run.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub physical: PhysicalParams,
    pub droop: DroopParams,
    pub controller: ControllerConfig,
    pub safety: SafetyParams,
    pub grid: GridConfig,
    pub sim: SolverConfig,
    pub initial: InitialConfig,
}

impl ScenarioConfig {
    /// Parses a TOML document. Unknown keys anywhere are an error.
    pub fn from_toml_str(text: &str) -> SimResult<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Serializes back to TOML (the "scenario echo" written next to run
    /// outputs).
    pub fn to_toml_string(&self) -> SimResult<String> {
        toml::to_string_pretty(self).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn validate(&self) -> SimResult<()> {
        fn positive(name: &str, v: f64) -> SimResult<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Config(format!("{name} must be positive and finite, got {v}")))
            }
        }
        fn non_negative(name: &str, v: f64) -> SimResult<()> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Config(format!("{name} must be non-negative and finite, got {v}")))
            }
        }
        fn finite(name: &str, v: f64) -> SimResult<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Config(format!("{name} must be finite, got {v}")))
            }
        }

        let p = &self.physical;
        positive("physical.omega_b", p.omega_b)?;
        positive("physical.c_f", p.c_f)?;
        positive("physical.l_f", p.l_f)?;
        positive("physical.l", p.l)?;
        non_negative("physical.r_f", p.r_f)?;
        non_negative("physical.r", p.r)?;

        let d = &self.droop;
        finite("droop.v0", d.v0)?;
        finite("droop.omega0", d.omega0)?;
        finite("droop.p0", d.p0)?;
        finite("droop.q0", d.q0)?;
        non_negative("droop.k_p", d.k_p)?;
        non_negative("droop.k_q", d.k_q)?;
        for (name, xi) in [("droop.xi_p", d.xi_p), ("droop.xi_q", d.xi_q)] {
            if !(xi > 1.0) || !xi.is_finite() {
                return Err(SimError::Config(format!("{name} must exceed 1, got {xi}")));
            }
        }
        positive("droop.omega_pc", d.omega_pc)?;
        positive("droop.omega_qc", d.omega_qc)?;
        for (name, bar) in [("droop.p_bar", d.p_bar), ("droop.q_bar", d.q_bar)] {
            if !(bar > 0.0) {
                return Err(SimError::Config(format!("{name} must be positive (inf allowed), got {bar}")));
            }
        }
        if !self.safety.enabled && !d.q_bar.is_finite() {
            return Err(SimError::Config(
                "droop.q_bar must be finite when the safety filter is disabled".into(),
            ));
        }

        let da = &self.controller.dads;
        positive("controller.dads.k_vc", da.k_vc)?;
        positive("controller.dads.k_cc", da.k_cc)?;
        positive("controller.dads.mu_d", da.mu_d)?;
        positive("controller.dads.mu_q", da.mu_q)?;
        non_negative("controller.dads.gamma_d", da.gamma_d)?;
        non_negative("controller.dads.gamma_q", da.gamma_q)?;
        positive("controller.dads.epsilon", da.epsilon)?;

        let pi = &self.controller.pi;
        positive("controller.pi.kp_cc", pi.kp_cc)?;
        positive("controller.pi.kp_vc", pi.kp_vc)?;
        non_negative("controller.pi.ki_cc", pi.ki_cc)?;
        non_negative("controller.pi.ki_vc", pi.ki_vc)?;
        non_negative("controller.pi.kf_cc", pi.kf_cc)?;
        non_negative("controller.pi.kf_vc", pi.kf_vc)?;

        positive("safety.i_max", self.safety.i_max)?;
        positive("safety.c", self.safety.c)?;

        let s = &self.sim;
        positive("sim.t_end", s.t_end)?;
        positive("sim.rel_tol", s.rel_tol)?;
        positive("sim.abs_tol", s.abs_tol)?;
        positive("sim.max_step", s.max_step)?;
        positive("sim.min_step", s.min_step)?;
        if s.min_step > s.max_step {
            return Err(SimError::Config(format!(
                "sim.min_step ({}) must not exceed sim.max_step ({})",
                s.min_step, s.max_step
            )));
        }
        positive("sim.output_grid", s.output_grid)?;

        let steps = &self.grid.steps;
        if steps.is_empty() {
            return Err(SimError::Config("grid.steps must not be empty".into()));
        }
        if steps[0].t != 0.0 {
            return Err(SimError::Config(format!(
                "grid.steps must start at t = 0, got {}",
                steps[0].t
            )));
        }
        for w in steps.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(SimError::Config(format!(
                    "grid.steps times must be strictly increasing ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        for step in steps {
            finite("grid.steps.t", step.t)?;
            finite("grid.steps.v_d", step.v_d)?;
            finite("grid.steps.v_q", step.v_q)?;
            if step.t > s.t_end {
                return Err(SimError::Config(format!(
                    "grid step at t = {} lies beyond sim.t_end = {}",
                    step.t, s.t_end
                )));
            }
        }

        let init = &self.initial;
        for (name, v) in [
            ("initial.v_c", &init.v_c[..]),
            ("initial.i_t", &init.i_t[..]),
            ("initial.i_g", &init.i_g[..]),
            ("initial.z", &init.z[..]),
            ("initial.pi_integrators", &init.pi_integrators[..]),
        ] {
            for &x in v {
                finite(name, x)?;
            }
        }
        finite("initial.theta", init.theta)?;
        if let Some(f) = &init.power_filters {
            for &x in f {
                finite("initial.power_filters", x)?;
            }
        }
        for &z in &init.z {
            if z.abs() > EXP_GUARD {
                return Err(SimError::Config(format!(
                    "initial.z magnitude must not exceed the exp guard ({EXP_GUARD}), got {z}"
                )));
            }
        }
        Ok(())
    }
}

/// Sets one recognized scalar parameter by dotted key (used by parameter
/// sweeps). Unrecognized keys are a config error listing the vocabulary.
pub fn set_param(cfg: &mut ScenarioConfig, key: &str, value: f64) -> SimResult<()> {
    match key {
        "controller.dads.epsilon" => cfg.controller.dads.epsilon = value,
        "controller.dads.gamma" => {
            cfg.controller.dads.gamma_d = value;
            cfg.controller.dads.gamma_q = value;
        }
        "controller.dads.gamma_d" => cfg.controller.dads.gamma_d = value,
        "controller.dads.gamma_q" => cfg.controller.dads.gamma_q = value,
        "controller.dads.k_vc" => cfg.controller.dads.k_vc = value,
        "controller.dads.k_cc" => cfg.controller.dads.k_cc = value,
        "controller.dads.mu_d" => cfg.controller.dads.mu_d = value,
        "controller.dads.mu_q" => cfg.controller.dads.mu_q = value,
        "safety.i_max" => cfg.safety.i_max = value,
        "safety.c" => cfg.safety.c = value,
        "droop.k_p" => cfg.droop.k_p = value,
        "droop.k_q" => cfg.droop.k_q = value,
        "droop.q_bar" => cfg.droop.q_bar = value,
        "droop.p_bar" => cfg.droop.p_bar = value,
        "sim.t_end" => cfg.sim.t_end = value,
        "sim.max_step" => cfg.sim.max_step = value,
        "sim.rel_tol" => cfg.sim.rel_tol = value,
        "sim.abs_tol" => cfg.sim.abs_tol = value,
        _ => {
            return Err(SimError::Config(format!(
                "unknown sweep parameter '{key}'; recognized keys: \
                 controller.dads.{{epsilon,gamma,gamma_d,gamma_q,k_vc,k_cc,mu_d,mu_q}}, \
                 safety.{{i_max,c}}, droop.{{k_p,k_q,q_bar,p_bar}}, \
                 sim.{{t_end,max_step,rel_tol,abs_tol}}"
            )))
        }
    }
    Ok(())
}

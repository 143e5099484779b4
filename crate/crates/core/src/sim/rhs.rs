//! Closed-loop right-hand side: augmented state layout and the staged
//! evaluation that composes grid lookup, frame rotation, power
//! measurement, droop, the selected controller, and the safety filter
//! into one derivative function.

use crate::controllers::{
    dads_control, pi_control, AdaptiveState, AuxDerivs, ControlInputs, ControlOutput, PiState,
};
use crate::frames::{rotate_to_local, theta_derivative, Vec2};
use crate::plant::{plant_derivative, PlantState};
use crate::power_droop::{
    droop_frequency, droop_voltage_ref, instantaneous_power, power_filter_derivative, saturate,
    FilterState,
};
use crate::safety::{apply_filter, SafetyDecision};
use crate::sim::config::{ControllerKind, ScenarioConfig};
use crate::sim::grid::GridProfile;
use crate::{SimError, SimResult};

/// Controller-specific slow states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CtrlState {
    Dads(AdaptiveState),
    Pi(PiState),
}

impl CtrlState {
    pub fn kind(&self) -> ControllerKind {
        match self {
            CtrlState::Dads(_) => ControllerKind::Dads,
            CtrlState::Pi(_) => ControllerKind::Pi,
        }
    }

    fn dim(&self) -> usize {
        match self {
            CtrlState::Dads(_) => 2,
            CtrlState::Pi(_) => 4,
        }
    }
}

/// Full integration state: electrical states, the two saturated power
/// filters, the local frame angle, and the controller states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub elec: PlantState,
    /// Reactive-power filter `[x1, x2]`.
    pub q1: f64,
    pub q2: f64,
    /// Active-power filter `[x1, x2]`.
    pub p1: f64,
    pub p2: f64,
    /// Local frame angle relative to the global frame (rad).
    pub theta: f64,
    pub ctrl: CtrlState,
}

impl AugmentedState {
    pub fn dim(&self) -> usize {
        11 + self.ctrl.dim()
    }

    /// Writes the state into a flat vector. Layout: `v_c (2), i_t (2),
    /// i_g (2), q1, q2, p1, p2, theta, ctrl…`.
    pub fn pack(&self, out: &mut [f64]) {
        out[0] = self.elec.v_c.d;
        out[1] = self.elec.v_c.q;
        out[2] = self.elec.i_t.d;
        out[3] = self.elec.i_t.q;
        out[4] = self.elec.i_g.d;
        out[5] = self.elec.i_g.q;
        out[6] = self.q1;
        out[7] = self.q2;
        out[8] = self.p1;
        out[9] = self.p2;
        out[10] = self.theta;
        match self.ctrl {
            CtrlState::Dads(a) => {
                out[11] = a.z_d;
                out[12] = a.z_q;
            }
            CtrlState::Pi(p) => {
                out[11] = p.gamma_d;
                out[12] = p.gamma_q;
                out[13] = p.beta_d;
                out[14] = p.beta_q;
            }
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.pack(&mut v);
        v
    }

    /// Reads a state back from a flat vector laid out by [`pack`].
    ///
    /// [`pack`]: AugmentedState::pack
    pub fn unpack(y: &[f64], kind: ControllerKind) -> Self {
        let ctrl = match kind {
            ControllerKind::Dads => CtrlState::Dads(AdaptiveState { z_d: y[11], z_q: y[12] }),
            ControllerKind::Pi => CtrlState::Pi(PiState {
                gamma_d: y[11],
                gamma_q: y[12],
                beta_d: y[13],
                beta_q: y[14],
            }),
        };
        AugmentedState {
            elec: PlantState {
                v_c: Vec2::new(y[0], y[1]),
                i_t: Vec2::new(y[2], y[3]),
                i_g: Vec2::new(y[4], y[5]),
            },
            q1: y[6],
            q2: y[7],
            p1: y[8],
            p2: y[9],
            theta: y[10],
            ctrl,
        }
    }
}

/// Every intermediate signal produced while evaluating the loop at one
/// `(t, state)` point, in evaluation order.
#[derive(Debug, Clone, Copy)]
pub struct Staged {
    /// Grid voltage rotated into the local frame.
    pub v_g_local: Vec2,
    /// Instantaneous active power at the capacitor bus.
    pub p: f64,
    /// Instantaneous reactive power at the capacitor bus.
    pub q: f64,
    /// Reactive power after the droop saturation.
    pub q_sat: f64,
    /// Droop frequency (p.u.).
    pub omega: f64,
    /// Droop voltage reference (d component; q reference is zero).
    pub v_ref_d: f64,
    /// Controller output before the safety filter.
    pub control: ControlOutput,
    /// Safety-filter decision (margin signals are evaluated even when the
    /// filter is disabled, so they can be recorded).
    pub decision: SafetyDecision,
}

/// The assembled closed loop for one scenario.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub cfg: ScenarioConfig,
    pub profile: GridProfile,
}

impl ClosedLoop {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        ClosedLoop { profile: GridProfile::from_config(&cfg.grid), cfg: cfg.clone() }
    }

    pub fn kind(&self) -> ControllerKind {
        self.cfg.controller.kind
    }

    /// Initial augmented state from the scenario's initial conditions.
    /// Absent explicit power-filter states, each filter starts at its
    /// equilibrium for the initial electrical state.
    pub fn initial_state(&self) -> AugmentedState {
        let init = &self.cfg.initial;
        let elec = PlantState {
            v_c: Vec2::new(init.v_c[0], init.v_c[1]),
            i_t: Vec2::new(init.i_t[0], init.i_t[1]),
            i_g: Vec2::new(init.i_g[0], init.i_g[1]),
        };
        let [q1, q2, p1, p2] = init.power_filters.unwrap_or_else(|| {
            let (p, q) = instantaneous_power(elec.v_c, elec.i_g);
            [
                saturate(q, self.cfg.droop.q_bar),
                0.0,
                saturate(p, self.cfg.droop.p_bar),
                0.0,
            ]
        });
        let ctrl = match self.cfg.controller.kind {
            ControllerKind::Dads => CtrlState::Dads(AdaptiveState { z_d: init.z[0], z_q: init.z[1] }),
            ControllerKind::Pi => CtrlState::Pi(PiState {
                gamma_d: init.pi_integrators[0],
                gamma_q: init.pi_integrators[1],
                beta_d: init.pi_integrators[2],
                beta_q: init.pi_integrators[3],
            }),
        };
        AugmentedState { elec, q1, q2, p1, p2, theta: init.theta, ctrl }
    }

    /// Evaluates the measurement and control pipeline at `(t, x)` with the
    /// grid voltage looked up from the profile.
    pub fn stage(&self, t: f64, x: &AugmentedState) -> SimResult<Staged> {
        self.stage_with_voltage(t, x, self.profile.voltage_global(t))
    }

    /// Evaluates the pipeline with an explicitly supplied global-frame
    /// grid voltage. Integration legs between grid switches pin the
    /// voltage this way so that a stage landing exactly on a switch time
    /// cannot pull the next segment's value into the current one.
    pub fn stage_with_voltage(&self, t: f64, x: &AugmentedState, v_g_global: Vec2) -> SimResult<Staged> {
        let v_g_local = rotate_to_local(x.theta, v_g_global);
        let (p, q) = instantaneous_power(x.elec.v_c, x.elec.i_g);
        let q_sat = saturate(q, self.cfg.droop.q_bar);
        let omega = droop_frequency(x.p1, &self.cfg.droop);
        let v_ref_d = droop_voltage_ref(x.q1, &self.cfg.droop).d;
        let inputs = ControlInputs {
            elec: &x.elec,
            omega,
            v_ref_d,
            q_sat,
            q1: x.q1,
            q2: x.q2,
            p2: x.p2,
        };
        let control = match x.ctrl {
            CtrlState::Dads(adapt) => dads_control(
                &inputs,
                &adapt,
                &self.cfg.physical.known(),
                &self.cfg.controller.dads,
                &self.cfg.droop,
            )
            .map_err(|e| SimError::GainBlowUp { axis: e.axis, z: e.z, t })?,
            CtrlState::Pi(st) => pi_control(&inputs, &st, &self.cfg.physical.known(), &self.cfg.controller.pi),
        };
        let decision = apply_filter(
            x.elec.i_t,
            x.elec.v_c,
            control.v_t_nominal,
            omega,
            &self.cfg.physical.known(),
            &self.cfg.safety,
        );
        Ok(Staged { v_g_local, p, q, q_sat, omega, v_ref_d, control, decision })
    }

    /// Time derivative of the augmented state at `(t, x)`, reusing an
    /// already-staged evaluation.
    pub fn derivative_from_staged(&self, x: &AugmentedState, staged: &Staged) -> AugmentedState {
        let d_elec = plant_derivative(
            &x.elec,
            staged.omega,
            staged.decision.v_t,
            staged.v_g_local,
            &self.cfg.physical,
        );
        let dq = power_filter_derivative(
            FilterState { x1: x.q1, x2: x.q2 },
            staged.q,
            self.cfg.droop.q_bar,
            self.cfg.droop.xi_q,
            self.cfg.droop.omega_qc,
        );
        let dp = power_filter_derivative(
            FilterState { x1: x.p1, x2: x.p2 },
            staged.p,
            self.cfg.droop.p_bar,
            self.cfg.droop.xi_p,
            self.cfg.droop.omega_pc,
        );
        let d_theta = theta_derivative(staged.omega, self.cfg.droop.omega0, self.cfg.physical.omega_b);
        let d_ctrl = match staged.control.aux {
            AuxDerivs::Dads { dz_d, dz_q } => CtrlState::Dads(AdaptiveState { z_d: dz_d, z_q: dz_q }),
            AuxDerivs::Pi { dgamma_d, dgamma_q, dbeta_d, dbeta_q } => CtrlState::Pi(PiState {
                gamma_d: dgamma_d,
                gamma_q: dgamma_q,
                beta_d: dbeta_d,
                beta_q: dbeta_q,
            }),
        };
        AugmentedState {
            elec: d_elec,
            q1: dq.x1,
            q2: dq.x2,
            p1: dp.x1,
            p2: dp.x2,
            theta: d_theta,
            ctrl: d_ctrl,
        }
    }

    /// Convenience wrapper: stage and differentiate in one call.
    pub fn derivative(&self, t: f64, x: &AugmentedState) -> SimResult<AugmentedState> {
        let staged = self.stage(t, x)?;
        Ok(self.derivative_from_staged(x, &staged))
    }

    /// Packed right-hand side with the profile's live voltage lookup.
    pub fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> SimResult<()> {
        self.rhs_with_voltage(t, y, dy, self.profile.voltage_global(t))
    }

    /// Packed right-hand side with a pinned global-frame grid voltage.
    pub fn rhs_with_voltage(&self, t: f64, y: &[f64], dy: &mut [f64], v_g_global: Vec2) -> SimResult<()> {
        let x = AugmentedState::unpack(y, self.kind());
        let staged = self.stage_with_voltage(t, &x, v_g_global)?;
        let dx = self.derivative_from_staged(&x, &staged);
        dx.pack(dy);
        for (i, &d) in dy.iter().enumerate() {
            if !d.is_finite() {
                return Err(SimError::NonFinite {
                    t,
                    detail: format!("derivative component {i} is {d} at state {x:?}"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::GridStep;

    fn dads_cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    fn pi_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.controller.kind = ControllerKind::Pi;
        cfg
    }

    #[test]
    fn pack_unpack_roundtrip_both_controllers() {
        let loop_d = ClosedLoop::new(&dads_cfg());
        let mut x = loop_d.initial_state();
        x.elec.i_t = Vec2::new(0.3, -0.2);
        x.theta = 1.7;
        if let CtrlState::Dads(ref mut a) = x.ctrl {
            a.z_d = 0.5;
            a.z_q = -0.25;
        }
        let y = x.to_vec();
        assert_eq!(y.len(), 13);
        assert_eq!(AugmentedState::unpack(&y, ControllerKind::Dads), x);

        let loop_pi = ClosedLoop::new(&pi_cfg());
        let mut xp = loop_pi.initial_state();
        if let CtrlState::Pi(ref mut p) = xp.ctrl {
            p.gamma_d = 0.1;
            p.beta_q = -0.4;
        }
        let yp = xp.to_vec();
        assert_eq!(yp.len(), 15);
        assert_eq!(AugmentedState::unpack(&yp, ControllerKind::Pi), xp);
    }

    #[test]
    fn initial_power_filters_start_at_saturated_equilibrium() {
        let mut cfg = dads_cfg();
        cfg.initial.v_c = [0.9, 0.1];
        cfg.initial.i_g = [0.8, -0.3];
        cfg.initial.power_filters = None;
        cfg.droop.q_bar = 0.2;
        let model = ClosedLoop::new(&cfg);
        let x = model.initial_state();
        // p = 0.9*0.8 + 0.1*(-0.3), q = 0.1*0.8 - 0.9*(-0.3) = 0.35 -> clamps to 0.2.
        assert_eq!(x.p1, 0.9_f64 * 0.8 + 0.1 * (-0.3));
        assert_eq!(x.q1, 0.2);
        assert_eq!(x.q2, 0.0);
        assert_eq!(x.p2, 0.0);

        // Filter derivative of x1 is x2 = 0: the filters hold still until
        // the measured power moves.
        let d = model.derivative(0.0, &x).unwrap();
        assert_eq!(d.q1, 0.0);
        assert_eq!(d.p1, 0.0);

        cfg.initial.power_filters = Some([0.11, 0.22, 0.33, 0.44]);
        let x = ClosedLoop::new(&cfg).initial_state();
        assert_eq!((x.q1, x.q2, x.p1, x.p2), (0.11, 0.22, 0.33, 0.44));
    }

    #[test]
    fn stage_composes_the_documented_pipeline() {
        let mut cfg = dads_cfg();
        cfg.initial.v_c = [0.95, -0.08];
        cfg.initial.i_t = [0.6, 0.12];
        cfg.initial.i_g = [0.55, 0.05];
        cfg.initial.theta = 0.3;
        cfg.initial.power_filters = Some([0.48, -0.3, 0.9, 1.2]);
        cfg.initial.z = [0.25, -0.1];
        let model = ClosedLoop::new(&cfg);
        let x = model.initial_state();
        let staged = model.stage(0.0, &x).unwrap();

        // Each stage must agree with the corresponding standalone
        // operation applied by hand.
        let v_g = rotate_to_local(0.3, Vec2::new(1.0, 0.0));
        assert_eq!(staged.v_g_local, v_g);
        let (p, q) = instantaneous_power(x.elec.v_c, x.elec.i_g);
        assert_eq!((staged.p, staged.q), (p, q));
        assert_eq!(staged.q_sat, saturate(q, cfg.droop.q_bar));
        assert_eq!(staged.omega, droop_frequency(0.9, &cfg.droop));
        assert_eq!(staged.v_ref_d, droop_voltage_ref(0.48, &cfg.droop).d);

        let inputs = ControlInputs {
            elec: &x.elec,
            omega: staged.omega,
            v_ref_d: staged.v_ref_d,
            q_sat: staged.q_sat,
            q1: 0.48,
            q2: -0.3,
            p2: 1.2,
        };
        let adapt = AdaptiveState { z_d: 0.25, z_q: -0.1 };
        let expect = dads_control(
            &inputs,
            &adapt,
            &cfg.physical.known(),
            &cfg.controller.dads,
            &cfg.droop,
        )
        .unwrap();
        assert_eq!(staged.control.v_t_nominal, expect.v_t_nominal);
        assert_eq!(staged.control.i_t_ref, expect.i_t_ref);
        assert_eq!((staged.control.w_d, staged.control.w_q), (expect.w_d, expect.w_q));

        // Filter disabled: the margin signals are still evaluated but the
        // applied voltage is the nominal one.
        assert!(!staged.decision.active);
        assert_eq!(staged.decision.v_t, staged.control.v_t_nominal);
    }

    #[test]
    fn derivative_matches_hand_composition() {
        let mut cfg = pi_cfg();
        cfg.initial.v_c = [0.9, 0.05];
        cfg.initial.i_t = [0.4, -0.1];
        cfg.initial.i_g = [0.35, 0.02];
        cfg.initial.theta = -0.2;
        cfg.initial.pi_integrators = [0.01, -0.02, 0.005, 0.003];
        let model = ClosedLoop::new(&cfg);
        let x = model.initial_state();
        let staged = model.stage(0.0, &x).unwrap();
        let dx = model.derivative(0.0, &x).unwrap();

        let d_elec = plant_derivative(
            &x.elec,
            staged.omega,
            staged.decision.v_t,
            staged.v_g_local,
            &cfg.physical,
        );
        assert_eq!(dx.elec, d_elec);
        let dq = power_filter_derivative(
            FilterState { x1: x.q1, x2: x.q2 },
            staged.q,
            cfg.droop.q_bar,
            cfg.droop.xi_q,
            cfg.droop.omega_qc,
        );
        assert_eq!((dx.q1, dx.q2), (dq.x1, dq.x2));
        assert_eq!(
            dx.theta,
            theta_derivative(staged.omega, cfg.droop.omega0, cfg.physical.omega_b)
        );
        match dx.ctrl {
            CtrlState::Pi(d) => {
                // PI integrators accumulate the current and voltage errors.
                let e_i = x.elec.i_t - staged.control.i_t_ref;
                assert_eq!(d.gamma_d, e_i.d);
                assert_eq!(d.gamma_q, e_i.q);
                assert_eq!(d.beta_d, x.elec.v_c.d - staged.v_ref_d);
                assert_eq!(d.beta_q, x.elec.v_c.q);
            }
            CtrlState::Dads(_) => panic!("expected PI derivatives"),
        }
    }

    #[test]
    fn rhs_rejects_nonfinite_derivatives() {
        let mut cfg = dads_cfg();
        cfg.grid.steps = vec![GridStep { t: 0.0, v_d: 1.0, v_q: 0.0 }];
        let model = ClosedLoop::new(&cfg);
        let x = model.initial_state();
        let mut y = x.to_vec();
        y[0] = f64::NAN;
        let mut dy = vec![0.0; y.len()];
        let err = model.rhs(0.0, &y, &mut dy).unwrap_err();
        assert!(matches!(err, SimError::NonFinite { .. }));
    }

    #[test]
    fn gain_blowup_is_tagged_with_time() {
        let mut cfg = dads_cfg();
        cfg.initial.z = [700.0, 0.0];
        let model = ClosedLoop::new(&cfg);
        let mut x = model.initial_state();
        if let CtrlState::Dads(ref mut a) = x.ctrl {
            a.z_d = 701.0;
        }
        match model.stage(1.25, &x) {
            Err(SimError::GainBlowUp { t, .. }) => assert_eq!(t, 1.25),
            other => panic!("expected gain blow-up, got {other:?}"),
        }
    }
}

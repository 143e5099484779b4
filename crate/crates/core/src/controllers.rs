//! Voltage controllers producing the nominal terminal voltage command.
//!
//! Two controllers share one input/output interface:
//!
//! - [`dads_control`]: a backstepping design with deadzone-gated adaptive
//!   nonlinear damping. Per axis it tracks a capacitor-voltage reference
//!   through a virtual current reference, injects damping that grows with
//!   `exp(z)`, and adapts `z` only while the tracking-error energy `W`
//!   exceeds the deadzone level `epsilon` (so `z` is non-decreasing and
//!   freezes whenever `W <= epsilon`).
//! - [`pi_control`]: a conventional dual-loop PI baseline (outer voltage
//!   loop producing a current reference, inner current loop producing the
//!   voltage command), with feedforward and frequency decoupling terms.
//!
//! Both controllers only see [`KnownPhys`], i.e. the filter parameters and
//! the frequency base; the line impedance is structurally out of reach.

use serde::{Deserialize, Serialize};

use crate::frames::Vec2;
use crate::plant::{KnownPhys, PlantState};
use crate::power_droop::DroopParams;
use crate::Axis;

/// Guard for `exp(z)` / `exp(-z)` evaluation: beyond this the exponential
/// overflows f64 and the run must abort instead of saturating silently.
pub const EXP_GUARD: f64 = 700.0;

/// Adaptive damping-gain states of the backstepping controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdaptiveState {
    pub z_d: f64,
    pub z_q: f64,
}

/// Integrator states of the PI baseline: `gamma` integrates the current
/// error (inner loop), `beta` the voltage error (outer loop).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiState {
    pub gamma_d: f64,
    pub gamma_q: f64,
    pub beta_d: f64,
    pub beta_q: f64,
}

/// Backstepping controller parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DadsParams {
    /// Voltage-loop gain (1/s).
    pub k_vc: f64,
    /// Current-loop gain (1/s).
    pub k_cc: f64,
    /// Damping budget of the d axis (1/s).
    pub mu_d: f64,
    /// Damping budget of the q axis (1/s).
    pub mu_q: f64,
    /// Adaptation rate of the d axis (1/s).
    pub gamma_d: f64,
    /// Adaptation rate of the q axis (1/s).
    pub gamma_q: f64,
    /// Deadzone level on the tracking-error energy W.
    pub epsilon: f64,
}

impl Default for DadsParams {
    fn default() -> Self {
        DadsParams {
            k_vc: 10.0,
            k_cc: 10.0,
            mu_d: 1.0,
            mu_q: 1.0,
            gamma_d: 1e6,
            gamma_q: 1e6,
            epsilon: 1e-4,
        }
    }
}

/// PI baseline gains. The defaults place the inner current loop at about
/// 2000 rad/s natural frequency and the outer voltage loop at about a tenth
/// of that (with the default filter parameters), both near critically
/// damped; the feedforward gains are unity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiParams {
    pub kp_cc: f64,
    pub ki_cc: f64,
    pub kf_cc: f64,
    pub kp_vc: f64,
    pub ki_vc: f64,
    pub kf_vc: f64,
}

impl Default for PiParams {
    fn default() -> Self {
        PiParams {
            kp_cc: 0.424,
            ki_cc: 530.0,
            kf_cc: 1.0,
            kp_vc: 0.255,
            ki_vc: 31.8,
            kf_vc: 1.0,
        }
    }
}

/// Signals every controller evaluation consumes, assembled by the engine
/// from the droop layer and the power filters.
#[derive(Debug, Clone, Copy)]
pub struct ControlInputs<'a> {
    pub elec: &'a PlantState,
    /// Frame frequency from the droop law (p.u.).
    pub omega: f64,
    /// Voltage reference d component from the droop law (p.u.).
    pub v_ref_d: f64,
    /// Saturated instantaneous reactive power fed to the q filter.
    pub q_sat: f64,
    /// Reactive power filter states.
    pub q1: f64,
    pub q2: f64,
    /// Active power filter derivative state.
    pub p2: f64,
}

/// Derivatives of controller-internal states, to be integrated alongside
/// the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuxDerivs {
    Dads { dz_d: f64, dz_q: f64 },
    Pi { dgamma_d: f64, dgamma_q: f64, dbeta_d: f64, dbeta_q: f64 },
}

/// One controller evaluation: the nominal terminal-voltage command before
/// any safety filtering, the current reference used internally, the
/// per-axis tracking-error energies, and internal-state derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub v_t_nominal: Vec2,
    pub i_t_ref: Vec2,
    pub w_d: f64,
    pub w_q: f64,
    pub aux: AuxDerivs,
}

/// The adaptive gain state left the domain where `exp` is representable.
#[derive(Debug, Clone, Copy, thiserror::Error)]
#[error("adaptive gain state z_{axis} = {z:.6e} outside the exp guard (|z| <= 700)")]
pub struct GainBlowUp {
    pub axis: Axis,
    pub z: f64,
}

fn guarded_exp(z: f64, axis: Axis) -> Result<f64, GainBlowUp> {
    if z.abs() <= EXP_GUARD {
        Ok(z.exp())
    } else {
        Err(GainBlowUp { axis, z })
    }
}

/// Virtual current reference of the backstepping voltage loop.
///
/// d axis: `i_g.d - c_f*omega*v_c.q - (c_f*k_q/omega_b)*q2
///          - (c_f*k_vc/omega_b)*(v_c.d - v_ref_d)`;
/// q axis: `i_g.q + c_f*omega*v_c.d - (c_f*k_vc/omega_b)*v_c.q`.
pub fn dads_reference_currents(
    elec: &PlantState,
    omega: f64,
    v_ref_d: f64,
    q2: f64,
    phys: &KnownPhys,
    dads: &DadsParams,
    droop: &DroopParams,
) -> Vec2 {
    let cf = phys.c_f;
    let wb = phys.omega_b;
    Vec2::new(
        elec.i_g.d
            - cf * omega * elec.v_c.q
            - (cf * droop.k_q / wb) * q2
            - (cf * dads.k_vc / wb) * (elec.v_c.d - v_ref_d),
        elec.i_g.q + cf * omega * elec.v_c.d - (cf * dads.k_vc / wb) * elec.v_c.q,
    )
}

/// Deadzone-gated adaptation law: `gamma * exp(-z) * max(w - epsilon, 0)`.
/// Non-negative for every input, zero whenever `w <= epsilon`.
pub fn adaptation_derivative(
    w: f64,
    z: f64,
    gamma: f64,
    epsilon: f64,
    axis: Axis,
) -> Result<f64, GainBlowUp> {
    let e = guarded_exp(-z, axis)?;
    Ok(gamma * e * (w - epsilon).max(0.0))
}

/// Evaluates the adaptive backstepping controller.
///
/// Fails only if an adaptive gain state is outside the exp guard.
pub fn dads_control(
    inp: &ControlInputs,
    adapt: &AdaptiveState,
    phys: &KnownPhys,
    dads: &DadsParams,
    droop: &DroopParams,
) -> Result<ControlOutput, GainBlowUp> {
    let x = inp.elec;
    let wb = phys.omega_b;
    let cf = phys.c_f;
    let lf = phys.l_f;
    let omega = inp.omega;

    let i_ref = dads_reference_currents(x, omega, inp.v_ref_d, inp.q2, phys, dads, droop);
    let ev_d = x.v_c.d - inp.v_ref_d;
    let ev_q = x.v_c.q;
    let ei_d = x.i_t.d - i_ref.d;
    let ei_q = x.i_t.q - i_ref.q;

    let w_d = 0.5 * ev_d * ev_d + 0.5 * ei_d * ei_d;
    let w_q = 0.5 * ev_q * ev_q + 0.5 * ei_q * ei_q;

    let exp_zd = guarded_exp(adapt.z_d, Axis::D)?;
    let exp_zq = guarded_exp(adapt.z_q, Axis::Q)?;

    let u_d = -(dads.k_cc
        + ((1.0 + exp_zd) * wb * wb / (4.0 * dads.mu_d))
            * (1.0 + x.i_g.d * x.i_g.d + x.v_c.d * x.v_c.d))
        * ei_d
        - (wb / cf) * ev_d;
    let u_q = -(dads.k_cc
        + ((1.0 + exp_zq) * wb * wb / (4.0 * dads.mu_q))
            * (1.0 + x.i_g.q * x.i_g.q + x.v_c.q * x.v_c.q))
        * ei_q
        - (wb / cf) * ev_q;

    let v_t_d = (lf / wb)
        * (-2.0 * wb * omega * (x.i_t.q - x.i_g.q)
            + (wb * phys.r_f / lf) * x.i_t.d
            + wb * (1.0 / lf + omega * omega * cf) * x.v_c.d
            + cf * droop.k_p * inp.p2 * x.v_c.q
            - dads.k_vc * ei_d
            + (cf * dads.k_vc * dads.k_vc / wb) * ev_d
            + (2.0 * droop.xi_q * droop.omega_qc * droop.k_q * cf / wb) * inp.q2
            + (droop.omega_qc * droop.omega_qc * droop.k_q * cf / wb) * (inp.q1 - inp.q_sat)
            + u_d);
    let v_t_q = (lf / wb)
        * (2.0 * wb * omega * (x.i_t.d - x.i_g.d)
            + (wb * phys.r_f / lf) * x.i_t.q
            + wb * (1.0 / lf + cf * omega * omega + cf * dads.k_vc * dads.k_vc / (wb * wb))
                * x.v_c.q
            - cf * droop.k_p * inp.p2 * x.v_c.d
            - dads.k_vc * ei_q
            + u_q);

    let dz_d = adaptation_derivative(w_d, adapt.z_d, dads.gamma_d, dads.epsilon, Axis::D)?;
    let dz_q = adaptation_derivative(w_q, adapt.z_q, dads.gamma_q, dads.epsilon, Axis::Q)?;

    Ok(ControlOutput {
        v_t_nominal: Vec2::new(v_t_d, v_t_q),
        i_t_ref: i_ref,
        w_d,
        w_q,
        aux: AuxDerivs::Dads { dz_d, dz_q },
    })
}

/// Evaluates the dual-loop PI baseline.
pub fn pi_control(
    inp: &ControlInputs,
    st: &PiState,
    phys: &KnownPhys,
    pi: &PiParams,
) -> ControlOutput {
    let x = inp.elec;
    let omega = inp.omega;
    let ev_d = x.v_c.d - inp.v_ref_d;
    let ev_q = x.v_c.q;

    let i_ref = Vec2::new(
        -pi.kp_vc * ev_d - pi.ki_vc * st.beta_d + pi.kf_vc * x.i_g.d - omega * phys.c_f * x.v_c.q,
        -pi.kp_vc * ev_q - pi.ki_vc * st.beta_q + pi.kf_vc * x.i_g.q + omega * phys.c_f * x.v_c.d,
    );
    let ei_d = x.i_t.d - i_ref.d;
    let ei_q = x.i_t.q - i_ref.q;

    let v_t = Vec2::new(
        -pi.kp_cc * ei_d - pi.ki_cc * st.gamma_d + pi.kf_cc * x.v_c.d - omega * phys.l_f * x.i_t.q,
        -pi.kp_cc * ei_q - pi.ki_cc * st.gamma_q + pi.kf_cc * x.v_c.q + omega * phys.l_f * x.i_t.d,
    );

    ControlOutput {
        v_t_nominal: v_t,
        i_t_ref: i_ref,
        w_d: 0.5 * ev_d * ev_d + 0.5 * ei_d * ei_d,
        w_q: 0.5 * ev_q * ev_q + 0.5 * ei_q * ei_q,
        aux: AuxDerivs::Pi {
            dgamma_d: ei_d,
            dgamma_q: ei_q,
            dbeta_d: ev_d,
            dbeta_q: ev_q,
        },
    }
}

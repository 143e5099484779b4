//! Per-unit circuit dynamics of the inverter LC filter and the line to the
//! grid bus, expressed in the local rotating dq frame.
//!
//! States are the capacitor voltage `v_c`, the inverter-side terminal
//! current `i_t`, and the grid-side line current `i_g`. Inputs are the
//! applied terminal voltage `v_t`, the grid voltage `v_g` (already rotated
//! into the local frame), and the per-unit frame frequency `omega`. All
//! derivatives scale with `omega_b` (rad/s).

use serde::{Deserialize, Serialize};

use crate::frames::Vec2;

/// Circuit parameters. `l` and `r` describe the line between the capacitor
/// bus and the grid; the controller is never given access to them (see
/// [`PhysicalParams::known`]).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalParams {
    /// Base angular frequency in rad/s.
    pub omega_b: f64,
    /// Filter capacitance (p.u.).
    pub c_f: f64,
    /// Filter inductance (p.u.).
    pub l_f: f64,
    /// Filter series resistance (p.u.).
    pub r_f: f64,
    /// Line inductance (p.u.).
    pub l: f64,
    /// Line resistance (p.u.).
    pub r: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            omega_b: 120.0 * std::f64::consts::PI,
            c_f: 0.30,
            l_f: 0.05,
            r_f: 7.2e-3,
            l: 0.8,
            r: 0.2,
        }
    }
}

/// The strict subset of [`PhysicalParams`] available to the controllers:
/// the filter parameters and the frequency base. Keeping this a separate
/// type makes it impossible for control code to read the line impedance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownPhys {
    pub omega_b: f64,
    pub c_f: f64,
    pub l_f: f64,
    pub r_f: f64,
}

impl PhysicalParams {
    pub fn known(&self) -> KnownPhys {
        KnownPhys {
            omega_b: self.omega_b,
            c_f: self.c_f,
            l_f: self.l_f,
            r_f: self.r_f,
        }
    }
}

/// Electrical state of the circuit (all p.u., local dq frame).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub v_c: Vec2,
    pub i_t: Vec2,
    pub i_g: Vec2,
}

impl PlantState {
    pub fn is_finite(&self) -> bool {
        self.v_c.is_finite() && self.i_t.is_finite() && self.i_g.is_finite()
    }
}

/// Time derivative of the electrical state.
///
/// `v_g` must already be expressed in the local frame. The rotational
/// cross-coupling enters every d/q pair as `+omega_b*omega*x_q` on the d
/// axis and `-omega_b*omega*x_d` on the q axis.
pub fn plant_derivative(
    x: &PlantState,
    omega: f64,
    v_t: Vec2,
    v_g: Vec2,
    phys: &PhysicalParams,
) -> PlantState {
    let wb = phys.omega_b;
    let ww = wb * omega;
    PlantState {
        v_c: Vec2::new(
            ww * x.v_c.q + (wb / phys.c_f) * (x.i_t.d - x.i_g.d),
            -ww * x.v_c.d + (wb / phys.c_f) * (x.i_t.q - x.i_g.q),
        ),
        i_t: Vec2::new(
            ww * x.i_t.q + (wb / phys.l_f) * (v_t.d - x.v_c.d) - (wb * phys.r_f / phys.l_f) * x.i_t.d,
            -ww * x.i_t.d + (wb / phys.l_f) * (v_t.q - x.v_c.q) - (wb * phys.r_f / phys.l_f) * x.i_t.q,
        ),
        i_g: Vec2::new(
            ww * x.i_g.q + (wb / phys.l) * (x.v_c.d - v_g.d) - (wb * phys.r / phys.l) * x.i_g.d,
            -ww * x.i_g.d + (wb / phys.l) * (x.v_c.q - v_g.q) - (wb * phys.r / phys.l) * x.i_g.q,
        ),
    }
}

//! Instantaneous power, saturated second-order power filters, and the
//! droop laws.
//!
//! The filters are critically-overdamped second-order lags (`xi > 1`)
//! driven by the saturated instantaneous power; their first state feeds the
//! droop laws that produce the voltage reference magnitude and the frame
//! frequency. Saturation bounds may be `+inf`, which turns the saturation
//! into the identity.

use serde::{Deserialize, Serialize};

use crate::frames::Vec2;

/// Droop and power-filter parameters (p.u. except the filter corner
/// frequencies, which are rad/s).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroopParams {
    /// Voltage reference base (p.u.).
    pub v0: f64,
    /// Frequency reference (p.u.).
    pub omega0: f64,
    /// Active power setpoint (p.u.).
    pub p0: f64,
    /// Reactive power setpoint (p.u.).
    pub q0: f64,
    /// Frequency droop gain (p.u. frequency per p.u. power).
    pub k_p: f64,
    /// Voltage droop gain (p.u. voltage per p.u. reactive power).
    pub k_q: f64,
    /// Active power filter damping ratio (> 1).
    pub xi_p: f64,
    /// Reactive power filter damping ratio (> 1).
    pub xi_q: f64,
    /// Active power filter corner frequency (rad/s).
    pub omega_pc: f64,
    /// Reactive power filter corner frequency (rad/s).
    pub omega_qc: f64,
    /// Saturation bound on the active power fed to its filter (may be inf).
    pub p_bar: f64,
    /// Saturation bound on the reactive power fed to its filter (may be inf).
    pub q_bar: f64,
}

impl Default for DroopParams {
    fn default() -> Self {
        DroopParams {
            v0: 1.0,
            omega0: 1.0,
            p0: 1.0,
            q0: 0.5,
            k_p: 5e-3,
            k_q: 1e-4,
            xi_p: 1.2,
            xi_q: 1.2,
            omega_pc: 332.8,
            omega_qc: 732.8,
            p_bar: f64::INFINITY,
            q_bar: 1.5,
        }
    }
}

/// State of one second-order power filter: `x1` is the filtered value used
/// by the droop laws, `x2` its derivative state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterState {
    pub x1: f64,
    pub x2: f64,
}

/// Instantaneous active and reactive power at the capacitor bus:
/// `p = v_c.d*i_g.d + v_c.q*i_g.q`, `q = v_c.q*i_g.d - v_c.d*i_g.q`.
pub fn instantaneous_power(v_c: Vec2, i_g: Vec2) -> (f64, f64) {
    (
        v_c.d * i_g.d + v_c.q * i_g.q,
        v_c.q * i_g.d - v_c.d * i_g.q,
    )
}

/// Symmetric saturation to `[-bound, bound]`; identity when `bound` is
/// infinite. `bound` must be non-negative.
pub fn saturate(x: f64, bound: f64) -> f64 {
    debug_assert!(bound >= 0.0);
    x.clamp(-bound, bound)
}

/// Derivative of a saturated second-order power filter:
/// `x1' = x2`, `x2' = -2*xi*omega_c*x2 - omega_c^2*(x1 - sat(input))`.
pub fn power_filter_derivative(
    state: FilterState,
    input: f64,
    bound: f64,
    xi: f64,
    omega_c: f64,
) -> FilterState {
    FilterState {
        x1: state.x2,
        x2: -2.0 * xi * omega_c * state.x2 - omega_c * omega_c * (state.x1 - saturate(input, bound)),
    }
}

/// Droop frequency: `omega0 + k_p * (p0 - p1)`.
pub fn droop_frequency(p1: f64, droop: &DroopParams) -> f64 {
    droop.omega0 + droop.k_p * (droop.p0 - p1)
}

/// Droop voltage reference; the q component is identically zero.
pub fn droop_voltage_ref(q1: f64, droop: &DroopParams) -> Vec2 {
    Vec2::new(droop.v0 + droop.k_q * (droop.q0 - q1), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn instantaneous_power_example() {
        let (p, q) = instantaneous_power(Vec2::new(1.0, 1.0), Vec2::new(2.0, 3.0));
        assert_eq!(p, 5.0);
        assert_eq!(q, -1.0);
    }

    #[test]
    fn power_is_frame_invariant() {
        // p and q depend only on relative orientation, so rotating both
        // vectors by the same angle leaves them unchanged.
        let v = Vec2::new(0.9, -0.2);
        let i = Vec2::new(0.4, 0.7);
        let (p0, q0) = instantaneous_power(v, i);
        let th = 1.234;
        let (p1, q1) = instantaneous_power(
            crate::frames::rotate_to_global(th, v),
            crate::frames::rotate_to_global(th, i),
        );
        assert!((p0 - p1).abs() < 1e-14);
        assert!((q0 - q1).abs() < 1e-14);
    }

    #[test]
    fn saturation_examples() {
        assert_eq!(saturate(2.0, 1.5), 1.5);
        assert_eq!(saturate(-2.0, 1.5), -1.5);
        assert_eq!(saturate(0.3, 1.5), 0.3);
        assert_eq!(saturate(42.0, f64::INFINITY), 42.0);
        assert_eq!(saturate(-42.0, f64::INFINITY), -42.0);
    }

    #[test]
    fn filter_step_response_initial_acceleration() {
        // Oracle: with zero state and unit input, x2' = omega_qc^2
        // = 536995.84 exactly for the default reactive corner frequency.
        let droop = DroopParams::default();
        let d = power_filter_derivative(
            FilterState::default(),
            1.0,
            f64::INFINITY,
            droop.xi_q,
            droop.omega_qc,
        );
        assert_eq!(d.x1, 0.0);
        assert!((d.x2 - 536995.84).abs() < 1e-6);
    }

    #[test]
    fn filter_is_stationary_at_saturated_equilibrium() {
        let d = power_filter_derivative(
            FilterState { x1: 1.5, x2: 0.0 },
            7.0,
            1.5,
            1.2,
            732.8,
        );
        assert_eq!(d.x1, 0.0);
        assert_eq!(d.x2, 0.0);
    }

    #[test]
    fn droop_laws_at_setpoints_and_offsets() {
        let droop = DroopParams::default();
        assert_eq!(droop_frequency(droop.p0, &droop), 1.0);
        assert_eq!(droop_voltage_ref(droop.q0, &droop).d, 1.0);
        assert_eq!(droop_voltage_ref(droop.q0, &droop).q, 0.0);
        // Frozen oracle values for the controller fixed-state tests.
        assert!((droop_frequency(0.9, &droop) - 1.0005).abs() < 1e-15);
        assert!((droop_voltage_ref(0.48, &droop).d - 1.000002).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn saturate_is_idempotent_odd_and_contractive(
            x in -10.0..10.0f64,
            y in -10.0..10.0f64,
            bound in prop_oneof![0.0..5.0f64, Just(f64::INFINITY)],
        ) {
            let sx = saturate(x, bound);
            prop_assert_eq!(saturate(sx, bound), sx);
            prop_assert_eq!(saturate(-x, bound), -sx);
            prop_assert!((sx - saturate(y, bound)).abs() <= (x - y).abs());
        }
    }
}

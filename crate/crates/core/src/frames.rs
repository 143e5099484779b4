//! Rotating-frame kinematics.
//!
//! Two frames are used throughout: the global DQ frame rotating at the
//! nominal grid frequency, and the local dq frame attached to the inverter,
//! whose angle `theta` (rad) integrates the per-unit frequency offset
//! produced by the droop law. `theta` is carried unwrapped; no angle
//! normalization is applied anywhere.

use std::ops::{Add, Mul, Neg, Sub};

/// A two-component vector in a rotating frame (d/q in the local frame,
/// D/Q in the global frame).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub d: f64,
    pub q: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { d: 0.0, q: 0.0 };

    pub fn new(d: f64, q: f64) -> Self {
        Vec2 { d, q }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.d * other.d + self.q * other.q
    }

    pub fn norm_sq(self) -> f64 {
        self.d * self.d + self.q * self.q
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.d.is_finite() && self.q.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.d + rhs.d, self.q + rhs.q)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.d - rhs.d, self.q - rhs.q)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.d * s, self.q * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.d, -self.q)
    }
}

/// Rotates a local-frame vector into the global frame:
/// `[cos -sin; sin cos] * v`.
pub fn rotate_to_global(theta: f64, v: Vec2) -> Vec2 {
    let (s, c) = theta.sin_cos();
    Vec2::new(c * v.d - s * v.q, s * v.d + c * v.q)
}

/// Rotates a global-frame vector into the local frame (transpose of the
/// rotation used by [`rotate_to_global`]).
pub fn rotate_to_local(theta: f64, v: Vec2) -> Vec2 {
    let (s, c) = theta.sin_cos();
    Vec2::new(c * v.d + s * v.q, -s * v.d + c * v.q)
}

/// Time derivative of the local frame angle: `omega_b * (omega - omega0)`,
/// with `omega` and `omega0` in per-unit and `omega_b` in rad/s.
pub fn theta_derivative(omega: f64, omega0: f64, omega_b: f64) -> f64 {
    omega_b * (omega - omega0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const WB: f64 = 120.0 * std::f64::consts::PI;

    #[test]
    fn rotation_matches_direct_formula() {
        // Oracle: direct evaluation of [cos -sin; sin cos] * v.
        let theta: f64 = 0.3;
        let v = Vec2::new(0.5, -0.2);
        let expected = Vec2::new(
            theta.cos() * v.d - theta.sin() * v.q,
            theta.sin() * v.d + theta.cos() * v.q,
        );
        let got = rotate_to_global(theta, v);
        assert_eq!(got, expected);
        assert!((got.d - 0.5367722858950709).abs() < 1e-15);
        assert!((got.q - -0.043307194494451445).abs() < 1e-15);
    }

    #[test]
    fn zero_angle_is_identity() {
        let v = Vec2::new(-1.25, 0.75);
        assert_eq!(rotate_to_global(0.0, v), v);
        assert_eq!(rotate_to_local(0.0, v), v);
    }

    #[test]
    fn quarter_turn_swaps_axes() {
        let v = Vec2::new(1.0, 0.0);
        let g = rotate_to_global(std::f64::consts::FRAC_PI_2, v);
        assert!(g.d.abs() < 1e-15);
        assert!((g.q - 1.0).abs() < 1e-15);
    }

    #[test]
    fn theta_derivative_scales_frequency_offset() {
        let got = theta_derivative(1.005, 1.0, WB);
        assert!((got - 1.8849555921538355).abs() < 1e-12);
        assert_eq!(theta_derivative(1.0, 1.0, WB), 0.0);
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(
            theta in -1.0e3..1.0e3f64,
            d in -10.0..10.0f64,
            q in -10.0..10.0f64,
        ) {
            let v = Vec2::new(d, q);
            let g = rotate_to_global(theta, v);
            prop_assert!((g.norm() - v.norm()).abs() <= 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn local_global_roundtrip(
            theta in -1.0e3..1.0e3f64,
            d in -10.0..10.0f64,
            q in -10.0..10.0f64,
        ) {
            let v = Vec2::new(d, q);
            let back = rotate_to_local(theta, rotate_to_global(theta, v));
            prop_assert!((back.d - v.d).abs() <= 1e-12 * (1.0 + v.norm()));
            prop_assert!((back.q - v.q).abs() <= 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn rotations_compose_additively(
            a in -50.0..50.0f64,
            b in -50.0..50.0f64,
            d in -10.0..10.0f64,
            q in -10.0..10.0f64,
        ) {
            let v = Vec2::new(d, q);
            let two_step = rotate_to_global(a, rotate_to_global(b, v));
            let one_step = rotate_to_global(a + b, v);
            prop_assert!((two_step.d - one_step.d).abs() <= 1e-10 * (1.0 + v.norm()));
            prop_assert!((two_step.q - one_step.q).abs() <= 1e-10 * (1.0 + v.norm()));
        }
    }
}

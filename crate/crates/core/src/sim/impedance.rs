//! Low-level Cartesian impedance layer running at 100 Hz under the 10 Hz policy.
//!
//! The end effector is kinematic: the impedance force is turned into a
//! velocity through a virtual admittance `v = −F / c`.

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceGains {
    pub kp: f64,
    pub kd: f64,
    /// Componentwise bound on the pose error (|e| ≤ Δ).
    pub bound: f64,
    /// Virtual admittance damping `c` in `v = −F / c`.
    pub damping: f64,
}

impl Default for ImpedanceGains {
    fn default() -> Self {
        ImpedanceGains {
            kp: 400.0,
            kd: 10.0,
            bound: 0.02,
            damping: 25.0,
        }
    }
}

/// Orientation counterpart; `bound` limits the norm of the rotation-vector error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationGains {
    pub kp: f64,
    pub kd: f64,
    pub bound: f64,
    pub damping: f64,
}

impl Default for RotationGains {
    fn default() -> Self {
        RotationGains {
            kp: 2.0,
            kd: 0.05,
            bound: 0.3,
            damping: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: Vec3,
    pub velocity: Vec3,
}

/// `e = p − p_ref`, clamped to `|e_i| ≤ Δ`.
pub fn bounded_error(position: &Vec3, target: &Vec3, bound: f64) -> Vec3 {
    (position - target).map(|e| e.clamp(-bound, bound))
}

/// `F = k_p·e + k_d·ė` with the bounded error.
pub fn impedance_force(position: &Vec3, target: &Vec3, velocity: &Vec3, gains: &ImpedanceGains) -> Vec3 {
    bounded_error(position, target, gains.bound) * gains.kp + velocity * gains.kd
}

/// One 100 Hz substep toward a fixed target. Returns the impedance force and
/// the integrated state. Contacts are resolved by the caller.
pub fn impedance_substep(
    target: &Vec3,
    state: &KinematicState,
    gains: &ImpedanceGains,
    dt: f64,
) -> (Vec3, KinematicState) {
    let force = impedance_force(&state.position, target, &state.velocity, gains);
    let velocity = -force / gains.damping;
    (
        force,
        KinematicState {
            position: state.position + velocity * dt,
            velocity,
        },
    )
}

/// Rotation-vector error of `q` relative to `target`, in the world frame.
pub fn rotation_error(q: &UnitQuaternion<f64>, target: &UnitQuaternion<f64>) -> Vec3 {
    (q * target.inverse()).scaled_axis()
}

/// Orientation substep; returns the new orientation and angular velocity.
pub fn rotation_substep(
    target: &UnitQuaternion<f64>,
    q: &UnitQuaternion<f64>,
    omega: &Vec3,
    gains: &RotationGains,
    dt: f64,
) -> (UnitQuaternion<f64>, Vec3) {
    let mut e = rotation_error(q, target);
    let n = e.norm();
    if n > gains.bound {
        e *= gains.bound / n;
    }
    let torque = e * gains.kp + omega * gains.kd;
    let omega = -torque / gains.damping;
    (UnitQuaternion::from_scaled_axis(omega * dt) * q, omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_error_zero_force() {
        let f = impedance_force(&Vec3::zeros(), &Vec3::zeros(), &Vec3::zeros(), &ImpedanceGains::default());
        assert_eq!(f, Vec3::zeros());
    }

    #[test]
    fn force_from_error_and_rate() {
        let gains = ImpedanceGains {
            kp: 200.0,
            kd: 10.0,
            bound: 0.02,
            damping: 25.0,
        };
        let f = impedance_force(&Vec3::new(0.01, 0.0, 0.0), &Vec3::zeros(), &Vec3::new(0.05, 0.0, 0.0), &gains);
        assert!((f - Vec3::new(2.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn error_is_clamped_before_gain() {
        let gains = ImpedanceGains {
            kp: 200.0,
            kd: 0.0,
            bound: 0.02,
            damping: 25.0,
        };
        let f = impedance_force(&Vec3::new(0.05, 0.0, 0.0), &Vec3::zeros(), &Vec3::zeros(), &gains);
        assert!((f - Vec3::new(4.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn substeps_converge_to_target() {
        let gains = ImpedanceGains::default();
        let target = Vec3::new(0.01, -0.005, 0.003);
        let mut s = KinematicState::default();
        for _ in 0..200 {
            s = impedance_substep(&target, &s, &gains, 0.01).1;
        }
        assert!((s.position - target).norm() < 1e-6);
    }

    #[test]
    fn rotation_converges() {
        let gains = RotationGains::default();
        let target = UnitQuaternion::from_euler_angles(0.1, -0.05, 0.2);
        let mut q = UnitQuaternion::identity();
        let mut w = Vec3::zeros();
        for _ in 0..300 {
            (q, w) = rotation_substep(&target, &q, &w, &gains, 0.01);
        }
        assert!(q.angle_to(&target) < 1e-6);
    }
}

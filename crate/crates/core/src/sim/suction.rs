//! Vacuum seal model for a single suction cup.

use nalgebra::{UnitQuaternion, Vector2};
use serde::{Deserialize, Serialize};

use super::scene::BoxBody;
use super::types::GripperState;
use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuctionConfig {
    pub cup_radius: f64,
    pub tilt_max_deg: f64,
    pub seal_threshold: f64,
    /// Time for the pressure to ramp from the threshold to full vacuum (s).
    pub ramp_time: f64,
    /// Maximum gap between cup tip and surface that still counts as touching (m).
    pub contact_tol: f64,
    /// Pull a fully rigid, fully evacuated seal holds (N).
    pub hold_force: f64,
    /// Per-step detach probability while lifting, scaled by `1 − rigidity`.
    pub detach_rate: f64,
}

impl Default for SuctionConfig {
    fn default() -> Self {
        SuctionConfig {
            cup_radius: 0.015,
            tilt_max_deg: 15.0,
            seal_threshold: 0.5,
            ramp_time: 0.3,
            contact_tol: 0.001,
            hold_force: 30.0,
            detach_rate: 0.02,
        }
    }
}

impl SuctionConfig {
    /// Pressure after `dt` seconds of an established seal ramp starting at `p`.
    pub fn ramp(&self, p: f64, dt: f64) -> f64 {
        (p + (1.0 - self.seal_threshold) * dt / self.ramp_time).min(1.0)
    }
}

/// Individual seal conditions, kept separate for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealCheck {
    pub on_face: bool,
    pub defect_free: bool,
    pub tilt_ok: bool,
    pub in_contact: bool,
}

impl SealCheck {
    pub fn ok(&self) -> bool {
        self.on_face && self.defect_free && self.tilt_ok && self.in_contact
    }
}

/// Angle between the cup axis and the (vertical) top-face normal, in degrees.
pub fn cup_tilt_deg(cup_rot: &UnitQuaternion<f64>) -> f64 {
    let axis = cup_rot * Vec3::z();
    axis.z.clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn seal_check(
    cup_pos: &Vec3,
    cup_rot: &UnitQuaternion<f64>,
    in_contact: bool,
    body: &BoxBody,
    cfg: &SuctionConfig,
) -> SealCheck {
    let local = body.to_local(cup_pos);
    let he = body.half_extents();
    let r = cfg.cup_radius;
    let on_face = local.x.abs() <= he.x - r && local.y.abs() <= he.y - r;
    let defect_free = body
        .footprint_cells(Vector2::new(local.x, local.y), r)
        .iter()
        .all(|(_, _, c)| !c.blocks_seal());
    SealCheck {
        on_face,
        defect_free,
        tilt_ok: cup_tilt_deg(cup_rot) < cfg.tilt_max_deg,
        in_contact,
    }
}

/// Evaluates an activation command. A successful seal reports the pressure
/// reached one 10 ms substep into the ramp.
pub fn suction_attempt(
    cup_pos: &Vec3,
    cup_rot: &UnitQuaternion<f64>,
    in_contact: bool,
    body: &BoxBody,
    cfg: &SuctionConfig,
) -> GripperState {
    if seal_check(cup_pos, cup_rot, in_contact, body, cfg).ok() {
        GripperState {
            pressure: cfg.ramp(cfg.seal_threshold, 0.01),
            gripped: true,
        }
    } else {
        GripperState {
            pressure: 0.0,
            gripped: false,
        }
    }
}

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{RelativePose, Vec3};
use crate::sensing::{DepthImage, VoxelGrid};
use crate::{Error, Result};

pub const ACTION_DIM: usize = 7;
pub const PROPRIO_DIM: usize = 27;

/// Decoded gripper command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GripCommand {
    Release,
    Inactive,
    Activate,
}

/// Normalized action: every component lives in `[−1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dpos: Vec3,
    pub drot: Vec3,
    pub grip: f64,
}

impl Action {
    pub fn zero() -> Self {
        Action::default()
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != ACTION_DIM {
            return Err(Error::ShapeMismatch {
                expected: vec![ACTION_DIM],
                got: vec![v.len()],
            });
        }
        Ok(Action {
            dpos: Vec3::new(v[0], v[1], v[2]),
            drot: Vec3::new(v[3], v[4], v[5]),
            grip: v[6],
        })
    }

    pub fn to_array(&self) -> [f64; ACTION_DIM] {
        [
            self.dpos.x, self.dpos.y, self.dpos.z, self.drot.x, self.drot.y, self.drot.z, self.grip,
        ]
    }

    pub fn clamped(&self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Action {
            dpos: self.dpos.map(c),
            drot: self.drot.map(c),
            grip: c(self.grip),
        }
    }

    /// Thresholds at ±0.5.
    pub fn grip_command(&self) -> GripCommand {
        if self.grip > 0.5 {
            GripCommand::Activate
        } else if self.grip < -0.5 {
            GripCommand::Release
        } else {
            GripCommand::Inactive
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Action) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct GripperState {
    /// 0 = ambient, 1 = full vacuum.
    pub pressure: f64,
    pub gripped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

/// Everything the policy sees at one control tick. Frame quantities are in
/// the start-relative frame; images and grids are in the end-effector frame.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub rel_pose: RelativePose,
    pub twist: Twist,
    pub force: Vec3,
    pub torque: Vec3,
    pub gripper: GripperState,
    pub prev_action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Arc<[DepthImage; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxels: Option<Arc<VoxelGrid>>,
}

impl Observation {
    /// `[pos 3, mrp 3, lin vel 3, ang vel 3, force 3, torque 3, pressure, gripped, prev action 7]`.
    pub fn proprio(&self) -> [f64; PROPRIO_DIM] {
        let mut out = [0.0; PROPRIO_DIM];
        let p = &self.rel_pose.position;
        let o = &self.rel_pose.orientation.sigma;
        let vecs = [p, o, &self.twist.linear, &self.twist.angular, &self.force, &self.torque];
        for (i, v) in vecs.iter().enumerate() {
            out[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
        }
        out[18] = self.gripper.pressure;
        out[19] = if self.gripper.gripped { 1.0 } else { 0.0 };
        out[20..].copy_from_slice(&self.prev_action.to_array());
        out
    }

    /// Same observation without images or grids.
    pub fn without_sensors(&self) -> Observation {
        Observation {
            depth: None,
            voxels: None,
            ..self.clone()
        }
    }
}

/// Per-step reward terms. `total = goal − step − pose − action + suction`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub goal: f64,
    pub step: f64,
    pub pose: f64,
    pub action: f64,
    pub suction: f64,
    pub total: f64,
}

use serde::{Deserialize, Serialize};

use super::types::{Action, RewardBreakdown};
use crate::geometry::RelativePose;

/// Reward coefficients. Only the goal bonus is fixed by the task definition;
/// the shaping terms are declared choices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub goal: f64,
    pub c_step: f64,
    pub c_pose: f64,
    pub c_rot: f64,
    pub pos_tol: f64,
    pub rot_tol: f64,
    pub c_act: f64,
    pub c_grip: f64,
    pub c_waste: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            goal: 100.0,
            c_step: 0.1,
            c_pose: 2.0,
            c_rot: 1.0,
            pos_tol: 0.05,
            rot_tol: 0.2,
            c_act: 0.05,
            c_grip: 0.5,
            c_waste: 1.0,
        }
    }
}

/// State summary the reward depends on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardInputs {
    pub goal_reached: bool,
    pub rel_pose: RelativePose,
    pub gripped: bool,
    /// An activation command this step that did not produce a seal.
    pub failed_activation: bool,
}

pub fn compute_reward(
    s: &RewardInputs,
    a: &Action,
    a_prev: &Action,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let goal = if s.goal_reached { cfg.goal } else { 0.0 };
    let step = cfg.c_step;
    let pose = cfg.c_pose * (s.rel_pose.position.norm() - cfg.pos_tol).max(0.0)
        + cfg.c_rot * (s.rel_pose.orientation.norm() - cfg.rot_tol).max(0.0);
    let action = cfg.c_act * (a.norm() + a.distance(a_prev));
    let mut suction = 0.0;
    if s.gripped {
        suction += cfg.c_grip;
    }
    if s.failed_activation {
        suction -= cfg.c_waste;
    }
    RewardBreakdown {
        goal,
        step,
        pose,
        action,
        suction,
        total: goal - step - pose - action + suction,
    }
}

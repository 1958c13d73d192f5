//! Behavior tree: descend until the cup feels the box, try to seal, lift
//! while the seal holds, otherwise back off, shift sideways and retry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::harness::Policy;
use crate::sim::{Action, Observation};
use crate::{Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BtConfig {
    /// Downward force that counts as touching the box (N).
    pub force_trigger: f64,
    /// Radius of the random sideways offset before a retry (m).
    pub reposition_radius: f64,
    /// Height above the contact point to back off to before moving sideways (m).
    pub backoff: f64,
    /// Start-relative height at which a held box counts as picked (m).
    pub goal_height: f64,
    /// Position step of a unit action (m).
    pub step: f64,
    /// Downward push while sealing, in action units.
    pub press: f64,
}

impl Default for BtConfig {
    fn default() -> Self {
        BtConfig {
            force_trigger: 5.0,
            reposition_radius: 0.02,
            backoff: 0.01,
            goal_height: 0.01,
            step: 0.005,
            press: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum BtPhase {
    Descend,
    /// Suction was commanded on the previous tick.
    Grasp,
    Ascend,
    Reposition { target: [f64; 2], until_z: f64 },
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BtState {
    pub phase: BtPhase,
    pub retry_count: u32,
    pub rng: ChaCha8Rng,
}

impl BtState {
    pub fn new(seed: u64) -> Self {
        BtState {
            phase: BtPhase::Descend,
            retry_count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn action(dpos: Vec3, grip: f64) -> Action {
    Action {
        dpos: dpos.map(|v| v.clamp(-1.0, 1.0)),
        drot: Vec3::zeros(),
        grip,
    }
}

fn sample_disc<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let th = rng.random_range(0.0..std::f64::consts::TAU);
    [r * th.cos(), r * th.sin()]
}

fn start_reposition(obs: &Observation, bt: &mut BtState, cfg: &BtConfig) -> BtPhase {
    bt.retry_count += 1;
    let p = obs.rel_pose.position;
    let [dx, dy] = sample_disc(&mut bt.rng, cfg.reposition_radius);
    BtPhase::Reposition {
        target: [p.x + dx, p.y + dy],
        until_z: p.z + cfg.backoff,
    }
}

/// One tick of the tree. Returns the action and the successor state.
pub fn bt_policy(obs: &Observation, bt: &BtState, cfg: &BtConfig) -> (Action, BtState) {
    let mut next = bt.clone();
    let a = bt_tick(obs, &mut next, cfg);
    (a, next)
}

fn bt_tick(obs: &Observation, bt: &mut BtState, cfg: &BtConfig) -> Action {
    let p = obs.rel_pose.position;
    let gripped = obs.gripper.gripped;
    // Resolve the phase for this observation first, then act on it.
    bt.phase = match bt.phase {
        BtPhase::Grasp if gripped => BtPhase::Ascend,
        BtPhase::Grasp => start_reposition(obs, bt, cfg),
        BtPhase::Ascend | BtPhase::Done if !gripped => start_reposition(obs, bt, cfg),
        BtPhase::Ascend if p.z >= cfg.goal_height => BtPhase::Done,
        BtPhase::Descend if gripped => BtPhase::Ascend,
        BtPhase::Descend if obs.force.z < -cfg.force_trigger => BtPhase::Grasp,
        BtPhase::Reposition { target, until_z } => {
            let close = (target[0] - p.x).hypot(target[1] - p.y) < 0.5e-3;
            if close && p.z >= until_z {
                BtPhase::Descend
            } else {
                BtPhase::Reposition { target, until_z }
            }
        }
        phase => phase,
    };
    match bt.phase {
        BtPhase::Descend => action(Vec3::new(0.0, 0.0, -1.0), 0.0),
        BtPhase::Grasp => action(Vec3::new(0.0, 0.0, -cfg.press), 1.0),
        BtPhase::Ascend => action(Vec3::new(0.0, 0.0, 1.0), 0.0),
        BtPhase::Done => action(Vec3::zeros(), 0.0),
        BtPhase::Reposition { target, until_z } => {
            if p.z < until_z {
                action(Vec3::new(0.0, 0.0, 1.0), 0.0)
            } else {
                let d = Vec3::new(target[0] - p.x, target[1] - p.y, 0.0) / cfg.step;
                action(d, 0.0)
            }
        }
    }
}

/// The tree as an evaluable policy; each trial reseeds the retry offsets.
#[derive(Clone, Debug)]
pub struct BtPolicy {
    pub cfg: BtConfig,
    pub state: BtState,
}

impl BtPolicy {
    pub fn new(cfg: BtConfig) -> Self {
        BtPolicy {
            cfg,
            state: BtState::new(0),
        }
    }
}

impl Default for BtPolicy {
    fn default() -> Self {
        BtPolicy::new(BtConfig::default())
    }
}

impl Policy for BtPolicy {
    fn id(&self) -> String {
        "bt".into()
    }

    fn reset(&mut self, seed: u64) {
        self.state = BtState::new(seed ^ 0xB7B7_0000);
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        Ok(bt_tick(obs, &mut self.state, &self.cfg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::GripCommand;

    #[test]
    fn fresh_state_descends() {
        let (a, s) = bt_policy(&Observation::default(), &BtState::new(0), &BtConfig::default());
        assert_eq!(a.to_array(), [0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(a.grip_command(), GripCommand::Inactive);
        assert_eq!(s.phase, BtPhase::Descend);
    }

    #[test]
    fn contact_force_triggers_suction() {
        let mut obs = Observation {
            force: Vec3::new(0.0, 0.0, -6.0),
            ..Observation::default()
        };
        let (a, s) = bt_policy(&obs, &BtState::new(0), &BtConfig::default());
        assert_eq!(a.grip_command(), GripCommand::Activate);
        assert_eq!(s.phase, BtPhase::Grasp);
        obs.force.z = -4.0;
        let (a, _) = bt_policy(&obs, &BtState::new(0), &BtConfig::default());
        assert_eq!(a.grip_command(), GripCommand::Inactive);
    }

    #[test]
    fn held_above_goal_height_is_done() {
        let mut obs = Observation::default();
        obs.gripper.gripped = true;
        obs.rel_pose.position.z = 0.012;
        let mut s = BtState::new(0);
        s.phase = BtPhase::Ascend;
        let (_, s) = bt_policy(&obs, &s, &BtConfig::default());
        assert_eq!(s.phase, BtPhase::Done);
    }

    #[test]
    fn failed_seal_repositions_within_disc() {
        let cfg = BtConfig::default();
        let mut obs = Observation::default();
        obs.rel_pose.position = Vec3::new(0.003, -0.002, -0.02);
        for seed in 0..50 {
            let mut s = BtState::new(seed);
            s.phase = BtPhase::Grasp;
            let (a, s) = bt_policy(&obs, &s, &cfg);
            assert_eq!(s.retry_count, 1);
            let BtPhase::Reposition { target, until_z } = s.phase else {
                panic!("expected reposition, got {:?}", s.phase);
            };
            assert!((target[0] - 0.003).hypot(target[1] + 0.002) <= cfg.reposition_radius);
            assert!((until_z - (-0.01)).abs() < 1e-12);
            // Backs off upward before moving sideways.
            assert_eq!(a.to_array()[..3], [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn actions_stay_in_range() {
        let cfg = BtConfig::default();
        let mut s = BtState::new(1);
        s.phase = BtPhase::Reposition {
            target: [0.5, -0.5],
            until_z: -1.0,
        };
        let (a, _) = bt_policy(&Observation::default(), &s, &cfg);
        assert!(a.to_array().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(a.dpos.x, 1.0);
    }
}

use std::sync::Arc;

use nalgebra::{Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::boxes::ScenarioFile;
use super::impedance::{bounded_error, impedance_substep, rotation_substep, ImpedanceGains, KinematicState, RotationGains};
use super::reward::{compute_reward, RewardConfig, RewardInputs};
use super::scene::{BoxBody, Scene};
use super::suction::{seal_check, suction_attempt, SealCheck, SuctionConfig};
use super::types::{Action, GripCommand, GripperState, Observation, RewardBreakdown, Twist};
use crate::geometry::{Mrp, RelativePose, Vec3};
use crate::sensing::{fuse_point_clouds, render_depth, voxelize, CameraRig, DepthImage, GridSpec};
use crate::{Error, Result};

const GRAVITY: f64 = 9.81;

/// Which high-dimensional observations the environment renders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorMode {
    #[default]
    None,
    Depth,
    Voxel,
    DepthAndVoxel,
}

impl SensorMode {
    pub fn depth(self) -> bool {
        matches!(self, SensorMode::Depth | SensorMode::DepthAndVoxel)
    }

    pub fn voxel(self) -> bool {
        matches!(self, SensorMode::Voxel | SensorMode::DepthAndVoxel)
    }

    pub fn union(self, other: SensorMode) -> SensorMode {
        match (self.depth() || other.depth(), self.voxel() || other.voxel()) {
            (true, true) => SensorMode::DepthAndVoxel,
            (true, false) => SensorMode::Depth,
            (false, true) => SensorMode::Voxel,
            (false, false) => SensorMode::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Impedance-layer period (s).
    pub dt: f64,
    /// Impedance substeps per policy step.
    pub substeps: usize,
    pub max_steps: usize,
    /// Meters per unit of normalized position action.
    pub dpos_scale: f64,
    /// MRP per unit of normalized rotation action.
    pub drot_scale: f64,
    pub gains: ImpedanceGains,
    pub rot_gains: RotationGains,
    pub suction: SuctionConfig,
    pub reward: RewardConfig,
    /// Std of the force-sensor noise (N).
    pub force_noise: f64,
    pub torque_noise: f64,
    /// Std of per-pixel depth noise (m); zero disables it.
    pub depth_noise: f64,
    /// Height of the start pose above the box's top face (m).
    pub start_clearance: f64,
    pub start_xy_noise: f64,
    pub start_yaw_noise_deg: f64,
    pub box_xy_noise: f64,
    pub box_yaw_noise_deg: f64,
    /// Lift above the start pose that completes the task (m).
    pub goal_height: f64,
    pub sensors: SensorMode,
    pub grid: GridSpec,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.01,
            substeps: 10,
            max_steps: 100,
            dpos_scale: 0.005,
            drot_scale: 0.05,
            gains: ImpedanceGains::default(),
            rot_gains: RotationGains::default(),
            suction: SuctionConfig::default(),
            reward: RewardConfig::default(),
            force_noise: 0.1,
            torque_noise: 0.01,
            depth_noise: 0.001,
            start_clearance: 0.025,
            start_xy_noise: 0.01,
            start_yaw_noise_deg: 10.0,
            box_xy_noise: 0.005,
            box_yaw_noise_deg: 3.0,
            goal_height: 0.01,
            sensors: SensorMode::None,
            grid: GridSpec::default(),
        }
    }
}

impl EnvConfig {
    /// Simulated seconds per policy step.
    pub fn step_time(&self) -> f64 {
        self.dt * self.substeps as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EndEffector {
    pos: Vec3,
    rot: UnitQuaternion<f64>,
    vel: Vec3,
    omega: Vec3,
    target_pos: Vec3,
    target_rot: UnitQuaternion<f64>,
}

/// Complete mutable state of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub scenario: String,
    pub box_index: usize,
    pub seed: u64,
    pub scene: Scene,
    pub start_pos: Vec3,
    pub start_rot: UnitQuaternion<f64>,
    ee: EndEffector,
    pub gripper: GripperState,
    grip_offset: Option<Vec3>,
    pub prev_action: Action,
    pub steps: usize,
    pub finished: bool,
    pub in_contact: bool,
    force: Vec3,
    torque: Vec3,
}

impl EpisodeState {
    pub fn body(&self) -> &BoxBody {
        self.scene.body.as_ref().expect("episode scene has a box")
    }

    pub fn ee_position(&self) -> Vec3 {
        self.ee.pos
    }

    pub fn ee_rotation(&self) -> UnitQuaternion<f64> {
        self.ee.rot
    }

    pub fn relative_pose(&self) -> RelativePose {
        RelativePose::between(&self.start_pos, &self.start_rot, &self.ee.pos, &self.ee.rot)
    }
}

/// Diagnostics for one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Seal conditions evaluated for an activation command this step.
    pub seal: Option<SealCheck>,
    pub detached: bool,
    pub in_contact: bool,
    pub box_lifted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: RewardBreakdown,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Kinematic vacuum-grasp environment with a 10 Hz policy interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuctionEnv {
    cfg: EnvConfig,
    scenarios: ScenarioFile,
    rig: CameraRig,
    rng: ChaCha8Rng,
    episode: Option<EpisodeState>,
}

impl SuctionEnv {
    pub fn new(cfg: EnvConfig, scenarios: ScenarioFile) -> Result<Self> {
        scenarios.validate()?;
        Ok(SuctionEnv {
            cfg,
            scenarios,
            rig: CameraRig::default(),
            rng: ChaCha8Rng::seed_from_u64(0),
            episode: None,
        })
    }

    pub fn builtin(cfg: EnvConfig) -> Self {
        Self::new(cfg, ScenarioFile::builtin()).expect("built-in scenarios are valid")
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn set_sensors(&mut self, sensors: SensorMode) {
        self.cfg.sensors = sensors;
    }

    pub fn scenarios(&self) -> &ScenarioFile {
        &self.scenarios
    }

    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn episode(&self) -> Option<&EpisodeState> {
        self.episode.as_ref()
    }

    /// Starts an episode on a box drawn from `scenario`. Everything random in
    /// the episode derives from `seed`.
    pub fn reset(&mut self, scenario: &str, seed: u64) -> Result<Observation> {
        let boxes = self.scenarios.get(scenario)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let box_index = rng.random_range(0..boxes.len());
        let spec = boxes[box_index].clone();
        let c = &self.cfg;

        let bx = spec.position[0] + rng.random_range(-c.box_xy_noise..=c.box_xy_noise);
        let by = spec.position[1] + rng.random_range(-c.box_xy_noise..=c.box_xy_noise);
        let yaw = (spec.yaw_deg + rng.random_range(-c.box_yaw_noise_deg..=c.box_yaw_noise_deg)).to_radians();
        let tilt_deg = spec.start_tilt_deg;
        let body = BoxBody::new(spec, [bx, by], yaw);

        let sx = bx + rng.random_range(-c.start_xy_noise..=c.start_xy_noise);
        let sy = by + rng.random_range(-c.start_xy_noise..=c.start_xy_noise);
        let start_pos = Vec3::new(sx, sy, body.top_z() + c.start_clearance);
        let start_yaw = rng
            .random_range(-c.start_yaw_noise_deg..=c.start_yaw_noise_deg)
            .to_radians();
        let tilt_axis_angle = rng.random_range(0.0..std::f64::consts::TAU);
        let mut start_rot = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), start_yaw);
        if tilt_deg != 0.0 {
            let axis = Unit::new_normalize(Vec3::new(tilt_axis_angle.cos(), tilt_axis_angle.sin(), 0.0));
            start_rot = UnitQuaternion::from_axis_angle(&axis, tilt_deg.to_radians()) * start_rot;
        }

        self.rng = rng;
        let episode = EpisodeState {
            scenario: scenario.to_string(),
            box_index,
            seed,
            scene: Scene { body: Some(body) },
            start_pos,
            start_rot,
            ee: EndEffector {
                pos: start_pos,
                rot: start_rot,
                vel: Vec3::zeros(),
                omega: Vec3::zeros(),
                target_pos: start_pos,
                target_rot: start_rot,
            },
            gripper: GripperState::default(),
            grip_offset: None,
            prev_action: Action::zero(),
            steps: 0,
            finished: false,
            in_contact: false,
            force: Vec3::zeros(),
            torque: Vec3::zeros(),
        };
        self.episode = Some(episode);
        let (force, torque) = self.noisy_wrench(Vec3::zeros(), Vec3::zeros());
        let ep = self.episode.as_mut().expect("just set");
        ep.force = force;
        ep.torque = torque;
        let mut obs = self.observe();
        obs.rel_pose = RelativePose::default();
        Ok(obs)
    }

    fn noisy_wrench(&mut self, force: Vec3, torque: Vec3) -> (Vec3, Vec3) {
        let fnoise = Normal::new(0.0, self.cfg.force_noise.max(0.0)).expect("finite std");
        let tnoise = Normal::new(0.0, self.cfg.torque_noise.max(0.0)).expect("finite std");
        let f = force + Vec3::from_fn(|_, _| fnoise.sample(&mut self.rng));
        let t = torque + Vec3::from_fn(|_, _| tnoise.sample(&mut self.rng));
        (f, t)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let Some(ep) = self.episode.as_ref() else {
            return Err(Error::NoEpisode);
        };
        if ep.finished {
            return Err(Error::EpisodeFinished);
        }
        let cfg = self.cfg.clone();
        let a = action.clamped();
        let mut ep = self.episode.take().expect("checked above");
        let mut info = StepInfo {
            seal: None,
            detached: false,
            in_contact: ep.in_contact,
            box_lifted: false,
        };

        // Suction command, evaluated on the state the policy observed.
        let mut failed_activation = false;
        match a.grip_command() {
            GripCommand::Activate if !ep.gripper.gripped => {
                let body = ep.body();
                info.seal = Some(seal_check(&ep.ee.pos, &ep.ee.rot, ep.in_contact, body, &cfg.suction));
                let state = suction_attempt(&ep.ee.pos, &ep.ee.rot, ep.in_contact, body, &cfg.suction);
                if state.gripped {
                    ep.grip_offset = Some(body.center - ep.ee.pos);
                    ep.gripper = state;
                } else {
                    failed_activation = true;
                }
            }
            GripCommand::Release if ep.gripper.gripped => drop_box(&mut ep),
            _ => {}
        }

        // New impedance targets, deltas expressed in the start frame.
        let dp = ep.start_rot * (a.dpos * cfg.dpos_scale);
        ep.ee.target_pos += dp;
        let e = bounded_error(&ep.ee.target_pos, &ep.ee.pos, cfg.gains.bound);
        ep.ee.target_pos = ep.ee.pos + e;
        let delta = Mrp { sigma: a.drot * cfg.drot_scale }.to_quaternion();
        let delta_world = ep.start_rot * delta * ep.start_rot.inverse();
        let mut target_rot = delta_world * ep.ee.target_rot;
        let off = ep.ee.rot.angle_to(&target_rot);
        if off > cfg.rot_gains.bound {
            target_rot = ep
                .ee
                .rot
                .try_slerp(&target_rot, cfg.rot_gains.bound / off, 1e-12)
                .unwrap_or(ep.ee.rot);
        }
        ep.ee.target_rot = target_rot;

        let vz_start = ep.ee.vel.z;
        let mut contact_force = 0.0;
        let mut in_contact = false;
        for _ in 0..cfg.substeps {
            let state = KinematicState {
                position: ep.ee.pos,
                velocity: ep.ee.vel,
            };
            let (force, next) = impedance_substep(&ep.ee.target_pos, &state, &cfg.gains, cfg.dt);
            let commanded = -force;
            let mut pos = next.position;
            let support = match ep.grip_offset {
                Some(off) if ep.gripper.gripped => {
                    // The held box cannot go through the table.
                    Some(ep.body().rest_z() - off.z)
                }
                _ => Some(
                    ep.body()
                        .support_height([pos.x, pos.y], cfg.suction.cup_radius)
                        .unwrap_or(0.0),
                ),
            };
            in_contact = false;
            contact_force = 0.0;
            if let Some(s) = support {
                if pos.z <= s {
                    pos.z = s;
                    contact_force = (-commanded.z).max(0.0);
                    in_contact = true;
                } else if pos.z - s <= cfg.suction.contact_tol {
                    in_contact = true;
                }
            }
            ep.ee.vel = (pos - ep.ee.pos) / cfg.dt;
            ep.ee.pos = pos;
            let (rot, omega) = rotation_substep(&ep.ee.target_rot, &ep.ee.rot, &ep.ee.omega, &cfg.rot_gains, cfg.dt);
            ep.ee.rot = rot;
            ep.ee.omega = omega;

            if ep.gripper.gripped {
                if let Some(off) = ep.grip_offset {
                    let body = ep.scene.body.as_mut().expect("episode has a box");
                    body.center = ep.ee.pos + off;
                }
                ep.gripper.pressure = cfg.suction.ramp(ep.gripper.pressure, cfg.dt);
            }
        }
        ep.in_contact = in_contact;
        info.in_contact = in_contact;

        // Load on the seal while the box hangs from the cup.
        let mut force = Vec3::new(0.0, 0.0, -contact_force);
        let mut torque = Vec3::zeros();
        if ep.gripper.gripped && ep.body().is_lifted() {
            let body = ep.body();
            let mass = body.spec.mass;
            let accel = ((ep.ee.vel.z - vz_start) / cfg.step_time()).max(0.0);
            let pull = mass * (GRAVITY + accel);
            let strength = ep.gripper.pressure * cfg.suction.hold_force * body.spec.rigidity;
            let p_detach = (1.0 - body.spec.rigidity) * cfg.suction.detach_rate;
            let roll: f64 = self.rng.random();
            if pull > strength || roll < p_detach {
                drop_box(&mut ep);
                info.detached = true;
            } else {
                let weight = Vec3::new(0.0, 0.0, -mass * GRAVITY);
                let lever = body.center - ep.ee.pos;
                force += weight;
                torque += Vec3::new(lever.x, lever.y, 0.0).cross(&weight);
            }
        }
        info.box_lifted = ep.gripper.gripped && ep.body().is_lifted();

        let rel = ep.relative_pose();
        let goal = info.box_lifted && rel.position.z >= cfg.goal_height;
        let reward = compute_reward(
            &RewardInputs {
                goal_reached: goal,
                rel_pose: rel,
                gripped: ep.gripper.gripped,
                failed_activation,
            },
            &a,
            &ep.prev_action,
            &cfg.reward,
        );
        ep.prev_action = a;
        ep.steps += 1;
        let terminated = goal;
        let truncated = !terminated && ep.steps >= cfg.max_steps;
        ep.finished = terminated || truncated;
        self.episode = Some(ep);

        let (f, t) = self.noisy_wrench(force, torque);
        let ep = self.episode.as_mut().expect("restored");
        ep.force = f;
        ep.torque = t;
        let obs = self.observe();
        Ok(StepOutcome {
            obs,
            reward,
            terminated,
            truncated,
            info,
        })
    }

    fn observe(&mut self) -> Observation {
        let ep = self.episode.as_ref().expect("observe needs an episode");
        let inv = ep.start_rot.inverse();
        let mut obs = Observation {
            rel_pose: ep.relative_pose(),
            twist: Twist {
                linear: inv * ep.ee.vel,
                angular: inv * ep.ee.omega,
            },
            force: inv * ep.force,
            torque: inv * ep.torque,
            gripper: ep.gripper,
            prev_action: ep.prev_action,
            depth: None,
            voxels: None,
        };
        let sensors = self.cfg.sensors;
        if sensors != SensorMode::None {
            let images = self.render_images();
            if sensors.voxel() {
                let points = fuse_point_clouds(&images[0], &images[1], &self.rig);
                obs.voxels = Some(Arc::new(voxelize(&points, &self.cfg.grid)));
            }
            if sensors.depth() {
                obs.depth = Some(Arc::new(images));
            }
        }
        obs
    }

    /// Renders both wrist cameras for the current end-effector pose.
    pub fn render_images(&mut self) -> [DepthImage; 2] {
        let ep = self.episode.as_ref().expect("render needs an episode");
        let (pos, rot) = (ep.ee.pos, ep.ee.rot);
        let scene = &ep.scene;
        let sigma = self.cfg.depth_noise;
        let rng = &mut self.rng;
        let mut render = |cam| {
            if sigma > 0.0 {
                render_depth(scene, &pos, &rot, cam, Some((&mut *rng, sigma)))
            } else {
                render_depth::<_, ChaCha8Rng>(scene, &pos, &rot, cam, None)
            }
        };
        let d0 = render(&self.rig.cameras[0]);
        let d1 = render(&self.rig.cameras[1]);
        [d0, d1]
    }
}

fn drop_box(ep: &mut EpisodeState) {
    ep.gripper = GripperState::default();
    ep.grip_offset = None;
    let body = ep.scene.body.as_mut().expect("episode has a box");
    // Released boxes settle back onto the table where they are.
    body.center.z = body.rest_z();
}

//! Kinematic box-picking environment.

pub mod boxes;
pub mod env;
pub mod impedance;
pub mod reward;
pub mod scene;
pub mod suction;
pub mod types;

pub use boxes::{BoxSpec, ScenarioFile, SurfaceCell};
pub use env::{EnvConfig, EpisodeState, SensorMode, StepInfo, StepOutcome, SuctionEnv};
pub use impedance::{ImpedanceGains, RotationGains};
pub use reward::{compute_reward, RewardConfig, RewardInputs};
pub use scene::{BoxBody, Scene};
pub use suction::{SealCheck, SuctionConfig};
pub use types::{Action, GripCommand, GripperState, Observation, RewardBreakdown, Twist, ACTION_DIM, PROPRIO_DIM};

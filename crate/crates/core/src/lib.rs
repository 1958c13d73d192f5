//! Simulated suction-gripper box picking: environment, sensing, small neural
//! network toolkit, SAC/RLPD/DRQ trainer, scripted baselines and evaluation.

// Index loops mirror the math in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nets;
pub mod rl;
pub mod sensing;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{Mrp, RelativePose, SymmetryIndex, Vec3};
pub use sensing::{DepthImage, GridSpec, VoxelGrid};
pub use sim::{Action, BoxSpec, GripperState, Observation, RewardBreakdown, SuctionEnv};

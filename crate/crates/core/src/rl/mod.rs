//! Off-policy learning from demonstrations: replay, SAC-style agent,
//! behavior cloning and the training loop.

pub mod agent;
pub mod policy;
pub mod replay;
pub mod trainer;

pub use agent::{
    actor_update, bc_fit, bc_loss, critic_update, temperature_update, ActMode, ActorStats, Agent, AgentParams,
    AgentSpec, BcConfig, CriticStats, LearnerConfig, Modality, ObsBatch, Optimizers, PROPRIO_SCALE,
};
pub use policy::{LearnedPolicy, PolicyFile, POLICY_FILE_VERSION};
pub use replay::{observation_for, symmetric_sample, ReplayBuffers, Transition};
pub use trainer::{episode_seed, MetricRecord, Trainer, TrainerCheckpoint, TrainerConfig, TrainerState, CHECKPOINT_VERSION};

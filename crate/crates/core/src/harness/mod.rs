//! Seeded evaluation, comparison tables, run configuration and persistence.

pub mod compare;
pub mod config;
pub mod eval;
pub mod logs;
pub mod run;

pub use compare::{compare, Comparison};
pub use config::{config_hash, resolve_out_dir, DemoSettings, PolicyKind, RunConfig, OUT_DIR_ENV};
pub use eval::{evaluate, rollout, sample_std, EvalReport, TrialRecord, TIMEOUT_STEPS};
pub use logs::{read_log, render_replay, write_log, LogHeader, StepRecord};
pub use run::{build_policy, load_demos, make_env, run_demos, seed_demos, train, TrainOutcome};

use crate::sim::{Action, Observation, SensorMode};
use crate::Result;

/// Anything that maps observations to actions for one episode at a time.
pub trait Policy {
    fn id(&self) -> String;

    /// Sensors the policy needs rendered.
    fn sensors(&self) -> SensorMode {
        SensorMode::None
    }

    /// Called before every episode with the trial seed.
    fn reset(&mut self, seed: u64);

    fn act(&mut self, obs: &Observation) -> Result<Action>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn sensors(&self) -> SensorMode {
        (**self).sensors()
    }

    fn reset(&mut self, seed: u64) {
        (**self).reset(seed)
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        (**self).act(obs)
    }
}

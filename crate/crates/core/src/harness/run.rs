//! End-to-end run plumbing shared by the command line and the test suites:
//! demonstrations, training, and turning a config into an evaluable policy.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{PolicyKind, RunConfig};
use super::logs::{read_log, LogHeader, StepRecord};
use super::Policy;
use crate::baselines::{generate_demos, BtConfig, BtPolicy, DemoSet, Ensembled};
use crate::rl::{bc_fit, Agent, MetricRecord, PolicyFile, Trainer, Transition, POLICY_FILE_VERSION};
use crate::sim::SuctionEnv;
use crate::{Error, Result};

pub const DEMO_LOG_KIND: &str = "demos";
pub const TRAJECTORY_LOG_KIND: &str = "trajectory";

/// Environment with the config's dynamics and scenario file.
pub fn make_env(cfg: &RunConfig) -> Result<SuctionEnv> {
    SuctionEnv::new(cfg.env.clone(), cfg.scenarios()?)
}

/// Scripted demonstrations rendered with the sensors the configured
/// modality needs.
pub fn generate_run_demos(cfg: &RunConfig, env: &mut SuctionEnv) -> Result<DemoSet> {
    env.set_sensors(cfg.effective_modality()?.sensors());
    let d = &cfg.demos;
    generate_demos(env, &d.scenario, d.n, d.noise, d.seed)
}

pub fn demo_log(cfg: &RunConfig, demos: &DemoSet) -> (LogHeader, Vec<StepRecord>) {
    let header = LogHeader {
        kind: DEMO_LOG_KIND.into(),
        policy_id: "bt".into(),
        scenario: cfg.demos.scenario.clone(),
        config_hash: cfg.hash(),
        seed: cfg.demos.seed,
        episodes: demos.len(),
    };
    let steps = demos
        .episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| ep.iter().enumerate().map(move |(t, tr)| StepRecord::from_transition(e, t, tr)))
        .collect();
    (header, steps)
}

pub fn load_demos(path: &Path) -> Result<Vec<Transition>> {
    let (header, steps) = read_log(path)?;
    if header.kind != DEMO_LOG_KIND {
        return Err(Error::Format(format!(
            "{}: expected a `{DEMO_LOG_KIND}` log, found `{}`",
            path.display(),
            header.kind
        )));
    }
    if steps.is_empty() {
        return Err(Error::EmptyDemos);
    }
    Ok(steps.iter().map(StepRecord::transition).collect())
}

/// Demo transitions for a run: the configured file, or freshly generated.
pub fn run_demos(cfg: &RunConfig, env: &mut SuctionEnv) -> Result<Vec<Transition>> {
    match &cfg.demos.path {
        Some(p) => load_demos(p),
        None => Ok(generate_run_demos(cfg, env)?.transitions()),
    }
}

/// Demo transitions for training seed `seed`. Generated demos are drawn with
/// `demos.seed + seed`, so every training seed gets its own demonstration set.
pub fn seed_demos(cfg: &RunConfig, env: &mut SuctionEnv, seed: u64) -> Result<Vec<Transition>> {
    let mut c = cfg.clone();
    c.demos.seed = cfg.demos.seed.wrapping_add(seed);
    run_demos(&c, env)
}

pub struct TrainOutcome {
    pub policy: PolicyFile,
    /// Per-episode training metrics; empty for behavior cloning.
    pub metrics: Vec<MetricRecord>,
    pub trainer: Option<Trainer>,
}

/// Trains the configured learner for one seed.
pub fn train(cfg: &RunConfig, seed: u64, demos: Vec<Transition>) -> Result<TrainOutcome> {
    match cfg.policy {
        PolicyKind::Sac => {
            let mut trainer = Trainer::new(cfg.trainer_config()?, make_env(cfg)?, demos, seed)?;
            trainer.run(None)?;
            Ok(finish(cfg, trainer))
        }
        PolicyKind::Bc => Ok(TrainOutcome {
            policy: fit_bc(cfg, seed, demos)?,
            metrics: Vec::new(),
            trainer: None,
        }),
        PolicyKind::Bt => Err(Error::Config("the behavior tree is scripted and has nothing to train".into())),
    }
}

/// Wraps a finished (or resumed) trainer's results.
pub fn finish(cfg: &RunConfig, trainer: Trainer) -> TrainOutcome {
    TrainOutcome {
        policy: trainer.policy_file(cfg.policy_id()),
        metrics: trainer.metrics().to_vec(),
        trainer: Some(trainer),
    }
}

pub fn fit_bc(cfg: &RunConfig, seed: u64, demos: Vec<Transition>) -> Result<PolicyFile> {
    let tc = cfg.trainer_config()?;
    let spec = tc.agent_spec()?;
    let agent = Agent::new(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = agent.init(tc.init_temperature, &mut rng);
    let demos: Vec<Transition> = demos
        .into_iter()
        .map(|t| {
            let t = t.for_modality(tc.modality);
            if cfg.symmetry {
                t.canonicalized()
            } else {
                t
            }
        })
        .collect();
    bc_fit(&agent, &mut params, &demos, &cfg.bc, &mut rng)?;
    Ok(PolicyFile {
        version: POLICY_FILE_VERSION,
        policy_id: cfg.policy_id(),
        config_hash: cfg.hash(),
        seed,
        spec,
        symmetry: cfg.symmetry,
        params,
    })
}

/// The evaluable policy for a config: the scripted tree, or a trained
/// network from `file`, optionally with temporal ensembling.
pub fn build_policy(cfg: &RunConfig, file: Option<PolicyFile>) -> Result<Box<dyn Policy>> {
    let base: Box<dyn Policy> = match (cfg.policy, file) {
        (PolicyKind::Bt, _) => Box::new(BtPolicy::new(BtConfig::default())),
        (_, Some(f)) => Box::new(f.into_policy()?),
        (_, None) => return Err(Error::Config("a trained policy file is required".into())),
    };
    Ok(if cfg.ensembling { Box::new(Ensembled::new(base)) } else { base })
}

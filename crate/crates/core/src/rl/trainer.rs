//! Actor–learner loop: one environment step per control tick followed by
//! `utd_ratio` critic updates and one actor/temperature update.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{actor_update, critic_update, ActMode, ActorStats, Agent, AgentParams, AgentSpec, CriticStats, LearnerConfig, Modality, Optimizers};
use super::policy::{PolicyFile, POLICY_FILE_VERSION};
use super::replay::{symmetric_sample, ReplayBuffers, Transition};
use crate::geometry::{canonicalize, decanonicalize_action, SymmetryIndex};
use crate::harness::config_hash;
use crate::nets::EncoderSpec;
use crate::sim::{Observation, SuctionEnv};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub modality: Modality,
    /// Encoder override; the modality's desk-scale trunk when absent.
    pub encoder: Option<EncoderSpec>,
    pub hidden: Vec<usize>,
    pub layer_norm: bool,
    pub gamma: f64,
    pub utd_ratio: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temp_lr: f64,
    pub target_tau: f64,
    pub target_entropy: f64,
    pub init_temperature: f64,
    pub augmentation: bool,
    pub symmetry: bool,
    pub grad_clip: Option<f64>,
    pub total_env_steps: u64,
    pub online_capacity: usize,
    pub scenario: String,
    /// Updates start once the buffers hold this many transitions.
    pub learning_starts: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let l = LearnerConfig::default();
        TrainerConfig {
            modality: Modality::Voxel,
            encoder: None,
            hidden: vec![128, 128],
            layer_norm: true,
            gamma: l.gamma,
            utd_ratio: 4,
            batch_size: 256,
            actor_lr: l.actor_lr,
            critic_lr: l.critic_lr,
            temp_lr: l.temp_lr,
            target_tau: l.tau,
            target_entropy: l.target_entropy,
            init_temperature: l.init_temperature,
            augmentation: true,
            symmetry: false,
            grad_clip: l.grad_clip,
            total_env_steps: 30_000,
            online_capacity: 100_000,
            scenario: "seen".into(),
            learning_starts: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("temp_lr", self.temp_lr),
            ("target_tau", self.target_tau),
            ("init_temperature", self.init_temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if self.utd_ratio == 0 || self.batch_size == 0 || self.online_capacity == 0 {
            return Err(Error::Config("utd_ratio, batch_size and online_capacity must be ≥ 1".into()));
        }
        if self.symmetry && self.modality == Modality::Depth {
            return Err(Error::Config(
                "symmetry needs a rotatable observation; depth images from the fixed rig are not".into(),
            ));
        }
        self.agent_spec().map(|_| ())
    }

    pub fn learner(&self) -> LearnerConfig {
        LearnerConfig {
            gamma: self.gamma,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            temp_lr: self.temp_lr,
            tau: self.target_tau,
            target_entropy: self.target_entropy,
            init_temperature: self.init_temperature,
            augmentation: self.augmentation && self.modality != Modality::Proprio,
            grad_clip: self.grad_clip,
        }
    }

    pub fn agent_spec(&self) -> Result<AgentSpec> {
        let mut spec = AgentSpec::new(self.modality);
        if self.encoder.is_some() {
            spec.encoder = self.encoder.clone();
        }
        spec.hidden = self.hidden.clone();
        spec.layer_norm = self.layer_norm;
        Agent::new(spec.clone())?;
        Ok(spec)
    }
}

/// One line of the metrics log, written at every episode end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub episode: u64,
    pub episode_len: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub episode_return: f64,
    pub success: bool,
    pub critic_updates: u64,
    pub config_hash: String,
    pub seed: u64,
}

/// Everything that evolves during training, RNG streams included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub env: SuctionEnv,
    pub params: AgentParams,
    pub opt: Optimizers,
    pub buffers: ReplayBuffers,
    pub rng: ChaCha8Rng,
    pub obs: Observation,
    /// Canonical form of `obs` with its rotation, when symmetry is on.
    pub canon_obs: Option<(Observation, SymmetryIndex)>,
    pub env_steps: u64,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub episodes: u64,
    pub successes: u64,
    pub episode_return: f64,
    pub episode_len: usize,
    pub last_critic: CriticStats,
    pub last_actor: ActorStats,
    pub metrics: Vec<MetricRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerCheckpoint {
    pub version: u32,
    pub config: TrainerConfig,
    pub seed: u64,
    pub config_hash: String,
    pub state: TrainerState,
}

impl TrainerCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: TrainerCheckpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        Ok(ck)
    }
}

/// Deterministic, well-mixed episode seed for training episode `j`.
pub fn episode_seed(seed: u64, j: u64) -> u64 {
    let mut z = seed ^ 0x5EED_0000_0000_0000 ^ j.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Trainer {
    cfg: TrainerConfig,
    seed: u64,
    hash: String,
    agent: Agent,
    state: TrainerState,
    dump_dir: Option<PathBuf>,
}

impl Trainer {
    /// `env` supplies the scenarios and dynamics; its sensors are switched to
    /// what the modality needs. Demos are canonicalized when symmetry is on.
    pub fn new(cfg: TrainerConfig, mut env: SuctionEnv, demos: Vec<Transition>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let agent = Agent::new(cfg.agent_spec()?)?;
        env.set_sensors(cfg.modality.sensors());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = agent.init(cfg.init_temperature, &mut rng);
        let demos = demos
            .into_iter()
            .map(|t| {
                let t = t.for_modality(cfg.modality);
                if cfg.symmetry {
                    t.canonicalized()
                } else {
                    t
                }
            })
            .collect();
        let obs = env.reset(&cfg.scenario, episode_seed(seed, 0))?;
        let hash = config_hash(&cfg);
        Ok(Trainer {
            state: TrainerState {
                env,
                params,
                opt: Optimizers::new(&cfg.learner()),
                buffers: ReplayBuffers::new(demos, cfg.online_capacity),
                rng,
                obs,
                canon_obs: None,
                env_steps: 0,
                critic_updates: 0,
                actor_updates: 0,
                episodes: 0,
                successes: 0,
                episode_return: 0.0,
                episode_len: 0,
                last_critic: CriticStats::default(),
                last_actor: ActorStats::default(),
                metrics: Vec::new(),
            },
            cfg,
            seed,
            hash,
            agent,
            dump_dir: None,
        })
    }

    pub fn from_checkpoint(ck: TrainerCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        let agent = Agent::new(ck.config.agent_spec()?)?;
        Ok(Trainer {
            hash: ck.config_hash,
            cfg: ck.config,
            seed: ck.seed,
            agent,
            state: ck.state,
            dump_dir: None,
        })
    }

    /// Directory for the diagnostic dump written when a loss goes non-finite.
    pub fn set_dump_dir(&mut self, dir: impl Into<PathBuf>) {
        self.dump_dir = Some(dir.into());
    }

    /// Actor-only export for evaluation.
    pub fn policy_file(&self, policy_id: impl Into<String>) -> PolicyFile {
        PolicyFile {
            version: POLICY_FILE_VERSION,
            policy_id: policy_id.into(),
            config_hash: self.hash.clone(),
            seed: self.seed,
            spec: self.agent.spec.clone(),
            symmetry: self.cfg.symmetry,
            params: self.state.params.clone(),
        }
    }

    pub fn checkpoint(&self) -> TrainerCheckpoint {
        TrainerCheckpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            seed: self.seed,
            config_hash: self.hash.clone(),
            state: self.state.clone(),
        }
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn params(&self) -> &AgentParams {
        &self.state.params
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn metrics(&self) -> &[MetricRecord] {
        &self.state.metrics
    }

    pub fn env_steps(&self) -> u64 {
        self.state.env_steps
    }

    pub fn critic_updates(&self) -> u64 {
        self.state.critic_updates
    }

    /// Observation as the networks see it (canonicalized when symmetry is on).
    pub fn policy_observation(&self) -> Observation {
        if self.cfg.symmetry {
            match &self.state.canon_obs {
                Some((o, _)) => o.clone(),
                None => canonicalize(&self.state.obs).0,
            }
        } else {
            self.state.obs.clone()
        }
    }

    /// One control tick plus its gradient updates. Returns the metrics
    /// record when an episode ended on this tick.
    pub fn step(&mut self) -> Result<Option<MetricRecord>> {
        match self.step_inner() {
            Err(e @ Error::NonFinite { .. }) => {
                self.write_dump(&e);
                Err(e)
            }
            r => r,
        }
    }

    fn step_inner(&mut self) -> Result<Option<MetricRecord>> {
        let st = &mut self.state;
        let (pobs, k) = if self.cfg.symmetry {
            match st.canon_obs.take() {
                Some(c) => c,
                None => canonicalize(&st.obs),
            }
        } else {
            (st.obs.clone(), Default::default())
        };
        let a_canon = self.agent.act(&st.params, &pobs, ActMode::Sample, &mut st.rng)?;
        let action = decanonicalize_action(&a_canon, k);
        let out = st.env.step(&action)?;
        if self.cfg.symmetry {
            // Each observation is canonicalized once; the stored next
            // observation doubles as the next policy input, so grids are shared.
            let next = canonicalize(&out.obs);
            st.buffers.push(Transition {
                obs: pobs,
                action: a_canon,
                reward: out.reward.total,
                next_obs: next.0.clone(),
                done: out.terminated,
                is_demo: false,
            });
            st.canon_obs = Some(next);
        } else {
            st.buffers.push(Transition {
                obs: pobs,
                action,
                reward: out.reward.total,
                next_obs: out.obs.clone(),
                done: out.terminated,
                is_demo: false,
            });
        }
        st.env_steps += 1;
        st.episode_return += out.reward.total;
        st.episode_len += 1;

        if st.buffers.len() >= self.cfg.learning_starts {
            let learner = self.cfg.learner();
            let mut last_state = None;
            for _ in 0..self.cfg.utd_ratio {
                let batch = symmetric_sample(&st.buffers, self.cfg.batch_size, &mut st.rng)?;
                let (stats, state) = critic_update(&self.agent, &mut st.params, &mut st.opt, &learner, &batch, &mut st.rng)?;
                st.last_critic = stats;
                st.critic_updates += 1;
                last_state = Some(state);
            }
            if let Some(state) = last_state {
                st.last_actor = actor_update(&self.agent, &mut st.params, &mut st.opt, &learner, &state, &mut st.rng)?;
                st.actor_updates += 1;
            }
        }

        if out.terminated || out.truncated {
            st.episodes += 1;
            st.successes += u64::from(out.terminated);
            let rec = MetricRecord {
                step: st.env_steps,
                episode: st.episodes,
                episode_len: st.episode_len,
                critic_loss: st.last_critic.loss,
                actor_loss: st.last_actor.loss,
                alpha: st.params.alpha(),
                episode_return: st.episode_return,
                success: out.terminated,
                critic_updates: st.critic_updates,
                config_hash: self.hash.clone(),
                seed: self.seed,
            };
            st.metrics.push(rec.clone());
            st.episode_return = 0.0;
            st.episode_len = 0;
            st.obs = st.env.reset(&self.cfg.scenario, episode_seed(self.seed, st.episodes))?;
            st.canon_obs = None;
            Ok(Some(rec))
        } else {
            st.obs = out.obs;
            Ok(None)
        }
    }

    /// Runs until `total_env_steps` (or `limit`, if smaller) have been taken.
    pub fn run(&mut self, limit: Option<u64>) -> Result<()> {
        let target = limit.map_or(self.cfg.total_env_steps, |l| l.min(self.cfg.total_env_steps));
        while self.state.env_steps < target {
            self.step()?;
        }
        Ok(())
    }

    fn write_dump(&self, err: &Error) {
        let Some(dir) = &self.dump_dir else {
            return;
        };
        let dump = serde_json::json!({
            "error": err.to_string(),
            "config_hash": self.hash,
            "seed": self.seed,
            "env_steps": self.state.env_steps,
            "critic_updates": self.state.critic_updates,
            "last_critic": self.state.last_critic,
            "last_actor": self.state.last_actor,
            "log_alpha": self.state.params.log_alpha,
            "params_finite": {
                "encoder": self.state.params.encoder.all_finite(),
                "actor": self.state.params.actor.all_finite(),
                "critic": self.state.params.critic.all_finite(),
            },
            "observation": self.state.obs.without_sensors(),
        });
        let _ = std::fs::create_dir_all(dir);
        let _ = std::fs::write(dir.join("nan_dump.json"), serde_json::to_string_pretty(&dump).unwrap_or_default());
    }
}

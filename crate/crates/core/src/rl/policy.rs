use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{ActMode, Agent, AgentParams, AgentSpec};
use crate::geometry::{canonicalize, decanonicalize_action};
use crate::harness::Policy;
use crate::sim::{Action, Observation, SensorMode};
use crate::{Error, Result};

pub const POLICY_FILE_VERSION: u32 = 1;

/// Everything needed to act with a trained agent, without replay or
/// optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub version: u32,
    pub policy_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub spec: AgentSpec,
    pub symmetry: bool,
    pub params: AgentParams,
}

impl PolicyFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: PolicyFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if f.version != POLICY_FILE_VERSION {
            return Err(Error::Format(format!(
                "{}: policy file version {} (expected {POLICY_FILE_VERSION})",
                path.display(),
                f.version
            )));
        }
        Ok(f)
    }

    pub fn into_policy(self) -> Result<LearnedPolicy> {
        let agent = Agent::new(self.spec)?;
        Ok(LearnedPolicy::new(self.policy_id, agent, self.params, self.symmetry))
    }
}

/// A trained actor wrapped for evaluation. Deterministic mode uses the
/// squashed mean; sample mode draws from a per-trial seeded stream.
pub struct LearnedPolicy {
    pub id: String,
    pub agent: Agent,
    pub params: AgentParams,
    pub symmetry: bool,
    pub mode: ActMode,
    rng: ChaCha8Rng,
}

impl LearnedPolicy {
    pub fn new(id: impl Into<String>, agent: Agent, params: AgentParams, symmetry: bool) -> Self {
        LearnedPolicy {
            id: id.into(),
            agent,
            params,
            symmetry,
            mode: ActMode::Deterministic,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_mode(mut self, mode: ActMode) -> Self {
        self.mode = mode;
        self
    }
}

impl Policy for LearnedPolicy {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn sensors(&self) -> SensorMode {
        self.agent.modality().sensors()
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11C_E5ED);
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        if self.symmetry {
            let (canon, k) = canonicalize(obs);
            let a = self.agent.act(&self.params, &canon, self.mode, &mut self.rng)?;
            Ok(decanonicalize_action(&a, k))
        } else {
            self.agent.act(&self.params, obs, self.mode, &mut self.rng)
        }
    }
}

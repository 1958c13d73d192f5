use serde::{Deserialize, Serialize};

use super::logs::StepRecord;
use super::Policy;
use crate::sim::{Action, SuctionEnv};
use crate::Result;

/// A trial that never reaches the goal is charged the full episode.
pub const TIMEOUT_STEPS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub seed: u64,
    pub box_index: usize,
    pub success: bool,
    pub total_reward: f64,
    pub steps: usize,
    pub time_s: f64,
    /// Sum of consecutive L2 differences of the emitted actions.
    pub action_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy_id: String,
    pub scenario: String,
    /// Hash of the run config that produced the policy, when known.
    #[serde(default)]
    pub config_hash: String,
    pub base_seed: u64,
    pub n_trials: usize,
    pub successes: usize,
    /// Percent.
    pub success_rate: f64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_time_s: f64,
    pub std_time_s: f64,
    pub smoothness: f64,
    pub trials: Vec<TrialRecord>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample (n − 1) standard deviation; zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn action_difference(actions: &[Action]) -> f64 {
    actions.windows(2).map(|w| w[1].distance(&w[0])).sum()
}

impl EvalReport {
    /// Aggregates per-trial records; trials are sorted by index first.
    pub fn from_trials(policy_id: String, scenario: String, base_seed: u64, mut trials: Vec<TrialRecord>) -> Self {
        trials.sort_by_key(|t| t.index);
        let rewards: Vec<f64> = trials.iter().map(|t| t.total_reward).collect();
        let times: Vec<f64> = trials.iter().map(|t| t.time_s).collect();
        let diffs: Vec<f64> = trials.iter().map(|t| t.action_difference).collect();
        let successes = trials.iter().filter(|t| t.success).count();
        let n = trials.len();
        EvalReport {
            policy_id,
            scenario,
            config_hash: String::new(),
            base_seed,
            n_trials: n,
            successes,
            success_rate: if n == 0 { 0.0 } else { 100.0 * successes as f64 / n as f64 },
            mean_reward: mean(&rewards),
            std_reward: sample_std(&rewards),
            mean_time_s: mean(&times),
            std_time_s: sample_std(&times),
            smoothness: mean(&diffs),
            trials,
        }
    }

    /// True when the aggregates match a recomputation from the trials.
    pub fn is_consistent(&self) -> bool {
        let mut r = EvalReport::from_trials(self.policy_id.clone(), self.scenario.clone(), self.base_seed, self.trials.clone());
        r.config_hash.clone_from(&self.config_hash);
        r == *self
    }
}

/// Runs one episode. With `record`, every step is appended as a log record.
pub fn rollout<P: Policy + ?Sized>(
    env: &mut SuctionEnv,
    policy: &mut P,
    scenario: &str,
    seed: u64,
    index: usize,
    mut record: Option<&mut Vec<StepRecord>>,
) -> Result<TrialRecord> {
    env.set_sensors(policy.sensors());
    let mut obs = env.reset(scenario, seed)?;
    let box_index = env.episode().map_or(0, |e| e.box_index);
    policy.reset(seed);
    let mut actions = Vec::new();
    let mut total = 0.0;
    let mut t = 0;
    loop {
        let action = policy.act(&obs)?;
        let out = env.step(&action)?;
        total += out.reward.total;
        if let Some(log) = record.as_deref_mut() {
            log.push(StepRecord {
                episode: index,
                t,
                obs: obs.clone(),
                action,
                reward: out.reward.total,
                reward_terms: Some(out.reward),
                next_obs: out.obs.clone(),
                done: out.terminated,
                truncated: out.truncated,
                is_demo: false,
            });
        }
        actions.push(action);
        t += 1;
        if out.terminated || out.truncated {
            let success = out.terminated;
            let steps = if success { t } else { TIMEOUT_STEPS.max(t) };
            return Ok(TrialRecord {
                index,
                seed,
                box_index,
                success,
                total_reward: total,
                steps,
                time_s: env.config().step_time() * steps as f64,
                action_difference: action_difference(&actions),
            });
        }
        obs = out.obs;
    }
}

/// Trial `i` uses seed `base_seed + i`, so every policy sees the same
/// initial conditions.
pub fn evaluate<P: Policy + ?Sized>(
    env: &mut SuctionEnv,
    policy: &mut P,
    scenario: &str,
    n_trials: usize,
    base_seed: u64,
) -> Result<EvalReport> {
    let mut trials = Vec::with_capacity(n_trials);
    for i in 0..n_trials {
        trials.push(rollout(env, policy, scenario, base_seed + i as u64, i, None)?);
    }
    Ok(EvalReport::from_trials(policy.id(), scenario.to_string(), base_seed, trials))
}

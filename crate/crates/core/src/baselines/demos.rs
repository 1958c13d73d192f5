use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::bt::{BtConfig, BtPolicy};
use crate::harness::Policy;
use crate::rl::{episode_seed, Transition};
use crate::sim::{Action, SuctionEnv};
use crate::{Error, Result};

/// Attempt budget per requested demonstration.
pub const MAX_ATTEMPTS_PER_DEMO: usize = 50;

/// Successful scripted episodes, in generation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    pub episodes: Vec<Vec<Transition>>,
    /// Episode seed of each stored episode.
    pub seeds: Vec<u64>,
    pub attempts: usize,
}

impl DemoSet {
    pub fn transitions(&self) -> Vec<Transition> {
        self.episodes.iter().flatten().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

/// Runs the behavior tree with Gaussian action noise and keeps successful
/// episodes until `n` are collected. Observations carry whatever sensors
/// `env` is configured to render.
pub fn generate_demos(env: &mut SuctionEnv, scenario: &str, n: usize, noise: f64, seed: u64) -> Result<DemoSet> {
    if n == 0 {
        return Err(Error::Config("need at least one demonstration".into()));
    }
    let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(format!("demo noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bt = BtPolicy::new(BtConfig::default());
    let mut set = DemoSet {
        episodes: Vec::new(),
        seeds: Vec::new(),
        attempts: 0,
    };
    let budget = MAX_ATTEMPTS_PER_DEMO * n;
    while set.episodes.len() < n {
        if set.attempts == budget {
            return Err(Error::DemoGenerationFailed { attempts: budget });
        }
        let ep_seed = episode_seed(seed ^ 0xDE70_0000_0000, set.attempts as u64);
        set.attempts += 1;
        let mut obs = env.reset(scenario, ep_seed)?;
        bt.reset(ep_seed);
        let mut episode = Vec::new();
        loop {
            let clean = bt.act(&obs)?.to_array();
            let noisy: Vec<f64> = clean.iter().map(|v| v + normal.sample(&mut rng)).collect();
            let a = Action::from_slice(&noisy)?.clamped();
            let out = env.step(&a)?;
            episode.push(Transition {
                obs,
                action: a,
                reward: out.reward.total,
                next_obs: out.obs.clone(),
                done: out.terminated,
                is_demo: true,
            });
            if out.terminated {
                set.episodes.push(episode);
                set.seeds.push(ep_seed);
                break;
            }
            if out.truncated {
                break;
            }
            obs = out.obs;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::EnvConfig;

    #[test]
    fn demos_are_successful_and_reproducible() {
        let mut env = SuctionEnv::builtin(EnvConfig::default());
        let a = generate_demos(&mut env, "nominal", 3, 0.05, 7).unwrap();
        assert_eq!(a.len(), 3);
        for ep in &a.episodes {
            let last = ep.last().unwrap();
            assert!(last.done);
            assert!(last.reward > 50.0);
            assert!(ep[..ep.len() - 1].iter().all(|t| !t.done));
            assert!(ep.iter().all(|t| t.is_demo));
        }
        let b = generate_demos(&mut env, "nominal", 3, 0.05, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_demos_rejected() {
        let mut env = SuctionEnv::builtin(EnvConfig::default());
        assert!(generate_demos(&mut env, "nominal", 0, 0.05, 7).is_err());
    }
}

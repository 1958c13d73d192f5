use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::agent::Modality;
use crate::geometry::{canonicalize, rotate_action};
use crate::sim::{Action, Observation};
use crate::{Error, Result};

/// One replay unit. `done` marks goal termination only; time-limit
/// truncation keeps `done = false` so the target still bootstraps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub is_demo: bool,
}

/// Drops the sensor payloads a modality does not consume.
pub fn observation_for(obs: &Observation, modality: Modality) -> Observation {
    let sensors = modality.sensors();
    Observation {
        depth: if sensors.depth() { obs.depth.clone() } else { None },
        voxels: if sensors.voxel() { obs.voxels.clone() } else { None },
        ..obs.clone()
    }
}

impl Transition {
    pub fn for_modality(self, modality: Modality) -> Transition {
        Transition {
            obs: observation_for(&self.obs, modality),
            next_obs: observation_for(&self.next_obs, modality),
            ..self
        }
    }

    /// Expresses the transition in the canonical quadrant: each observation
    /// is canonicalized on its own and the action is rotated with the
    /// observation it was taken in.
    pub fn canonicalized(&self) -> Transition {
        let (obs, k) = canonicalize(&self.obs);
        let (next_obs, _) = canonicalize(&self.next_obs);
        Transition {
            obs,
            action: rotate_action(&self.action, k),
            reward: self.reward,
            next_obs,
            done: self.done,
            is_demo: self.is_demo,
        }
    }
}

/// Demonstrations (fixed after loading) plus a bounded online ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffers {
    demo: Vec<Transition>,
    online: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffers {
    pub fn new(demos: Vec<Transition>, capacity: usize) -> Self {
        let demo = demos
            .into_iter()
            .map(|mut t| {
                t.is_demo = true;
                t
            })
            .collect();
        ReplayBuffers {
            demo,
            online: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn demos(&self) -> &[Transition] {
        &self.demo
    }

    pub fn online_len(&self) -> usize {
        self.online.len()
    }

    pub fn len(&self) -> usize {
        self.demo.len() + self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends an online transition, evicting the oldest online one when full.
    pub fn push(&mut self, mut t: Transition) {
        t.is_demo = false;
        if self.online.len() == self.capacity {
            self.online.pop_front();
        }
        self.online.push_back(t);
    }

    pub fn online(&self) -> impl Iterator<Item = &Transition> {
        self.online.iter()
    }
}

/// Half demo, half online (`⌈B/2⌉` + `⌊B/2⌋`), uniform within each buffer.
/// Falls back to the non-empty buffer when the other is empty.
pub fn symmetric_sample<'a, R: Rng + ?Sized>(
    buffers: &'a ReplayBuffers,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'a Transition>> {
    let (nd, no) = (buffers.demo.len(), buffers.online.len());
    let (from_demo, from_online) = match (nd, no) {
        (0, 0) => return Err(Error::EmptyDemos),
        (_, 0) => (batch_size, 0),
        (0, _) => (0, batch_size),
        _ => (batch_size.div_ceil(2), batch_size / 2),
    };
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..from_demo {
        out.push(&buffers.demo[rng.random_range(0..nd)]);
    }
    for _ in 0..from_online {
        out.push(&buffers.online[rng.random_range(0..no)]);
    }
    Ok(out)
}

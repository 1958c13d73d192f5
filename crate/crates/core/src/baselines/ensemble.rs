use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::harness::Policy;
use crate::sim::{Action, Observation, SensorMode};
use crate::{Error, Result};

/// Weights for the newest through the oldest sampled action, used as given
/// (they sum to 1.1).
pub const ENSEMBLE_WEIGHTS: [f64; 4] = [0.5, 0.3, 0.2, 0.1];

/// Last sampled actions, most recent first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBuffer {
    history: VecDeque<Action>,
}

impl EnsembleBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn history(&self) -> impl Iterator<Item = &Action> {
        self.history.iter()
    }

    /// Buffer holding exactly `actions` (most recent first, at most four).
    pub fn from_history(actions: &[Action]) -> Self {
        EnsembleBuffer {
            history: actions.iter().take(ENSEMBLE_WEIGHTS.len()).copied().collect(),
        }
    }
}

/// Pushes `sampled` and returns the weighted history. An empty buffer is
/// first filled with copies of `sampled`. The gripper command passes
/// through from the newest action.
pub fn temporal_ensemble(buf: &mut EnsembleBuffer, sampled: Action) -> Action {
    if buf.history.is_empty() {
        buf.history.extend(std::iter::repeat_n(sampled, ENSEMBLE_WEIGHTS.len() - 1));
    }
    buf.history.push_front(sampled);
    buf.history.truncate(ENSEMBLE_WEIGHTS.len());
    let mut out = Action {
        grip: sampled.grip,
        ..Action::zero()
    };
    for (a, w) in buf.history.iter().zip(ENSEMBLE_WEIGHTS) {
        out.dpos += a.dpos * w;
        out.drot += a.drot * w;
    }
    out
}

/// Mean over trajectories of the summed consecutive L2 action differences.
pub fn smoothness(trajectories: &[Vec<Action>]) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::Config("smoothness needs at least one trajectory".into()));
    }
    let mut total = 0.0;
    for t in trajectories {
        if t.len() < 2 {
            return Err(Error::Config("smoothness needs trajectories of length ≥ 2".into()));
        }
        total += crate::harness::eval::action_difference(t);
    }
    Ok(total / trajectories.len() as f64)
}

/// Wraps a policy so that every emitted action is temporally ensembled.
pub struct Ensembled<P> {
    pub inner: P,
    buf: EnsembleBuffer,
}

impl<P> Ensembled<P> {
    pub fn new(inner: P) -> Self {
        Ensembled {
            inner,
            buf: EnsembleBuffer::new(),
        }
    }
}

impl<P: Policy> Policy for Ensembled<P> {
    fn id(&self) -> String {
        format!("{}-ens", self.inner.id())
    }

    fn sensors(&self) -> SensorMode {
        self.inner.sensors()
    }

    fn reset(&mut self, seed: u64) {
        self.buf = EnsembleBuffer::new();
        self.inner.reset(seed);
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        let a = self.inner.act(obs)?;
        Ok(temporal_ensemble(&mut self.buf, a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;
    use proptest::prelude::*;

    fn act(v: [f64; 7]) -> Action {
        Action::from_slice(&v).unwrap()
    }

    fn close(a: &Action, b: &Action) -> bool {
        a.distance(b) < 1e-12
    }

    #[test]
    fn constant_input_scales_by_weight_sum() {
        let a = act([0.2, -0.4, 0.6, 0.1, 0.0, -0.3, 1.0]);
        let mut buf = EnsembleBuffer::new();
        for _ in 0..6 {
            let out = temporal_ensemble(&mut buf, a);
            let expect = Action {
                dpos: a.dpos * 1.1,
                drot: a.drot * 1.1,
                grip: 1.0,
            };
            assert!(close(&out, &expect), "{out:?}");
            assert!(buf.len() <= 4);
        }
    }

    #[test]
    fn newest_only_history() {
        let a = act([1.0, 0.5, -1.0, 0.2, 0.2, 0.2, -1.0]);
        let mut buf = EnsembleBuffer::from_history(&[Action::zero(); 3]);
        let out = temporal_ensemble(&mut buf, a);
        let expect = Action {
            dpos: a.dpos * 0.5,
            drot: a.drot * 0.5,
            grip: -1.0,
        };
        assert!(close(&out, &expect));
    }

    #[test]
    fn alternating_signs() {
        let p = act([1.0; 7]);
        let n = act([-1.0; 7]);
        let mut buf = EnsembleBuffer::from_history(&[n, p, n]);
        let out = temporal_ensemble(&mut buf, p);
        for v in &out.to_array()[..6] {
            assert!((v.abs() - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothness_arithmetic() {
        let a0 = Action::zero();
        let a1 = Action {
            dpos: Vec3::new(1.0, 0.0, 0.0),
            ..Action::zero()
        };
        assert_eq!(smoothness(&[vec![a0, a1]]).unwrap(), 1.0);
        assert_eq!(smoothness(&[vec![a1; 5], vec![a0, a0]]).unwrap(), 0.0);
        assert!(smoothness(&[vec![a0]]).is_err());
    }

    fn arb_action() -> impl Strategy<Value = Action> {
        prop::array::uniform7(-1.0f64..1.0).prop_map(act)
    }

    proptest! {
        #[test]
        fn ensembling_is_linear(hist in prop::collection::vec(arb_action(), 4), c in -2.0f64..2.0) {
            let scaled: Vec<Action> = hist.iter().map(|a| Action { dpos: a.dpos * c, drot: a.drot * c, grip: a.grip }).collect();
            let out = temporal_ensemble(&mut EnsembleBuffer::from_history(&hist[1..]), hist[0]);
            let out_c = temporal_ensemble(&mut EnsembleBuffer::from_history(&scaled[1..]), scaled[0]);
            for (x, y) in out.to_array()[..6].iter().zip(&out_c.to_array()[..6]) {
                prop_assert!((x * c - y).abs() < 1e-12);
            }
            prop_assert_eq!(out.grip, hist[0].grip);
        }
    }
}

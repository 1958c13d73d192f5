//! Actor, twin critics and shared encoder, with the SAC updates.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::replay::Transition;
use crate::nets::{mlp, policy, Adam, Encoder, EncoderCache, EncoderInput, EncoderSpec, Layer, ParamSet, Sequential, Tensor};
use crate::sensing::{sample_shift_2d, sample_shift_3d, shift_2d, VoxelGrid, IMAGE_SIZE, MAX_DEPTH};
use crate::sim::{Action, Observation, SensorMode, ACTION_DIM, PROPRIO_DIM};
use crate::{Error, Result};

/// Which observation parts the networks consume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Proprio,
    Depth,
    Voxel,
    /// Voxel features without the proprioceptive vector.
    VoxelOnly,
}

impl Modality {
    pub fn sensors(self) -> SensorMode {
        match self {
            Modality::Proprio => SensorMode::None,
            Modality::Depth => SensorMode::Depth,
            Modality::Voxel | Modality::VoxelOnly => SensorMode::Voxel,
        }
    }

    pub fn uses_proprio(self) -> bool {
        self != Modality::VoxelOnly
    }

    /// Desk-scale encoder for the modality, if it has one.
    pub fn default_encoder(self) -> Option<EncoderSpec> {
        match self {
            Modality::Proprio => None,
            Modality::Depth => Some(EncoderSpec::depth_desk()),
            Modality::Voxel | Modality::VoxelOnly => Some(EncoderSpec::voxel_desk()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Proprio => "proprio",
            Modality::Depth => "depth",
            Modality::Voxel => "voxel",
            Modality::VoxelOnly => "voxel_only",
        }
    }
}

/// Per-entry scale bringing the proprioceptive vector to roughly unit range.
pub const PROPRIO_SCALE: [f64; PROPRIO_DIM] = [
    30.0, 30.0, 30.0, // position (m)
    10.0, 10.0, 10.0, // MRP
    20.0, 20.0, 20.0, // linear velocity (m/s)
    2.0, 2.0, 2.0, // angular velocity (rad/s)
    0.1, 0.1, 0.1, // force (N)
    1.0, 1.0, 1.0, // torque (N·m)
    1.0, 1.0, // pressure, gripped
    1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, // previous action
];

pub fn scaled_proprio(obs: &Observation) -> [f64; PROPRIO_DIM] {
    let mut p = obs.proprio();
    for (v, s) in p.iter_mut().zip(PROPRIO_SCALE) {
        *v *= s;
    }
    p
}

/// Network inputs for a batch of observations.
#[derive(Clone, Debug)]
pub struct ObsBatch {
    pub proprio: Tensor,
    pub voxels: Vec<Arc<VoxelGrid>>,
    pub depth: Option<Tensor>,
}

impl ObsBatch {
    /// Gathers inputs for `modality`. With `augment`, each grid (or image
    /// pair) gets an independent random shift; the proprioceptive part is
    /// never augmented.
    pub fn build<R: Rng + ?Sized>(obs: &[&Observation], modality: Modality, mut augment: Option<&mut R>) -> Result<Self> {
        let b = obs.len();
        let mut proprio = Tensor::zeros(&[b, PROPRIO_DIM]);
        for (i, o) in obs.iter().enumerate() {
            proprio.row_mut(i).copy_from_slice(&scaled_proprio(o));
        }
        let mut voxels = Vec::new();
        let mut depth = None;
        match modality {
            Modality::Proprio => {}
            Modality::Voxel | Modality::VoxelOnly => {
                for o in obs {
                    let g = o
                        .voxels
                        .as_ref()
                        .ok_or_else(|| Error::Config("voxel modality needs voxel observations".into()))?;
                    voxels.push(match augment.as_deref_mut() {
                        Some(rng) => Arc::new(g.shifted(sample_shift_3d(rng))),
                        None => Arc::clone(g),
                    });
                }
            }
            Modality::Depth => {
                let px = IMAGE_SIZE * IMAGE_SIZE;
                let mut t = Tensor::zeros(&[b, 2, IMAGE_SIZE, IMAGE_SIZE]);
                for (i, o) in obs.iter().enumerate() {
                    let imgs = o
                        .depth
                        .as_ref()
                        .ok_or_else(|| Error::Config("depth modality needs depth observations".into()))?;
                    let shift = augment.as_deref_mut().map(|rng| sample_shift_2d(rng));
                    for (c, img) in imgs.iter().enumerate() {
                        let shifted;
                        let img = match shift {
                            Some(s) => {
                                shifted = shift_2d(img, s);
                                &shifted
                            }
                            None => img,
                        };
                        let dst = &mut t.data[(i * 2 + c) * px..(i * 2 + c + 1) * px];
                        for (d, v) in dst.iter_mut().zip(&img.pixels) {
                            *d = f64::from(*v) / MAX_DEPTH;
                        }
                    }
                }
                depth = Some(t);
            }
        }
        Ok(ObsBatch { proprio, voxels, depth })
    }

    pub fn len(&self) -> usize {
        self.proprio.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub modality: Modality,
    pub encoder: Option<EncoderSpec>,
    pub hidden: Vec<usize>,
    pub layer_norm: bool,
}

impl AgentSpec {
    pub fn new(modality: Modality) -> Self {
        AgentSpec {
            modality,
            encoder: modality.default_encoder(),
            hidden: vec![128, 128],
            layer_norm: true,
        }
    }
}

/// All learnable state of an agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub encoder: ParamSet,
    pub actor: ParamSet,
    pub critic: ParamSet,
    pub target_encoder: ParamSet,
    pub target_critic: ParamSet,
    pub log_alpha: f64,
}

impl AgentParams {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Deterministic,
    Sample,
}

/// Network structure; parameters live in [`AgentParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub spec: AgentSpec,
    encoder: Option<Encoder>,
    actor: Sequential,
    critics: [Sequential; 2],
    state_dim: usize,
}

impl Agent {
    pub fn new(spec: AgentSpec) -> Result<Self> {
        let encoder = match (&spec.encoder, spec.modality) {
            (_, Modality::Proprio) => None,
            (Some(e), m) => {
                let expect = m.default_encoder().map(|d| d.kind);
                if Some(e.kind) != expect {
                    return Err(Error::Config(format!("encoder kind {:?} does not fit modality {}", e.kind, m.name())));
                }
                Some(e.build("enc")?)
            }
            (None, m) => return Err(Error::Config(format!("modality {} needs an encoder", m.name()))),
        };
        let feat = encoder.as_ref().map_or(0, Encoder::output_len);
        let state_dim = feat + if spec.modality.uses_proprio() { PROPRIO_DIM } else { 0 };
        let actor = mlp("pi", state_dim, &spec.hidden, 2 * ACTION_DIM, spec.layer_norm);
        let critics = [
            mlp("q0", state_dim + ACTION_DIM, &spec.hidden, 1, spec.layer_norm),
            mlp("q1", state_dim + ACTION_DIM, &spec.hidden, 1, spec.layer_norm),
        ];
        Ok(Agent {
            spec,
            encoder,
            actor,
            critics,
            state_dim,
        })
    }

    pub fn modality(&self) -> Modality {
        self.spec.modality
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.as_ref().map_or(0, Encoder::output_len)
    }

    pub fn init<R: Rng + ?Sized>(&self, init_temperature: f64, rng: &mut R) -> AgentParams {
        let mut encoder = ParamSet::new();
        if let Some(e) = &self.encoder {
            e.init(&mut encoder, rng);
        }
        let mut actor = ParamSet::new();
        self.actor.init(&mut actor, rng);
        // Small initial policy outputs.
        if let Some(Layer::Dense(out)) = self.actor.layers.last() {
            out.init(&mut actor, 0.01, rng);
        }
        let mut critic = ParamSet::new();
        for c in &self.critics {
            c.init(&mut critic, rng);
        }
        AgentParams {
            target_encoder: encoder.clone(),
            target_critic: critic.clone(),
            encoder,
            actor,
            critic,
            log_alpha: init_temperature.ln(),
        }
    }

    pub fn encode(&self, enc: &ParamSet, batch: &ObsBatch) -> Result<(Tensor, Option<EncoderCache>)> {
        match &self.encoder {
            None => Ok((Tensor::zeros(&[batch.len(), 0]), None)),
            Some(e) => {
                let (y, c) = match &batch.depth {
                    Some(d) => e.forward(enc, &EncoderInput::Dense(d))?,
                    None => {
                        let refs: Vec<&VoxelGrid> = batch.voxels.iter().map(|g| g.as_ref()).collect();
                        e.forward(enc, &EncoderInput::Voxels(&refs))?
                    }
                };
                Ok((y, Some(c)))
            }
        }
    }

    fn encode_backward(
        &self,
        enc: &ParamSet,
        batch: &ObsBatch,
        cache: Option<&EncoderCache>,
        g: &Tensor,
        grads: &mut ParamSet,
    ) -> Result<()> {
        let (Some(e), Some(cache)) = (&self.encoder, cache) else {
            return Ok(());
        };
        match &batch.depth {
            Some(d) => e.backward(enc, &EncoderInput::Dense(d), cache, g, grads)?,
            None => {
                let refs: Vec<&VoxelGrid> = batch.voxels.iter().map(|g| g.as_ref()).collect();
                e.backward(enc, &EncoderInput::Voxels(&refs), cache, g, grads)?
            }
        };
        Ok(())
    }

    /// Policy/critic state input: encoder features followed by proprioception.
    pub fn state(&self, features: &Tensor, batch: &ObsBatch) -> Result<Tensor> {
        match (self.encoder.is_some(), self.spec.modality.uses_proprio()) {
            (false, _) => Ok(batch.proprio.clone()),
            (true, false) => Ok(features.clone()),
            (true, true) => Tensor::concat_cols(&[features, &batch.proprio]),
        }
    }

    pub fn state_of(&self, params: &AgentParams, batch: &ObsBatch) -> Result<Tensor> {
        let (f, _) = self.encode(&params.encoder, batch)?;
        self.state(&f, batch)
    }

    pub fn actor_head(&self, actor: &ParamSet, state: &Tensor) -> Result<Tensor> {
        self.actor.infer(actor, state)
    }

    pub fn q_values(&self, critic: &ParamSet, state: &Tensor, actions: &Tensor) -> Result<[Vec<f64>; 2]> {
        let x = Tensor::concat_cols(&[state, actions])?;
        Ok([
            self.critics[0].infer(critic, &x)?.data,
            self.critics[1].infer(critic, &x)?.data,
        ])
    }

    pub fn act<R: Rng + ?Sized>(&self, params: &AgentParams, obs: &Observation, mode: ActMode, rng: &mut R) -> Result<Action> {
        let batch = ObsBatch::build::<R>(&[obs], self.spec.modality, None)?;
        let state = self.state_of(params, &batch)?;
        let head = self.actor_head(&params.actor, &state)?;
        let a = match mode {
            ActMode::Deterministic => policy::mode(&head),
            ActMode::Sample => policy::sample(&head, &gaussian(&[1, ACTION_DIM], rng)).action,
        };
        Action::from_slice(&a.data)
    }

    /// Bellman targets `r + γ(1−d)(min Q̄(s′,a′) − α log π(a′|s′))` with
    /// `a′ = tanh(μ + σ·ε)`; next states are encoded with the target encoder.
    pub fn td_targets(
        &self,
        params: &AgentParams,
        next: &ObsBatch,
        rewards: &[f64],
        dones: &[bool],
        gamma: f64,
        eps: &Tensor,
    ) -> Result<Vec<f64>> {
        let (nf, _) = self.encode(&params.target_encoder, next)?;
        let ns = self.state(&nf, next)?;
        let head = self.actor_head(&params.actor, &ns)?;
        let s = policy::sample(&head, eps);
        let [q0, q1] = self.q_values(&params.target_critic, &ns, &s.action)?;
        let alpha = params.alpha();
        Ok((0..rewards.len())
            .map(|i| {
                if dones[i] || gamma == 0.0 {
                    rewards[i]
                } else {
                    rewards[i] + gamma * (q0[i].min(q1[i]) - alpha * s.log_prob[i])
                }
            })
            .collect())
    }
}

pub fn gaussian<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

pub fn actions_tensor(actions: &[Action]) -> Tensor {
    let mut t = Tensor::zeros(&[actions.len(), ACTION_DIM]);
    for (i, a) in actions.iter().enumerate() {
        t.row_mut(i).copy_from_slice(&a.to_array());
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temp_lr: f64,
    pub tau: f64,
    pub target_entropy: f64,
    pub init_temperature: f64,
    pub augmentation: bool,
    /// Global-norm gradient clip for every optimizer; `None` disables it.
    pub grad_clip: Option<f64>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            gamma: 0.98,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temp_lr: 3e-4,
            tau: 0.005,
            target_entropy: -(ACTION_DIM as f64),
            init_temperature: 0.1,
            augmentation: true,
            grad_clip: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CriticStats {
    pub loss: f64,
    pub q_mean: f64,
    pub target_mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ActorStats {
    pub loss: f64,
    pub entropy: f64,
    pub alpha: f64,
}

/// Optimizer state for one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub encoder: Adam,
    pub critic: Adam,
    pub actor: Adam,
    pub alpha: Adam,
}

impl Optimizers {
    pub fn new(cfg: &LearnerConfig) -> Self {
        let mk = |lr| match cfg.grad_clip {
            Some(c) => Adam::new(lr).with_clip(c),
            None => Adam::new(lr),
        };
        Optimizers {
            encoder: mk(cfg.critic_lr),
            critic: mk(cfg.critic_lr),
            actor: mk(cfg.actor_lr),
            alpha: Adam::new(cfg.temp_lr),
        }
    }
}

/// Twin-critic TD step. The encoder is trained through the critic loss.
/// Returns the (detached) online state of the batch for the actor step.
pub fn critic_update<R: Rng + ?Sized>(
    agent: &Agent,
    params: &mut AgentParams,
    opt: &mut Optimizers,
    cfg: &LearnerConfig,
    batch: &[&Transition],
    rng: &mut R,
) -> Result<(CriticStats, Tensor)> {
    let b = batch.len();
    let m = agent.modality();
    let obs: Vec<&Observation> = batch.iter().map(|t| &t.obs).collect();
    let next: Vec<&Observation> = batch.iter().map(|t| &t.next_obs).collect();
    let (ob, nb) = if cfg.augmentation {
        (ObsBatch::build(&obs, m, Some(&mut *rng))?, ObsBatch::build(&next, m, Some(&mut *rng))?)
    } else {
        (ObsBatch::build::<R>(&obs, m, None)?, ObsBatch::build::<R>(&next, m, None)?)
    };
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
    let eps = gaussian(&[b, ACTION_DIM], rng);
    let y = agent.td_targets(params, &nb, &rewards, &dones, cfg.gamma, &eps)?;

    let (feat, enc_cache) = agent.encode(&params.encoder, &ob)?;
    let state = agent.state(&feat, &ob)?;
    let acts: Vec<Action> = batch.iter().map(|t| t.action).collect();
    let x = Tensor::concat_cols(&[&state, &actions_tensor(&acts)])?;
    let mut grads = ParamSet::new();
    let mut dx = Tensor::zeros(&x.shape);
    let mut loss = 0.0;
    let mut q_mean = 0.0;
    for c in &agent.critics {
        let (q, cache) = c.forward(&params.critic, &x)?;
        let mut g = Tensor::zeros(&q.shape);
        for i in 0..b {
            let d = q.data[i] - y[i];
            loss += d * d / b as f64;
            g.data[i] = 2.0 * d / b as f64;
            q_mean += q.data[i] / (2 * b) as f64;
        }
        dx.add_assign(&c.backward(&params.critic, &cache, &g, &mut grads)?);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "critic loss".into(),
            step: opt.critic.t,
        });
    }
    let fdim = agent.feature_dim();
    if fdim > 0 {
        let g_feat = dx.split_cols(&[fdim, dx.row_len() - fdim]).remove(0);
        let mut enc_grads = ParamSet::new();
        agent.encode_backward(&params.encoder, &ob, enc_cache.as_ref(), &g_feat, &mut enc_grads)?;
        opt.encoder.step(&mut params.encoder, &enc_grads);
    }
    opt.critic.step(&mut params.critic, &grads);
    params.target_critic.soft_update(&params.critic, cfg.tau);
    params.target_encoder.soft_update(&params.encoder, cfg.tau);
    let stats = CriticStats {
        loss,
        q_mean,
        target_mean: y.iter().sum::<f64>() / b as f64,
    };
    Ok((stats, state))
}

/// Policy step on fixed critics, followed by one temperature step.
pub fn actor_update<R: Rng + ?Sized>(
    agent: &Agent,
    params: &mut AgentParams,
    opt: &mut Optimizers,
    cfg: &LearnerConfig,
    state: &Tensor,
    rng: &mut R,
) -> Result<ActorStats> {
    let b = state.rows();
    let alpha = params.alpha();
    let (head, cache) = agent.actor.forward(&params.actor, state)?;
    let eps = gaussian(&[b, ACTION_DIM], rng);
    let s = policy::sample(&head, &eps);
    let x = Tensor::concat_cols(&[state, &s.action])?;
    let (q0, c0) = agent.critics[0].forward(&params.critic, &x)?;
    let (q1, c1) = agent.critics[1].forward(&params.critic, &x)?;
    let mut g0 = Tensor::zeros(&q0.shape);
    let mut g1 = Tensor::zeros(&q1.shape);
    let mut loss = 0.0;
    for i in 0..b {
        let q = q0.data[i].min(q1.data[i]);
        loss += (alpha * s.log_prob[i] - q) / b as f64;
        if q0.data[i] <= q1.data[i] {
            g0.data[i] = -1.0 / b as f64;
        } else {
            g1.data[i] = -1.0 / b as f64;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "actor loss".into(),
            step: opt.actor.t,
        });
    }
    let mut scratch = ParamSet::new();
    let mut dx = agent.critics[0].backward(&params.critic, &c0, &g0, &mut scratch)?;
    dx.add_assign(&agent.critics[1].backward(&params.critic, &c1, &g1, &mut scratch)?);
    let g_action = dx.split_cols(&[dx.row_len() - ACTION_DIM, ACTION_DIM]).remove(1);
    let g_logp = vec![alpha / b as f64; b];
    let g_head = policy::sample_backward(&head, &s, &g_action, &g_logp);
    let mut grads = ParamSet::new();
    agent.actor.backward(&params.actor, &cache, &g_head, &mut grads)?;
    opt.actor.step(&mut params.actor, &grads);

    let entropy = -s.log_prob.iter().sum::<f64>() / b as f64;
    temperature_update(params, &mut opt.alpha, entropy, cfg.target_entropy);
    Ok(ActorStats {
        loss,
        entropy,
        alpha: params.alpha(),
    })
}

/// One Adam step on `log α` for the loss `α·(H − H̄)`, with `H` the
/// (detached) policy entropy estimate: `α` grows when `H < H̄`.
pub fn temperature_update(params: &mut AgentParams, opt: &mut Adam, entropy: f64, target_entropy: f64) {
    let mut p = ParamSet::new();
    p.insert("log_alpha", Tensor::filled(&[1], params.log_alpha));
    let mut g = ParamSet::new();
    g.insert("log_alpha", Tensor::filled(&[1], params.alpha() * (entropy - target_entropy)));
    opt.step(&mut p, &g);
    params.log_alpha = p.tensors["log_alpha"].data[0];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 1000,
            batch_size: 64,
            lr: 3e-3,
        }
    }
}

/// Mean negative log-likelihood of the actions under the current policy.
pub fn bc_loss(agent: &Agent, params: &AgentParams, demos: &[&Transition]) -> Result<f64> {
    let obs: Vec<&Observation> = demos.iter().map(|t| &t.obs).collect();
    let ob = ObsBatch::build::<rand_chacha::ChaCha8Rng>(&obs, agent.modality(), None)?;
    let state = agent.state_of(params, &ob)?;
    let head = agent.actor_head(&params.actor, &state)?;
    let acts: Vec<Action> = demos.iter().map(|t| t.action).collect();
    let lp = policy::log_prob(&head, &actions_tensor(&acts));
    Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
}

/// Maximizes `Σ log π(a|s)` over demonstration pairs (actor and encoder).
/// Returns the per-step training loss.
pub fn bc_fit<R: Rng + ?Sized>(
    agent: &Agent,
    params: &mut AgentParams,
    demos: &[Transition],
    cfg: &BcConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if demos.is_empty() {
        return Err(Error::EmptyDemos);
    }
    let mut actor_opt = Adam::new(cfg.lr);
    let mut enc_opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..demos.len()).collect();
    let bs = cfg.batch_size.max(1).min(demos.len());
    let mut curve = Vec::new();
    for _ in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(bs) {
            let obs: Vec<&Observation> = chunk.iter().map(|&i| &demos[i].obs).collect();
            let acts: Vec<Action> = chunk.iter().map(|&i| demos[i].action).collect();
            let ob = ObsBatch::build::<R>(&obs, agent.modality(), None)?;
            let (feat, enc_cache) = agent.encode(&params.encoder, &ob)?;
            let state = agent.state(&feat, &ob)?;
            let (head, cache) = agent.actor.forward(&params.actor, &state)?;
            let at = actions_tensor(&acts);
            let lp = policy::log_prob(&head, &at);
            let n = lp.len() as f64;
            let loss = -lp.iter().sum::<f64>() / n;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "bc loss".into(),
                    step: actor_opt.t,
                });
            }
            curve.push(loss);
            let g_head = policy::log_prob_backward(&head, &at, &vec![-1.0 / n; lp.len()]);
            let mut grads = ParamSet::new();
            let g_state = agent.actor.backward(&params.actor, &cache, &g_head, &mut grads)?;
            actor_opt.step(&mut params.actor, &grads);
            let fdim = agent.feature_dim();
            if fdim > 0 {
                let g_feat = g_state.split_cols(&[fdim, g_state.row_len() - fdim]).remove(0);
                let mut eg = ParamSet::new();
                agent.encode_backward(&params.encoder, &ob, enc_cache.as_ref(), &g_feat, &mut eg)?;
                enc_opt.step(&mut params.encoder, &eg);
            }
        }
    }
    params.target_encoder = params.encoder.clone();
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_agent() -> (Agent, AgentParams) {
        let mut spec = AgentSpec::new(Modality::Proprio);
        spec.hidden = vec![];
        spec.layer_norm = false;
        let agent = Agent::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = agent.init(0.3, &mut rng);
        // Non-trivial policy and targets so every term of the target matters.
        for t in [&mut params.actor, &mut params.target_critic] {
            for v in t.tensors.values_mut() {
                for x in v.data.iter_mut() {
                    *x = rng.random_range(-0.3..0.3);
                }
            }
        }
        (agent, params)
    }

    fn obs_with(seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut o = Observation::default();
        o.rel_pose.position = crate::Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), -0.01);
        o.force.z = -3.0;
        o.gripper.pressure = 0.7;
        o
    }

    fn transition(seed: u64, reward: f64, done: bool) -> Transition {
        Transition {
            obs: obs_with(seed),
            action: Action::zero(),
            reward,
            next_obs: obs_with(seed + 100),
            done,
            is_demo: false,
        }
    }

    /// Dense layer `y = W x + b` with `W` stored `[out, in]`.
    fn dense(p: &ParamSet, name: &str, x: &[f64]) -> Vec<f64> {
        let w = &p.tensors[&format!("{name}.w")];
        let b = &p.tensors[&format!("{name}.b")];
        let (o, i) = (w.shape[0], w.shape[1]);
        (0..o).map(|r| b.data[r] + (0..i).map(|c| w.data[r * i + c] * x[c]).sum::<f64>()).collect()
    }

    #[test]
    fn td_target_matches_hand_computation() {
        let (agent, params) = linear_agent();
        let ts = [transition(1, 0.7, false), transition(2, -1.3, false)];
        let next: Vec<&Observation> = ts.iter().map(|t| &t.next_obs).collect();
        let nb = ObsBatch::build::<ChaCha8Rng>(&next, Modality::Proprio, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eps = gaussian(&[2, ACTION_DIM], &mut rng);
        let gamma = 0.9;
        let y = agent.td_targets(&params, &nb, &[0.7, -1.3], &[false, false], gamma, &eps).unwrap();

        let alpha = params.log_alpha.exp();
        for (r, t) in ts.iter().enumerate() {
            let s: Vec<f64> = t.next_obs.proprio().iter().zip(PROPRIO_SCALE).map(|(v, k)| v * k).collect();
            let head = dense(&params.actor, "pi.out", &s);
            let mut a = Vec::new();
            let mut logp = 0.0;
            for i in 0..ACTION_DIM {
                let mu = head[i];
                let ls = -5.0 + 3.5 * (head[ACTION_DIM + i].tanh() + 1.0);
                let sd = ls.exp();
                let u = mu + sd * eps.data[r * ACTION_DIM + i];
                let z = (u - mu) / sd;
                logp += -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                logp -= (1.0 - u.tanh().powi(2)).ln();
                a.push(u.tanh());
            }
            let sa: Vec<f64> = s.iter().chain(&a).copied().collect();
            let q0 = dense(&params.target_critic, "q0.out", &sa)[0];
            let q1 = dense(&params.target_critic, "q1.out", &sa)[0];
            let expect = t.reward + gamma * (q0.min(q1) - alpha * logp);
            assert!((y[r] - expect).abs() < 1e-6, "row {r}: {} vs {expect}", y[r]);
        }
    }

    #[test]
    fn terminal_and_myopic_targets_are_rewards() {
        let (agent, params) = linear_agent();
        let ts = [transition(1, 0.7, true), transition(2, -1.3, true)];
        let next: Vec<&Observation> = ts.iter().map(|t| &t.next_obs).collect();
        let nb = ObsBatch::build::<ChaCha8Rng>(&next, Modality::Proprio, None).unwrap();
        let eps = gaussian(&[2, ACTION_DIM], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(agent.td_targets(&params, &nb, &[0.7, -1.3], &[true, true], 0.98, &eps).unwrap(), vec![0.7, -1.3]);
        assert_eq!(agent.td_targets(&params, &nb, &[0.7, -1.3], &[false, false], 0.0, &eps).unwrap(), vec![0.7, -1.3]);
    }

    #[test]
    fn zero_temperature_constant_q_leaves_actor_unchanged() {
        let (agent, mut params) = linear_agent();
        for name in ["q0.out.w", "q1.out.w"] {
            for x in params.critic.tensors.get_mut(name).unwrap().data.iter_mut() {
                *x = 0.0;
            }
        }
        params.log_alpha = f64::NEG_INFINITY;
        let cfg = LearnerConfig::default();
        let mut opt = Optimizers::new(&cfg);
        let obs = [obs_with(1), obs_with(2), obs_with(3)];
        let refs: Vec<&Observation> = obs.iter().collect();
        let batch = ObsBatch::build::<ChaCha8Rng>(&refs, Modality::Proprio, None).unwrap();
        let state = agent.state_of(&params, &batch).unwrap();
        let before = params.actor.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        actor_update(&agent, &mut params, &mut opt, &cfg, &state, &mut rng).unwrap();
        assert_eq!(params.actor, before);
    }

    #[test]
    fn temperature_moves_toward_target_entropy() {
        let (_, mut params) = linear_agent();
        let start = params.log_alpha;
        temperature_update(&mut params, &mut Adam::new(1e-2), -10.0, -7.0);
        assert!(params.log_alpha > start, "entropy below target must raise alpha");
        let start = params.log_alpha;
        temperature_update(&mut params, &mut Adam::new(1e-2), -3.0, -7.0);
        assert!(params.log_alpha < start);
    }

    #[test]
    fn actor_loss_decreases_on_bandit() {
        // One-step bandit: reward peaks at a fixed action; fit the critics,
        // then improve the actor against them.
        let mut spec = AgentSpec::new(Modality::Proprio);
        spec.hidden = vec![32, 32];
        let agent = Agent::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = agent.init(0.05, &mut rng);
        let cfg = LearnerConfig {
            gamma: 0.0,
            critic_lr: 3e-3,
            actor_lr: 3e-3,
            temp_lr: 1e-9,
            augmentation: false,
            ..LearnerConfig::default()
        };
        let mut opt = Optimizers::new(&cfg);
        let best = [0.5, -0.3, 0.2, 0.0, 0.1, 0.0, 0.4];
        let data: Vec<Transition> = (0..64)
            .map(|i| {
                let a: Vec<f64> = (0..ACTION_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r = -a.iter().zip(best).map(|(x, b)| (x - b).powi(2)).sum::<f64>();
                Transition {
                    action: Action::from_slice(&a).unwrap(),
                    ..transition(i % 4, r, true)
                }
            })
            .collect();
        let refs: Vec<&Transition> = data.iter().collect();
        let mut state = None;
        for _ in 0..300 {
            state = Some(critic_update(&agent, &mut params, &mut opt, &cfg, &refs, &mut rng).unwrap().1);
        }
        let state = state.unwrap();
        let mut losses = Vec::new();
        for _ in 0..100 {
            losses.push(actor_update(&agent, &mut params, &mut opt, &cfg, &state, &mut rng).unwrap().loss);
        }
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[90..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "actor loss {head} → {tail}");
    }

    #[test]
    fn bc_overfits_single_pair() {
        let mut spec = AgentSpec::new(Modality::Proprio);
        spec.hidden = vec![32, 32];
        let agent = Agent::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = agent.init(0.1, &mut rng);
        let target = [0.4, -0.6, 0.9, 0.0, -0.2, 0.1, 0.95];
        let demo = Transition {
            action: Action::from_slice(&target).unwrap(),
            is_demo: true,
            ..transition(3, 0.0, false)
        };
        let cfg = BcConfig {
            epochs: 600,
            batch_size: 1,
            lr: 3e-3,
        };
        bc_fit(&agent, &mut params, std::slice::from_ref(&demo), &cfg, &mut rng).unwrap();
        let a = agent.act(&params, &demo.obs, ActMode::Deterministic, &mut rng).unwrap().to_array();
        for (x, t) in a.iter().zip(target) {
            assert!((x - t).abs() < 0.05, "{a:?}");
        }
    }

    #[test]
    fn bc_loss_decreases_and_likelihood_rises() {
        let mut spec = AgentSpec::new(Modality::Proprio);
        spec.hidden = vec![32, 32];
        let agent = Agent::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = agent.init(0.1, &mut rng);
        let demos: Vec<Transition> = (0..32)
            .map(|i| {
                let o = obs_with(i);
                let a = [-o.rel_pose.position.x * 30.0, -o.rel_pose.position.y * 30.0, -0.8, 0.0, 0.0, 0.0, -0.5];
                Transition {
                    action: Action::from_slice(&a).unwrap(),
                    obs: o,
                    ..transition(i, 0.0, false)
                }
            })
            .collect();
        let refs: Vec<&Transition> = demos.iter().collect();
        let before = bc_loss(&agent, &params, &refs).unwrap();
        let cfg = BcConfig {
            epochs: 150,
            batch_size: 32,
            lr: 1e-3,
        };
        let curve = bc_fit(&agent, &mut params, &demos, &cfg, &mut rng).unwrap();
        let after = bc_loss(&agent, &params, &refs).unwrap();
        assert!(after < before);
        // Full-batch steps: averaged over 10-step windows the curve never rises.
        let smooth: Vec<f64> = curve.chunks(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        for (i, w) in smooth.windows(2).enumerate() {
            assert!(w[1] <= w[0], "window {i}: {} → {}", w[0], w[1]);
        }
    }

    #[test]
    fn bc_rejects_empty_demos() {
        let agent = Agent::new(AgentSpec::new(Modality::Proprio)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = agent.init(0.1, &mut rng);
        assert!(matches!(bc_fit(&agent, &mut params, &[], &BcConfig::default(), &mut rng), Err(Error::EmptyDemos)));
    }

    #[test]
    fn augmentation_keeps_proprio() {
        let mut o = obs_with(1);
        let mut g = VoxelGrid::empty(crate::GridSpec::default());
        g.set(20, 20, 20);
        o.voxels = Some(Arc::new(g));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plain = ObsBatch::build::<ChaCha8Rng>(&[&o], Modality::Voxel, None).unwrap();
        let aug = ObsBatch::build(&[&o], Modality::Voxel, Some(&mut rng)).unwrap();
        assert_eq!(plain.proprio, aug.proprio);
    }
}

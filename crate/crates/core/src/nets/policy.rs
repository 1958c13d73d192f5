//! Tanh-squashed diagonal Gaussian policy head.
//!
//! The head consumes `[B, 2A]` network outputs: means followed by raw
//! log-std values, mapped into `[LOG_STD_MIN, LOG_STD_MAX]` through a tanh.

use super::tensor::Tensor;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Demonstrated actions are pulled this far inside `(−1, 1)` before `atanh`.
pub const ACTION_CLIP: f64 = 1e-3;

/// Sampled actions are kept this far inside `(−1, 1)`; `tanh` rounds to ±1
/// in floating point for `|u| ≳ 19`.
const SQUASH_MARGIN: f64 = 1e-9;

fn squash(u: f64) -> f64 {
    u.tanh().clamp(-1.0 + SQUASH_MARGIN, 1.0 - SQUASH_MARGIN)
}

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `log(1 − tanh²u)` in a form that stays finite for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

pub fn log_std(raw: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (raw.tanh() + 1.0)
}

fn dlog_std_draw(raw: f64) -> f64 {
    let t = raw.tanh();
    0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t * t)
}

/// Reparameterized sample `a = tanh(μ + σ·ε)` with its log-density.
#[derive(Clone, Debug)]
pub struct SquashedSample {
    pub action: Tensor,
    pub log_prob: Vec<f64>,
    eps: Tensor,
}

fn split(head: &Tensor) -> (usize, usize) {
    let b = head.rows();
    let a = head.row_len() / 2;
    (b, a)
}

pub fn sample(head: &Tensor, eps: &Tensor) -> SquashedSample {
    let (b, a) = split(head);
    debug_assert_eq!(eps.shape, vec![b, a]);
    let mut action = Tensor::zeros(&[b, a]);
    let mut log_prob = vec![0.0; b];
    for r in 0..b {
        let h = head.row(r);
        let mut lp = 0.0;
        for i in 0..a {
            let ls = log_std(h[a + i]);
            let e = eps.data[r * a + i];
            let u = h[i] + ls.exp() * e;
            action.data[r * a + i] = squash(u);
            lp += -0.5 * e * e - ls - HALF_LOG_2PI - log_one_minus_tanh_sq(u);
        }
        log_prob[r] = lp;
    }
    SquashedSample {
        action,
        log_prob,
        eps: eps.clone(),
    }
}

/// Gradient with respect to the head outputs given `∂L/∂a` and `∂L/∂log π`.
pub fn sample_backward(head: &Tensor, s: &SquashedSample, g_action: &Tensor, g_logp: &[f64]) -> Tensor {
    let (b, a) = split(head);
    let mut g = Tensor::zeros(&head.shape);
    for r in 0..b {
        let h = head.row(r);
        for i in 0..a {
            let ls = log_std(h[a + i]);
            let sd = ls.exp();
            let e = s.eps.data[r * a + i];
            let act = s.action.data[r * a + i];
            let gu = g_action.data[r * a + i] * (1.0 - act * act) + g_logp[r] * 2.0 * act;
            g.data[r * 2 * a + i] = gu;
            let g_ls = gu * sd * e - g_logp[r];
            g.data[r * 2 * a + a + i] = g_ls * dlog_std_draw(h[a + i]);
        }
    }
    g
}

fn pre_tanh(a: f64) -> f64 {
    a.clamp(-1.0 + ACTION_CLIP, 1.0 - ACTION_CLIP).atanh()
}

/// `log π(a | head)` for given actions.
pub fn log_prob(head: &Tensor, actions: &Tensor) -> Vec<f64> {
    let (b, a) = split(head);
    (0..b)
        .map(|r| {
            let h = head.row(r);
            (0..a)
                .map(|i| {
                    let ls = log_std(h[a + i]);
                    let u = pre_tanh(actions.data[r * a + i]);
                    let z = (u - h[i]) / ls.exp();
                    -0.5 * z * z - ls - HALF_LOG_2PI - log_one_minus_tanh_sq(u)
                })
                .sum()
        })
        .collect()
}

/// Gradient of `Σ_r g[r]·log π(a_r)` with respect to the head outputs.
pub fn log_prob_backward(head: &Tensor, actions: &Tensor, g: &[f64]) -> Tensor {
    let (b, a) = split(head);
    let mut out = Tensor::zeros(&head.shape);
    for r in 0..b {
        let h = head.row(r);
        for i in 0..a {
            let ls = log_std(h[a + i]);
            let sd = ls.exp();
            let u = pre_tanh(actions.data[r * a + i]);
            let z = (u - h[i]) / sd;
            out.data[r * 2 * a + i] = g[r] * z / sd;
            out.data[r * 2 * a + a + i] = g[r] * (z * z - 1.0) * dlog_std_draw(h[a + i]);
        }
    }
    out
}

/// Deterministic action `tanh(μ)`.
pub fn mode(head: &Tensor) -> Tensor {
    let (b, a) = split(head);
    let mut out = Tensor::zeros(&[b, a]);
    for r in 0..b {
        for i in 0..a {
            out.data[r * a + i] = squash(head.row(r)[i]);
        }
    }
    out
}

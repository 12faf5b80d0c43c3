use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gae::gae;
use super::policy::{Policy, PolicyInput};
use super::{mean_stderr, RlError};
use crate::autodiff::{Graph, Var};
use crate::env::{Action, Env, EnvConfig, Observation};
use crate::exec::{for_each_mut, Exec};
use crate::optim::{clip_grad_norm, Adam, AdamConfig};
use crate::real::Real;
use crate::rng::{self, streams};

/// Completed episodes averaged into each reward-curve point.
pub const CURVE_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub n_envs: usize,
    pub horizon: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            n_envs: 8,
            horizon: 128,
            minibatches: 4,
            lr: 2.5e-4,
            ent_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    fn check(&self) -> Result<(), RlError> {
        let bad = |what: &str| Err(RlError::Config(String::from(what)));
        if self.n_envs == 0 || self.horizon == 0 || self.epochs == 0 {
            return bad("n_envs, horizon and epochs must be positive");
        }
        if self.minibatches == 0 || self.minibatches > self.n_envs * self.horizon {
            return bad("minibatches must be in 1..=n_envs*horizon");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) || !(self.lr >= 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("clip and max_grad_norm must be positive, lr non-negative");
        }
        Ok(())
    }

    pub fn steps_per_update(&self) -> usize {
        self.n_envs * self.horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub timesteps: usize,
    pub mean: f64,
    pub stderr: Option<f64>,
    pub episodes: usize,
}

/// Mean reward of the most recent completed episodes after each update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardCurve {
    pub points: Vec<CurvePoint>,
    pub flags: Vec<String>,
}

/// One update's worth of transitions, laid out `[step][env]`.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub horizon: usize,
    pub input_dim: usize,
    pub inputs: Vec<f32>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value of the state after the last step, per env.
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Per-env GAE; returns are advantages plus value estimates.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let (e, t) = (self.n_envs, self.horizon);
        self.advantages = alloc::vec![0.0; e * t];
        for env in 0..e {
            let col = |v: &[f64]| (0..t).map(|s| v[s * e + env]).collect::<Vec<_>>();
            let dones: Vec<bool> = (0..t).map(|s| self.dones[s * e + env]).collect();
            let adv = gae(&col(&self.rewards), &col(&self.values), &dones, self.bootstrap[env], gamma, lambda);
            for (s, a) in adv.into_iter().enumerate() {
                self.advantages[s * e + env] = a;
            }
        }
        self.returns = self.advantages.iter().zip(&self.values).map(|(a, v)| a + v).collect();
    }

    /// Rescales advantages to mean 0, std 1.
    pub fn normalize_advantages(&mut self) {
        let (m, s) = mean_std(&self.advantages);
        let s = s + 1e-8;
        self.advantages.iter_mut().for_each(|a| *a = (*a - m) / s);
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len().max(1) as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn surrogate<T: Real>(g: &mut Graph<'_, T>, ratio: Var, adv: Var, eps: f64) -> Var {
    let unclipped = g.mul(ratio, adv);
    let clipped = g.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let clipped = g.mul(clipped, adv);
    g.minimum(unclipped, clipped)
}

pub struct Minibatch<'a> {
    pub inputs: &'a [f32],
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// PPO loss and its gradient with respect to `policy.params`.
pub fn ppo_loss(exec: &dyn Exec, policy: &Policy, mb: &Minibatch<'_>, cfg: &PpoConfig) -> (LossParts, Vec<f32>) {
    let m = mb.actions.len();
    let (d, k) = (policy.input_dim(), policy.n_actions);
    let mut g = Graph::<f32>::new(exec);
    let x = g.constant(mb.inputs.to_vec(), &[m, d]);
    let wp = policy.pi.bind(&mut g, policy.pi_params(), true);
    let wv = policy.vf.bind(&mut g, policy.vf_params(), true);

    let logits = policy.pi.forward(&mut g, &wp, x);
    let logp = g.log_softmax(logits);
    let mut onehot = alloc::vec![0.0f32; m * k];
    for (i, &a) in mb.actions.iter().enumerate() {
        onehot[i * k + a] = 1.0;
    }
    let onehot = g.constant(onehot, &[m, k]);
    let picked = g.mul(logp, onehot);
    let logp_a = g.sum_rows(picked);
    let old = g.constant(mb.old_log_probs.iter().map(|&v| v as f32).collect(), &[m]);
    let diff = g.sub(logp_a, old);
    let ratio = g.exp(diff);
    let adv = g.constant(mb.advantages.iter().map(|&v| v as f32).collect(), &[m]);
    let surr = surrogate(&mut g, ratio, adv, cfg.clip);
    let surr = g.mean(surr);
    let pg = g.neg(surr);

    let probs = g.exp(logp);
    let plogp = g.mul(probs, logp);
    let neg_ent = g.sum_rows(plogp);
    let neg_ent = g.mean(neg_ent);

    let v = policy.vf.forward(&mut g, &wv, x);
    let v = g.reshape(v, &[m]);
    let ret = g.constant(mb.returns.iter().map(|&v| v as f32).collect(), &[m]);
    let err = g.sub(v, ret);
    let sq = g.square(err);
    let vmse = g.mean(sq);
    let vloss = g.scale(vmse, 0.5);

    let weighted_v = g.scale(vloss, cfg.vf_coef);
    let weighted_e = g.scale(neg_ent, cfg.ent_coef);
    let total = g.add(pg, weighted_v);
    let total = g.add(total, weighted_e);

    let parts = LossParts {
        total: g.scalar(total) as f64,
        policy: g.scalar(pg) as f64,
        value: g.scalar(vloss) as f64,
        entropy: -(g.scalar(neg_ent) as f64),
    };
    let grads = g.backward(total);
    let mut flat = Vec::with_capacity(policy.params.len());
    for w in wp.iter().chain(&wv) {
        match grads.get(*w) {
            Some(d) => flat.extend_from_slice(d),
            None => flat.extend(core::iter::repeat_n(0.0, g.value(*w).len())),
        }
    }
    (parts, flat)
}

struct Slot {
    env: Box<dyn Env>,
    obs: Observation,
    gt: Vec<f64>,
    action: usize,
    reward: f64,
    done: bool,
    episode_return: f64,
    finished: Option<f64>,
    error: Option<crate::env::EnvError>,
}

impl Slot {
    fn step(&mut self) {
        self.finished = None;
        match self.env.step(&Action::Discrete(self.action)) {
            Ok(r) => {
                self.reward = r.reward;
                self.done = r.done;
                self.episode_return += r.reward;
                if r.done {
                    self.finished = Some(self.episode_return);
                    self.episode_return = 0.0;
                    let (obs, gt) = self.env.reset();
                    self.obs = obs;
                    self.gt = gt.values;
                } else {
                    self.obs = r.observation;
                    self.gt = r.ground_truth.values;
                }
            }
            Err(e) => self.error = Some(e),
        }
    }
}

/// Seed of training env `i`.
pub fn train_env_seed(seed: u64, i: usize) -> u64 {
    rng::mix(seed, 0x7261_696e_0000 + i as u64)
}

pub fn train_policy(
    exec: &dyn Exec,
    env_cfg: &EnvConfig,
    input: PolicyInput,
    cfg: &PpoConfig,
    budget: usize,
    seed: u64,
) -> Result<(Policy, RewardCurve), RlError> {
    train_policy_with(exec, env_cfg, input, cfg, budget, seed, &mut |_| {})
}

/// Trains for `ceil(budget / (n_envs * horizon))` updates, calling
/// `on_update` after each one.
pub fn train_policy_with(
    exec: &dyn Exec,
    env_cfg: &EnvConfig,
    input: PolicyInput,
    cfg: &PpoConfig,
    budget: usize,
    seed: u64,
    on_update: &mut dyn FnMut(&CurvePoint),
) -> Result<(Policy, RewardCurve), RlError> {
    cfg.check()?;
    let mut policy = Policy::for_env(input, env_cfg, seed)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, eps: 1e-5, ..AdamConfig::default() }, policy.params.len());
    let mut act_rng = rng::stream(seed, streams::POLICY);
    let mut shuffle_rng = rng::stream(seed, streams::SHUFFLE);

    let mut slots: Vec<Slot> = (0..cfg.n_envs)
        .map(|i| {
            let mut env = env_cfg.build(train_env_seed(seed, i));
            let (obs, gt) = env.reset();
            Slot {
                env,
                obs,
                gt: gt.values,
                action: 0,
                reward: 0.0,
                done: false,
                episode_return: 0.0,
                finished: None,
                error: None,
            }
        })
        .collect();

    let n_updates = budget.div_ceil(cfg.steps_per_update());
    let (e, t, d, k) = (cfg.n_envs, cfg.horizon, policy.input_dim(), policy.n_actions);
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(CURVE_WINDOW);
    let mut curve = RewardCurve { points: Vec::new(), flags: alloc::vec![String::from("advantages_normalized")] };
    let mut raw = slot_features(exec, &policy, &slots)?;

    for update in 0..n_updates {
        let mut buf = RolloutBuffer { n_envs: e, horizon: t, input_dim: d, ..Default::default() };
        for _ in 0..t {
            if let Some(n) = policy.normalizer.as_mut() {
                n.update(&raw);
            }
            let x = policy.prepare(&raw);
            let (probs, values) = policy.evaluate(exec, &x);
            for (slot, p) in slots.iter_mut().zip(probs.chunks(k)) {
                let a = sample(p, act_rng.random::<f64>());
                slot.action = a;
                buf.actions.push(a);
                buf.log_probs.push(p[a].max(f64::MIN_POSITIVE).ln());
            }
            buf.inputs.extend_from_slice(&x);
            buf.values.extend_from_slice(&values);
            for_each_mut(exec, &mut slots, |_, s| s.step());
            for s in &mut slots {
                if let Some(err) = s.error.take() {
                    return Err(RlError::Env(err));
                }
                buf.rewards.push(s.reward);
                buf.dones.push(s.done);
                if let Some(r) = s.finished {
                    if recent.len() == CURVE_WINDOW {
                        recent.pop_front();
                    }
                    recent.push_back(r);
                }
            }
            raw = slot_features(exec, &policy, &slots)?;
        }
        let (_, boot) = policy.evaluate(exec, &policy.prepare(&raw));
        buf.bootstrap = boot;
        buf.compute_advantages(cfg.gamma, cfg.lambda);
        buf.normalize_advantages();

        let n = buf.len();
        let mb_size = n / cfg.minibatches;
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            for mb in order.chunks(mb_size).take(cfg.minibatches) {
                let inputs: Vec<f32> = mb.iter().flat_map(|&i| buf.inputs[i * d..(i + 1) * d].iter().copied()).collect();
                let pick = |v: &[f64]| mb.iter().map(|&i| v[i]).collect::<Vec<_>>();
                let actions: Vec<usize> = mb.iter().map(|&i| buf.actions[i]).collect();
                let (old, adv, ret) = (pick(&buf.log_probs), pick(&buf.advantages), pick(&buf.returns));
                let batch = Minibatch { inputs: &inputs, actions: &actions, old_log_probs: &old, advantages: &adv, returns: &ret };
                let (loss, mut grad) = ppo_loss(exec, &policy, &batch, cfg);
                if !loss.total.is_finite() {
                    return Err(RlError::DivergedLoss { update });
                }
                clip_grad_norm(&mut grad, cfg.max_grad_norm);
                adam.step(&mut policy.params, &grad);
            }
        }
        if policy.params.iter().any(|p| !p.is_finite()) {
            return Err(RlError::DivergedLoss { update });
        }
        policy.timesteps += n;
        if !recent.is_empty() {
            let rs: Vec<f64> = recent.iter().copied().collect();
            let (mean, stderr) = mean_stderr(&rs);
            let point = CurvePoint { timesteps: policy.timesteps, mean, stderr, episodes: rs.len() };
            on_update(&point);
            curve.points.push(point);
        }
    }
    Ok((policy, curve))
}

fn slot_features(exec: &dyn Exec, policy: &Policy, slots: &[Slot]) -> Result<Vec<f32>, RlError> {
    let obs: Vec<&Observation> = slots.iter().map(|s| &s.obs).collect();
    let gt: Vec<&[f64]> = slots.iter().map(|s| s.gt.as_slice()).collect();
    policy.features(exec, &obs, &gt)
}

/// Inverse-CDF draw from a probability vector.
fn sample(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

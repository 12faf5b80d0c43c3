use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{mismatch, Architecture, Bound, ModelKind, SrlError};
use crate::autodiff::{Graph, Var};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorWeights {
    pub temporal: f64,
    pub proportionality: f64,
    pub causality: f64,
    pub repeatability: f64,
}

impl Default for PriorWeights {
    fn default() -> Self {
        Self { temporal: 1.0, proportionality: 1.0, causality: 1.0, repeatability: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub forward: f64,
    pub inverse: f64,
    pub priors: PriorWeights,
    /// Weight of the KL term of the VAE.
    pub vae_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { forward: 1.0, inverse: 1.0, priors: PriorWeights::default(), vae_beta: 1e-3 }
    }
}

impl LossWeights {
    /// Defaults for `kind`. The combined forward/inverse model weights the
    /// inverse term 0.8 and the forward term 0.2; with equal weights the
    /// forward term collapses the states before the inverse term can act.
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::ForwardInverse => Self { forward: 0.2, inverse: 0.8, ..Self::default() },
            _ => Self::default(),
        }
    }
}

/// One minibatch. Image tensors are `[n, 3 * image * image]` in `[0, 1]`.
#[derive(Debug, Clone, Default)]
pub struct LossBatch<T> {
    pub n: usize,
    pub obs: Vec<T>,
    /// Successor observations; required by transition-based models.
    pub next_obs: Vec<T>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `[n, gt_dim]`, required by the supervised model.
    pub ground_truth: Vec<T>,
    /// `[n, state_dim]` standard normal draws for the VAE.
    pub noise: Vec<T>,
}

pub struct LossOutput {
    pub total: Var,
    /// Unweighted terms, for logging.
    pub terms: Vec<(&'static str, Var)>,
    /// Conditions such as `insufficient_pairs:<term>`.
    pub flags: Vec<&'static str>,
}

/// Builds the training objective of `arch.kind` on `batch`.
pub fn compute_loss<T: Real>(
    g: &mut Graph<'_, T>,
    arch: &Architecture,
    bound: &Bound,
    batch: &LossBatch<T>,
    weights: &LossWeights,
) -> Result<LossOutput, SrlError> {
    let n = batch.n;
    let per = arch.input_len();
    if batch.obs.len() != n * per {
        return Err(mismatch(n * per, batch.obs.len()));
    }
    let d = arch.state_dim;
    let obs = g.constant(batch.obs.clone(), &[n, per]);
    let mut terms = Vec::new();
    let mut flags = Vec::new();
    let total = match arch.kind {
        ModelKind::Autoencoder => {
            let s = arch.encode_graph(g, bound, obs);
            let recon = reconstruction(g, arch, bound, s, obs)?;
            terms.push(("reconstruction", recon));
            recon
        }
        ModelKind::Vae => {
            if batch.noise.len() != n * d {
                return Err(mismatch(n * d, batch.noise.len()));
            }
            let h = arch.encoder.forward(g, &bound.encoder, obs);
            let mu = g.slice_cols(h, 0, d);
            let logvar = g.slice_cols(h, d, 2 * d);
            let half = g.scale(logvar, 0.5);
            let std = g.exp(half);
            let eps = g.constant(batch.noise.clone(), &[n, d]);
            let spread = g.mul(std, eps);
            let z = g.add(mu, spread);
            let recon = reconstruction(g, arch, bound, z, obs)?;
            let kl = kl_standard_normal(g, mu, logvar);
            terms.push(("reconstruction", recon));
            terms.push(("kl", kl));
            let weighted = g.scale(kl, weights.vae_beta);
            g.add(recon, weighted)
        }
        ModelKind::Supervised => {
            if batch.ground_truth.len() != n * d {
                return Err(mismatch(n * d, batch.ground_truth.len()));
            }
            let s = arch.encode_graph(g, bound, obs);
            let gt = g.constant(batch.ground_truth.clone(), &[n, d]);
            let diff = g.sub(s, gt);
            let sq = g.square(diff);
            let mse = g.mean(sq);
            terms.push(("supervised", mse));
            mse
        }
        ModelKind::RandomFeatures => {
            // Frozen: the objective is identically zero.
            let s = arch.encode_graph(g, bound, obs);
            let z = g.scale(s, 0.0);
            g.sum(z)
        }
        ModelKind::Forward | ModelKind::Inverse | ModelKind::ForwardInverse | ModelKind::Priors => {
            if batch.next_obs.len() != n * per {
                return Err(mismatch(n * per, batch.next_obs.len()));
            }
            if batch.actions.len() != n {
                return Err(mismatch(n, batch.actions.len()));
            }
            let mut both = batch.obs.clone();
            both.extend_from_slice(&batch.next_obs);
            let x = g.constant(both, &[2 * n, per]);
            let states = arch.encode_graph(g, bound, x);
            let first: Vec<usize> = (0..n).collect();
            let second: Vec<usize> = (n..2 * n).collect();
            let s = g.gather_rows(states, &first);
            let s_next = g.gather_rows(states, &second);
            match arch.kind {
                ModelKind::Forward => {
                    let f = forward_loss(g, arch, bound, s, s_next, &batch.actions)?;
                    terms.push(("forward", f));
                    f
                }
                ModelKind::Inverse => {
                    let i = inverse_loss(g, arch, bound, s, s_next, &batch.actions)?;
                    terms.push(("inverse", i));
                    i
                }
                ModelKind::ForwardInverse => {
                    let f = forward_loss(g, arch, bound, s, s_next, &batch.actions)?;
                    let i = inverse_loss(g, arch, bound, s, s_next, &batch.actions)?;
                    terms.push(("forward", f));
                    terms.push(("inverse", i));
                    let wf = g.scale(f, weights.forward);
                    let wi = g.scale(i, weights.inverse);
                    g.add(wf, wi)
                }
                _ => {
                    if batch.rewards.len() != n {
                        return Err(mismatch(n, batch.rewards.len()));
                    }
                    let p = priors(g, s, s_next, &batch.actions, &batch.rewards);
                    flags.extend(p.flags);
                    let w = weights.priors;
                    let mut total = g.scale(p.temporal, w.temporal);
                    for (name, var, weight) in [
                        ("proportionality", p.proportionality, w.proportionality),
                        ("causality", p.causality, w.causality),
                        ("repeatability", p.repeatability, w.repeatability),
                    ] {
                        let scaled = g.scale(var, weight);
                        total = g.add(total, scaled);
                        terms.push((name, var));
                    }
                    terms.insert(0, ("temporal", p.temporal));
                    total
                }
            }
        }
    };
    Ok(LossOutput { total, terms, flags })
}

fn reconstruction<T: Real>(g: &mut Graph<'_, T>, arch: &Architecture, bound: &Bound, s: Var, target: Var) -> Result<Var, SrlError> {
    let dec = arch.decoder.as_ref().ok_or(SrlError::MissingDecoder)?;
    let r = dec.forward(g, &bound.decoder, s);
    let r = g.flatten(r);
    let diff = g.sub(r, target);
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// `KL(N(mu, exp(logvar)) || N(0, 1))` summed over dimensions, averaged
/// over the batch.
pub(crate) fn kl_standard_normal<T: Real>(g: &mut Graph<'_, T>, mu: Var, logvar: Var) -> Var {
    let mu2 = g.square(mu);
    let var = g.exp(logvar);
    let a = g.add(mu2, var);
    let b = g.sub(a, logvar);
    let c = g.add_scalar(b, -1.0);
    let per_sample = g.sum_rows(c);
    let m = g.mean(per_sample);
    g.scale(m, 0.5)
}

fn one_hot<T: Real>(actions: &[usize], n_actions: usize) -> Result<Vec<T>, SrlError> {
    let mut out = vec![T::zero(); actions.len() * n_actions];
    for (i, &a) in actions.iter().enumerate() {
        if a >= n_actions {
            return Err(mismatch(alloc::format!("action < {n_actions}"), a));
        }
        out[i * n_actions + a] = T::one();
    }
    Ok(out)
}

fn forward_loss<T: Real>(g: &mut Graph<'_, T>, arch: &Architecture, bound: &Bound, s: Var, s_next: Var, actions: &[usize]) -> Result<Var, SrlError> {
    let head = arch.forward_head.as_ref().ok_or_else(|| SrlError::Config("model has no forward head".into()))?;
    let n = actions.len();
    let a = g.constant(one_hot(actions, arch.n_actions)?, &[n, arch.n_actions]);
    let input = g.concat_cols(s, a);
    let pred = head.forward(g, &bound.forward, input);
    let diff = g.sub(pred, s_next);
    let sq = g.square(diff);
    let sum = g.sum(sq);
    Ok(g.scale(sum, 1.0 / n as f64))
}

fn inverse_loss<T: Real>(g: &mut Graph<'_, T>, arch: &Architecture, bound: &Bound, s: Var, s_next: Var, actions: &[usize]) -> Result<Var, SrlError> {
    if arch.n_actions == 0 {
        return Err(SrlError::ContinuousActionUnsupported);
    }
    let head = arch.inverse_head.as_ref().ok_or_else(|| SrlError::Config("model has no inverse head".into()))?;
    let input = g.concat_cols(s, s_next);
    let logits = head.forward(g, &bound.inverse, input);
    cross_entropy(g, logits, actions, arch.n_actions)
}

/// Mean negative log-likelihood of `targets` under row-wise softmax.
pub(crate) fn cross_entropy<T: Real>(g: &mut Graph<'_, T>, logits: Var, targets: &[usize], k: usize) -> Result<Var, SrlError> {
    let n = targets.len();
    let ls = g.log_softmax(logits);
    let pick = g.constant(one_hot(targets, k)?, &[n, k]);
    let picked = g.mul(ls, pick);
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / n as f64))
}

pub(crate) struct PriorTerms {
    pub temporal: Var,
    pub proportionality: Var,
    pub causality: Var,
    pub repeatability: Var,
    pub flags: Vec<&'static str>,
}

/// Keeps the norm differentiable at zero displacement.
const NORM_EPS: f64 = 1e-8;

fn sq_norm_rows<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Var {
    let sq = g.square(x);
    g.sum_rows(sq)
}

pub(crate) fn priors<T: Real>(g: &mut Graph<'_, T>, s: Var, s_next: Var, actions: &[usize], rewards: &[f64]) -> PriorTerms {
    let n = actions.len();
    let delta = g.sub(s_next, s);
    let delta_sq = sq_norm_rows(g, delta);
    let temporal = g.mean(delta_sq);

    let mut same = (Vec::new(), Vec::new());
    let mut causal = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            if actions[i] == actions[j] {
                same.0.push(i);
                same.1.push(j);
                if rewards[i] != rewards[j] {
                    causal.0.push(i);
                    causal.1.push(j);
                }
            }
        }
    }
    let mut flags = Vec::new();
    let zero = |g: &mut Graph<'_, T>| g.constant(vec![T::zero()], &[1]);

    let (proportionality, repeatability) = if same.0.is_empty() {
        flags.push("insufficient_pairs:proportionality");
        flags.push("insufficient_pairs:repeatability");
        (zero(g), zero(g))
    } else {
        let eps = g.add_scalar(delta_sq, NORM_EPS);
        let norms = g.sqrt(eps);
        let ni = g.gather_rows(norms, &same.0);
        let nj = g.gather_rows(norms, &same.1);
        let dn = g.sub(ni, nj);
        let dn2 = g.square(dn);
        let prop = g.mean(dn2);

        let si = g.gather_rows(s, &same.0);
        let sj = g.gather_rows(s, &same.1);
        let ds = g.sub(si, sj);
        let dist = sq_norm_rows(g, ds);
        let neg = g.neg(dist);
        let sim = g.exp(neg);
        let di = g.gather_rows(delta, &same.0);
        let dj = g.gather_rows(delta, &same.1);
        let dd = g.sub(di, dj);
        let dd2 = sq_norm_rows(g, dd);
        let rep = g.mul(sim, dd2);
        (prop, g.mean(rep))
    };

    let causality = if causal.0.is_empty() {
        flags.push("insufficient_pairs:causality");
        zero(g)
    } else {
        let si = g.gather_rows(s, &causal.0);
        let sj = g.gather_rows(s, &causal.1);
        let ds = g.sub(si, sj);
        let dist = sq_norm_rows(g, ds);
        let neg = g.neg(dist);
        let sim = g.exp(neg);
        g.mean(sim)
    };

    PriorTerms { temporal, proportionality, causality, repeatability, flags }
}

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{compute_loss, images_to_input, Architecture, LossBatch, LossWeights, Model, ModelKind, SrlError};
use crate::autodiff::Graph;
use crate::exec::Exec;
use crate::real::Real;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{self, streams};
use crate::samples::SampleSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Caps the number of minibatches per epoch.
    pub max_batches_per_epoch: Option<usize>,
}

impl TrainConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: kind.default_batch_size(),
            epochs: 10,
            weights: LossWeights::for_kind(kind),
            seed: 0,
            max_batches_per_epoch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub term: String,
    pub value: f64,
}

/// Per-epoch mean of the total loss and of every term.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    /// Flags raised by any minibatch, deduplicated.
    pub flags: Vec<String>,
}

impl TrainingLog {
    pub fn series(&self, term: &str) -> Vec<f64> {
        self.entries.iter().filter(|e| e.term == term).map(|e| e.value).collect()
    }
}

fn check(samples: &SampleSet, arch: &Architecture, cfg: &TrainConfig) -> Result<(), SrlError> {
    arch.validate()?;
    if samples.width != arch.image || samples.height != arch.image {
        return Err(super::mismatch([arch.image, arch.image], [samples.width, samples.height]));
    }
    if cfg.batch_size == 0 {
        return Err(SrlError::Config("batch size must be positive".into()));
    }
    match arch.kind {
        ModelKind::Priors if cfg.batch_size < 2 => {
            return Err(SrlError::Config("robotic priors need a batch size of at least 2".into()))
        }
        ModelKind::ForwardInverse if !(cfg.weights.forward > 0.0 && cfg.weights.inverse > 0.0) => {
            return Err(SrlError::Config("forward and inverse weights must both be positive".into()))
        }
        ModelKind::Inverse | ModelKind::ForwardInverse if samples.n_actions == 0 => {
            return Err(SrlError::ContinuousActionUnsupported)
        }
        ModelKind::Supervised if samples.gt_dim != arch.state_dim => {
            return Err(super::mismatch(
                alloc::format!("state_dim == ground-truth dimension {}", samples.gt_dim),
                arch.state_dim,
            ))
        }
        _ => {}
    }
    if arch.kind.uses_transitions() && arch.n_actions != samples.n_actions {
        return Err(super::mismatch(samples.n_actions, arch.n_actions));
    }
    Ok(())
}

/// Trains a model of `arch.kind` with minibatch Adam.
pub fn train(exec: &dyn Exec, samples: &SampleSet, arch: Architecture, cfg: &TrainConfig) -> Result<(Model, TrainingLog), SrlError> {
    train_with(exec, samples, arch, cfg, &mut |_, _| {})
}

/// Like [`train`], calling `on_epoch(epoch, total)` after every epoch.
pub fn train_with(
    exec: &dyn Exec,
    samples: &SampleSet,
    arch: Architecture,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<(Model, TrainingLog), SrlError> {
    check(samples, &arch, cfg)?;
    let mut model = Model::initialized(arch, cfg.seed);
    let mut log = TrainingLog::default();
    if model.arch.kind == ModelKind::RandomFeatures {
        return Ok((model, log));
    }
    let mut pool: Vec<usize> = if model.arch.kind.uses_transitions() { samples.transitions() } else { (0..samples.len()).collect() };
    let min_batch = if model.arch.kind == ModelKind::Priors { 2 } else { 1 };
    if pool.len() < min_batch {
        return Err(SrlError::Config("dataset has too few usable records".into()));
    }
    let mut shuffle = rng::stream(cfg.seed, streams::SHUFFLE);
    let mut noise = rng::stream(cfg.seed, streams::NOISE);
    let mut opt = Adam::new(cfg.adam, model.params.len());

    for epoch in 0..cfg.epochs {
        pool.shuffle(&mut shuffle);
        let mut sums: Vec<(String, f64)> = Vec::new();
        let mut batches = 0usize;
        for idx in pool.chunks(cfg.batch_size) {
            if idx.len() < min_batch {
                continue;
            }
            if cfg.max_batches_per_epoch.is_some_and(|m| batches >= m) {
                break;
            }
            let batch = make_batch::<f32>(samples, &model.arch, idx, &mut noise);
            let mut g = Graph::<f32>::new(exec);
            let bound = model.arch.bind(&mut g, &model.params, true);
            let out = compute_loss(&mut g, &model.arch, &bound, &batch, &cfg.weights)?;
            let total = g.scalar(out.total) as f64;
            if !total.is_finite() {
                return Err(SrlError::DivergedLoss { epoch });
            }
            add(&mut sums, "total", total);
            for (name, v) in &out.terms {
                add(&mut sums, name, g.scalar(*v) as f64);
            }
            for f in &out.flags {
                if !log.flags.iter().any(|x| x == f) {
                    log.flags.push(f.to_string());
                }
            }
            let grads = g.backward(out.total);
            let flat = bound.flat_grad(&g, &grads);
            drop(grads);
            drop(g);
            opt.step(&mut model.params, &flat);
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(SrlError::DivergedLoss { epoch });
            }
            batches += 1;
        }
        let denom = batches.max(1) as f64;
        for (term, sum) in sums {
            log.entries.push(LogEntry { epoch, term, value: sum / denom });
        }
        on_epoch(epoch, log.entries.iter().rev().find(|e| e.term == "total").map_or(f64::NAN, |e| e.value));
    }
    Ok((model, log))
}

fn add(sums: &mut Vec<(String, f64)>, name: &str, value: f64) {
    match sums.iter_mut().find(|(n, _)| n == name) {
        Some((_, s)) => *s += value,
        None => sums.push((name.to_string(), value)),
    }
}

/// Assembles the minibatch for records `idx` (transition starts for
/// transition-based models).
pub fn make_batch<T: Real>(samples: &SampleSet, arch: &Architecture, idx: &[usize], noise: &mut impl Rng) -> LossBatch<T> {
    let n = idx.len();
    let mut batch = LossBatch { n, obs: images_to_input(samples, idx), ..Default::default() };
    match arch.kind {
        ModelKind::Vae => {
            batch.noise = (0..n * arch.state_dim).map(|_| T::of(noise.sample::<f64, _>(StandardNormal))).collect();
        }
        ModelKind::Supervised => {
            batch.ground_truth = idx.iter().flat_map(|&i| samples.gt(i).iter().map(|&v| T::of(v as f64))).collect();
        }
        kind if kind.uses_transitions() => {
            let next: Vec<usize> = idx.iter().map(|&i| i + 1).collect();
            batch.next_obs = images_to_input(samples, &next);
            batch.actions = idx.iter().map(|&i| samples.actions[i].max(0) as usize).collect();
            batch.rewards = idx.iter().map(|&i| samples.rewards[i] as f64).collect();
        }
        _ => {}
    }
    batch
}

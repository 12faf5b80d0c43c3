//! State representation models: encoders from images to low-dimensional
//! states, their auxiliary heads, and the training objectives.

mod gradcheck;
mod loss;
mod train;

pub use loss::{compute_loss, LossBatch, LossOutput, LossWeights, PriorWeights};
pub use gradcheck::{gradient_check, GradCheck};
pub use train::{make_batch, train, train_with, LogEntry, TrainConfig, TrainingLog};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Gradients, Graph, Var};
use crate::exec::Exec;
use crate::linalg::Matrix;
use crate::nn::{self, Net};
use crate::raster::Observation;
use crate::real::Real;
use crate::samples::SampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Autoencoder,
    Vae,
    Forward,
    Inverse,
    ForwardInverse,
    Priors,
    Supervised,
    RandomFeatures,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Autoencoder,
        ModelKind::Vae,
        ModelKind::Forward,
        ModelKind::Inverse,
        ModelKind::ForwardInverse,
        ModelKind::Priors,
        ModelKind::Supervised,
        ModelKind::RandomFeatures,
    ];

    /// Short name used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Autoencoder => "ae",
            ModelKind::Vae => "vae",
            ModelKind::Forward => "forward",
            ModelKind::Inverse => "inverse",
            ModelKind::ForwardInverse => "fwd+inv",
            ModelKind::Priors => "priors",
            ModelKind::Supervised => "supervised",
            ModelKind::RandomFeatures => "random",
        }
    }

    pub fn parse(name: &str) -> Option<ModelKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn has_decoder(self) -> bool {
        matches!(self, ModelKind::Autoencoder | ModelKind::Vae)
    }

    pub fn uses_transitions(self) -> bool {
        matches!(self, ModelKind::Forward | ModelKind::Inverse | ModelKind::ForwardInverse | ModelKind::Priors)
    }

    /// Minibatch size used when none is configured.
    pub fn default_batch_size(self) -> usize {
        match self {
            ModelKind::Forward | ModelKind::Inverse | ModelKind::ForwardInverse => 128,
            ModelKind::Priors => 256,
            _ => 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Three stride-2 convolutions, for 64x64 inputs.
    Small,
    /// Conv/max-pool stack for 224x224 inputs.
    Deep,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SrlError {
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("model has no decoder")]
    MissingDecoder,
    #[error("inverse models need a discrete action space")]
    ContinuousActionUnsupported,
    #[error("loss diverged (non-finite) in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("state set is empty")]
    EmptyStateSet,
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn mismatch(expected: impl core::fmt::Debug, found: impl core::fmt::Debug) -> SrlError {
    SrlError::ShapeMismatch { expected: alloc::format!("{expected:?}"), found: alloc::format!("{found:?}") }
}

/// Self-describing network layout of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    pub state_dim: usize,
    /// Side length of the square RGB input.
    pub image: usize,
    pub n_actions: usize,
    /// Maps an image to the state (VAE: to mean and log-variance).
    pub encoder: Net,
    pub decoder: Option<Net>,
    /// `[state, onehot(action)] -> next state`.
    pub forward_head: Option<Net>,
    /// `[state, next state] -> action logits`.
    pub inverse_head: Option<Net>,
}

impl Architecture {
    /// `head_hidden == 0` gives linear forward/inverse heads.
    pub fn new(kind: ModelKind, state_dim: usize, image: usize, n_actions: usize, backbone: Backbone, head_hidden: usize) -> Self {
        let enc_out = if kind == ModelKind::Vae { 2 * state_dim } else { state_dim };
        let encoder = match backbone {
            Backbone::Small => nn::small_encoder(image, enc_out),
            Backbone::Deep => nn::deep_encoder(image, enc_out),
        };
        let head = |inputs: usize, outputs: usize| {
            let hidden: &[usize] = if head_hidden == 0 { &[] } else { &[head_hidden] };
            nn::mlp(inputs, hidden, outputs)
        };
        let fwd = matches!(kind, ModelKind::Forward | ModelKind::ForwardInverse);
        let inv = matches!(kind, ModelKind::Inverse | ModelKind::ForwardInverse);
        Self {
            kind,
            state_dim,
            image,
            n_actions,
            encoder,
            decoder: kind.has_decoder().then(|| nn::small_decoder(state_dim, image)),
            forward_head: fwd.then(|| head(state_dim + n_actions, state_dim)),
            inverse_head: inv.then(|| head(2 * state_dim, n_actions)),
        }
    }

    fn nets(&self) -> [Option<&Net>; 4] {
        [Some(&self.encoder), self.decoder.as_ref(), self.forward_head.as_ref(), self.inverse_head.as_ref()]
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().flatten().map(|n| n.param_count()).sum()
    }

    pub fn input_len(&self) -> usize {
        3 * self.image * self.image
    }

    /// Checks that every network is internally consistent.
    pub fn validate(&self) -> Result<(), SrlError> {
        let enc_out = if self.kind == ModelKind::Vae { 2 * self.state_dim } else { self.state_dim };
        if self.encoder.input != [3, self.image, self.image] {
            return Err(mismatch([3, self.image, self.image], &self.encoder.input));
        }
        match self.encoder.output_shape() {
            Ok(s) if s == [enc_out] => {}
            other => return Err(mismatch([enc_out], other)),
        }
        for net in self.nets().iter().skip(1).flatten() {
            net.output_shape().map_err(|e| SrlError::Config(alloc::format!("{e}")))?;
        }
        if self.state_dim == 0 {
            return Err(SrlError::Config("state_dim must be positive".into()));
        }
        Ok(())
    }

    /// Initial parameters for every network, in layout order.
    pub fn init(&self, rng: &mut impl rand::Rng) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for net in self.nets().into_iter().flatten() {
            out.extend(net.init(rng));
        }
        out
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<'_, T>, params: &[T], trainable: bool) -> Bound {
        assert_eq!(params.len(), self.param_count(), "parameter vector does not match architecture");
        let mut at = 0;
        let mut parts: [Vec<Var>; 4] = Default::default();
        for (slot, net) in parts.iter_mut().zip(self.nets()) {
            if let Some(net) = net {
                let n = net.param_count();
                *slot = net.bind(g, &params[at..at + n], trainable);
                at += n;
            }
        }
        let [encoder, decoder, forward, inverse] = parts;
        Bound { encoder, decoder, forward, inverse }
    }

    /// Encoder output rows for `obs` (`[n, 3 * image * image]`, values in `[0, 1]`).
    /// For the VAE this is the mean head.
    pub fn encode_graph<T: Real>(&self, g: &mut Graph<'_, T>, bound: &Bound, obs: Var) -> Var {
        let h = self.encoder.forward(g, &bound.encoder, obs);
        if self.kind == ModelKind::Vae {
            g.slice_cols(h, 0, self.state_dim)
        } else {
            h
        }
    }
}

/// Graph leaves for each network of an [`Architecture`].
#[derive(Debug, Clone, Default)]
pub struct Bound {
    pub encoder: Vec<Var>,
    pub decoder: Vec<Var>,
    pub forward: Vec<Var>,
    pub inverse: Vec<Var>,
}

impl Bound {
    /// Flattens parameter gradients back into layout order.
    pub fn flat_grad<T: Real>(&self, g: &Graph<'_, T>, grads: &Gradients<T>) -> Vec<T> {
        let mut out = Vec::new();
        for v in self.encoder.iter().chain(&self.decoder).chain(&self.forward).chain(&self.inverse) {
            match grads.get(*v) {
                Some(d) => out.extend_from_slice(d),
                None => out.extend(core::iter::repeat_n(T::zero(), g.value(*v).len())),
            }
        }
        out
    }
}

/// Converts stored RGB records to channel-major model input in `[0, 1]`.
pub fn images_to_input<T: Real>(samples: &SampleSet, indices: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(indices.len() * samples.image_bytes());
    for &i in indices {
        push_chw(samples.image(i), samples.width * samples.height, &mut out);
    }
    out
}

pub fn observation_to_input<T: Real>(obs: &Observation) -> Vec<T> {
    let mut out = Vec::with_capacity(obs.data.len());
    push_chw(&obs.data, obs.width * obs.height, &mut out);
    out
}

fn push_chw<T: Real>(rgb: &[u8], pixels: usize, out: &mut Vec<T>) {
    let scale = T::of(1.0 / 255.0);
    for c in 0..3 {
        out.extend((0..pixels).map(|p| T::of(rgb[p * 3 + c] as f64) * scale));
    }
}

/// Channel-major `[0, 1]` values back to RGB bytes, clamping out-of-range values.
pub fn output_to_observation<T: Real>(values: &[T], side: usize) -> Observation {
    let pixels = side * side;
    let mut data = vec![0u8; pixels * 3];
    for c in 0..3 {
        for p in 0..pixels {
            let v = values[c * pixels + p].f64();
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            data[p * 3 + c] = (v * 255.0 + 0.5) as u8;
        }
    }
    Observation { width: side, height: side, data }
}

/// Encoder architecture together with trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub params: Vec<f32>,
}

const ENCODE_BATCH: usize = 64;

impl Model {
    pub fn new(arch: Architecture, params: Vec<f32>) -> Result<Self, SrlError> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(mismatch(arch.param_count(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(SrlError::Config("non-finite parameter".into()));
        }
        Ok(Self { arch, params })
    }

    /// Freshly initialized model from the `INIT` stream of `seed`.
    pub fn initialized(arch: Architecture, seed: u64) -> Self {
        let params = arch.init(&mut crate::rng::stream(seed, crate::rng::streams::INIT));
        Self { arch, params }
    }

    pub fn state_dim(&self) -> usize {
        self.arch.state_dim
    }

    fn check_image(&self, width: usize, height: usize) -> Result<(), SrlError> {
        if width != self.arch.image || height != self.arch.image {
            return Err(mismatch([self.arch.image, self.arch.image], [width, height]));
        }
        Ok(())
    }

    /// Encodes flat `[n, 3 * image * image]` input.
    pub fn encode_input(&self, exec: &dyn Exec, input: &[f32]) -> Vec<f32> {
        let per = self.arch.input_len();
        let n = input.len() / per;
        let mut out = Vec::with_capacity(n * self.arch.state_dim);
        for chunk in input.chunks(per * ENCODE_BATCH) {
            let mut g = Graph::<f32>::new(exec);
            let bound = self.arch.bind(&mut g, &self.params, false);
            let x = g.constant(chunk.to_vec(), &[chunk.len() / per, per]);
            let s = self.arch.encode_graph(&mut g, &bound, x);
            out.extend_from_slice(g.value(s));
        }
        out
    }

    /// States of every record, one row per record.
    pub fn encode_samples(&self, exec: &dyn Exec, samples: &SampleSet) -> Result<Matrix, SrlError> {
        self.check_image(samples.width, samples.height)?;
        let mut data = Vec::with_capacity(samples.len() * self.arch.state_dim);
        let all: Vec<usize> = (0..samples.len()).collect();
        for idx in all.chunks(ENCODE_BATCH) {
            let input = images_to_input::<f32>(samples, idx);
            data.extend(self.encode_input(exec, &input).into_iter().map(|v| v as f64));
        }
        Ok(Matrix::from_vec(samples.len(), self.arch.state_dim, data))
    }

    pub fn encode_observation(&self, exec: &dyn Exec, obs: &Observation) -> Result<Vec<f32>, SrlError> {
        self.check_image(obs.width, obs.height)?;
        Ok(self.encode_input(exec, &observation_to_input(obs)))
    }

    /// Decoder image for a state vector. Pixels are clamped, so any finite
    /// state yields a valid image.
    pub fn decode(&self, exec: &dyn Exec, state: &[f32]) -> Result<Observation, SrlError> {
        if self.arch.decoder.is_none() {
            return Err(SrlError::MissingDecoder);
        }
        if state.len() != self.arch.state_dim {
            return Err(mismatch(self.arch.state_dim, state.len()));
        }
        let mut g = Graph::<f32>::new(exec);
        let bound = self.arch.bind(&mut g, &self.params, false);
        let s = g.constant(state.to_vec(), &[1, state.len()]);
        let y = self.arch.decoder.as_ref().unwrap().forward(&mut g, &bound.decoder, s);
        Ok(output_to_observation(g.value(y), self.arch.image))
    }
}

/// Index of the row of `states` closest to `query` in Euclidean distance;
/// ties go to the lower index.
pub fn nearest_index(query: &[f64], states: &Matrix) -> Result<usize, SrlError> {
    if states.rows == 0 {
        return Err(SrlError::EmptyStateSet);
    }
    if query.len() != states.cols {
        return Err(mismatch(states.cols, query.len()));
    }
    let mut best = (f64::INFINITY, 0);
    for i in 0..states.rows {
        let d: f64 = states.row(i).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best.1)
}

/// The stored observation whose state is nearest to `query`.
pub fn nearest_decode(query: &[f64], states: &Matrix, samples: &SampleSet) -> Result<(usize, Observation), SrlError> {
    if states.rows != samples.len() {
        return Err(mismatch(samples.len(), states.rows));
    }
    let i = nearest_index(query, states)?;
    Ok((i, samples.observation(i)))
}


#[cfg(test)]
mod family_tests;

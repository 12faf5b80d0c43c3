use alloc::vec::Vec;

use super::normalizer::RunningNorm;
use super::RlError;
use crate::autodiff::Graph;
use crate::env::{EnvConfig, Observation};
use crate::exec::Exec;
use crate::nn::{self, Layer, Net};
use crate::rng::{self, streams};
use crate::srl::{observation_to_input, Model};

/// Side of the downsampled image fed to pixel policies.
pub const PIXEL_SIDE: usize = 64;
pub const HIDDEN: usize = 64;
const PI_OUTPUT_GAIN: f32 = 0.01;

/// What the policy observes.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyInput {
    GroundTruth,
    /// States from a frozen encoder.
    LearnedStates(Model),
    RawPixels,
}

impl PolicyInput {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyInput::GroundTruth => "ground_truth",
            PolicyInput::LearnedStates(_) => "learned",
            PolicyInput::RawPixels => "pixels",
        }
    }

    /// Width of the feature vector for an env with `gt_dim` ground-truth values.
    pub fn dim(&self, gt_dim: usize) -> usize {
        match self {
            PolicyInput::GroundTruth => gt_dim,
            PolicyInput::LearnedStates(m) => m.state_dim(),
            PolicyInput::RawPixels => 3 * PIXEL_SIDE * PIXEL_SIDE,
        }
    }
}

/// Separate actor and critic networks over the same input.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub input: PolicyInput,
    pub n_actions: usize,
    pub pi: Net,
    pub vf: Net,
    /// Actor parameters followed by critic parameters.
    pub params: Vec<f32>,
    /// Present for state inputs, absent for pixels.
    pub normalizer: Option<RunningNorm>,
    /// Environment steps used for training.
    pub timesteps: usize,
}

fn pixel_net(outputs: usize) -> Net {
    let s = PIXEL_SIDE / 8;
    Net::new(
        &[3, PIXEL_SIDE, PIXEL_SIDE],
        alloc::vec![
            Layer::Conv2d { in_ch: 3, out_ch: 16, kernel: 3, stride: 2, pad: 1 },
            Layer::Relu,
            Layer::Conv2d { in_ch: 16, out_ch: 32, kernel: 3, stride: 2, pad: 1 },
            Layer::Relu,
            Layer::Conv2d { in_ch: 32, out_ch: 32, kernel: 3, stride: 2, pad: 1 },
            Layer::Relu,
            Layer::Flatten,
            Layer::Linear { inputs: 32 * s * s, outputs: HIDDEN },
            Layer::Relu,
            Layer::Linear { inputs: HIDDEN, outputs },
        ],
    )
}

impl Policy {
    pub fn new(input: PolicyInput, gt_dim: usize, n_actions: usize, seed: u64) -> Self {
        let dim = input.dim(gt_dim);
        let (pi, vf, normalizer) = match input {
            PolicyInput::RawPixels => (pixel_net(n_actions), pixel_net(1), None),
            _ => (
                nn::mlp(dim, &[HIDDEN, HIDDEN], n_actions),
                nn::mlp(dim, &[HIDDEN, HIDDEN], 1),
                Some(RunningNorm::new(dim)),
            ),
        };
        let mut rng = rng::stream(seed, streams::INIT);
        let mut params = pi.init(&mut rng);
        // Start near the uniform distribution.
        let last = HIDDEN * n_actions + n_actions;
        let n_pi = params.len();
        params[n_pi - last..].iter_mut().for_each(|w| *w *= PI_OUTPUT_GAIN);
        params.extend(vf.init(&mut rng));
        Self { input, n_actions, pi, vf, params, normalizer, timesteps: 0 }
    }

    pub fn for_env(input: PolicyInput, env: &EnvConfig, seed: u64) -> Result<Self, RlError> {
        let n_actions = env.action_space().n().ok_or(RlError::ContinuousActions)?;
        if let PolicyInput::LearnedStates(m) = &input {
            let image = env.image();
            if m.arch.image != image.width || m.arch.image != image.height {
                return Err(RlError::Config(alloc::format!(
                    "encoder expects {0}x{0} images, env renders {1}x{2}",
                    m.arch.image,
                    image.width,
                    image.height
                )));
            }
        }
        Ok(Self::new(input, env.ground_truth_layout().len(), n_actions, seed))
    }

    pub fn input_dim(&self) -> usize {
        self.pi.input_len()
    }

    pub fn pi_params(&self) -> &[f32] {
        &self.params[..self.pi.param_count()]
    }

    pub fn vf_params(&self) -> &[f32] {
        &self.params[self.pi.param_count()..]
    }

    /// Raw (unnormalized) features for a batch of env outputs.
    pub fn features(&self, exec: &dyn Exec, obs: &[&Observation], gt: &[&[f64]]) -> Result<Vec<f32>, RlError> {
        match &self.input {
            PolicyInput::GroundTruth => Ok(gt.iter().flat_map(|g| g.iter().map(|&v| v as f32)).collect()),
            PolicyInput::LearnedStates(model) => {
                let mut input = Vec::with_capacity(obs.len() * model.arch.input_len());
                for o in obs {
                    if o.width != model.arch.image || o.height != model.arch.image {
                        return Err(RlError::Config(alloc::format!(
                            "observation is {}x{}, encoder expects {}",
                            o.width,
                            o.height,
                            model.arch.image
                        )));
                    }
                    input.extend(observation_to_input::<f32>(o));
                }
                Ok(model.encode_input(exec, &input))
            }
            PolicyInput::RawPixels => Ok(obs
                .iter()
                .flat_map(|o| {
                    let small = if o.width == PIXEL_SIDE && o.height == PIXEL_SIDE {
                        (*o).clone()
                    } else {
                        o.resize_nearest(PIXEL_SIDE, PIXEL_SIDE)
                    };
                    observation_to_input::<f32>(&small)
                })
                .collect()),
        }
    }

    /// Network input for raw features.
    pub fn prepare(&self, raw: &[f32]) -> Vec<f32> {
        match &self.normalizer {
            Some(n) => n.apply(raw),
            None => raw.to_vec(),
        }
    }

    /// Action probabilities (`[n, n_actions]`) and value estimates for
    /// prepared inputs.
    pub fn evaluate(&self, exec: &dyn Exec, x: &[f32]) -> (Vec<f64>, Vec<f64>) {
        let d = self.input_dim();
        let n = x.len() / d;
        let mut g = Graph::<f32>::new(exec);
        let input = g.constant(x.to_vec(), &[n, d]);
        let wp = self.pi.bind(&mut g, self.pi_params(), false);
        let wv = self.vf.bind(&mut g, self.vf_params(), false);
        let logits = self.pi.forward(&mut g, &wp, input);
        let logp = g.log_softmax(logits);
        let v = self.vf.forward(&mut g, &wv, input);
        let probs = g.value(logp).iter().map(|&l| (l as f64).exp()).collect();
        let values = g.value(v).iter().map(|&v| v as f64).collect();
        (probs, values)
    }

    /// Greedy actions for a batch of env outputs.
    pub fn act_greedy(&self, exec: &dyn Exec, obs: &[&Observation], gt: &[&[f64]]) -> Result<Vec<usize>, RlError> {
        let x = self.prepare(&self.features(exec, obs, gt)?);
        let (probs, _) = self.evaluate(exec, &x);
        Ok(probs.chunks(self.n_actions).map(argmax).collect())
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

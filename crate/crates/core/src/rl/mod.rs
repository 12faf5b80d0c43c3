//! Policy optimization with a clipped-surrogate actor-critic learner.

use thiserror::Error;

use crate::env::EnvError;
use crate::srl::SrlError;

pub mod eval;
pub mod gae;
pub mod normalizer;
pub mod oracle;
pub mod policy;
pub mod ppo;

pub use eval::{evaluate_policy, Agent, EvalReport};
pub use gae::gae;
pub use normalizer::RunningNorm;
pub use policy::{Policy, PolicyInput};
pub use ppo::{train_policy, train_policy_with, CurvePoint, PpoConfig, RewardCurve, RolloutBuffer};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlError {
    #[error("loss or parameters became non-finite during update {update}")]
    DivergedLoss { update: usize },
    #[error("policies need a discrete action space")]
    ContinuousActions,
    #[error("invalid configuration: {0}")]
    Config(alloc::string::String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Srl(#[from] SrlError),
}

/// Mean and standard error (sample std over sqrt n); the error is absent
/// below two samples.
pub fn mean_stderr(x: &[f64]) -> (f64, Option<f64>) {
    let n = x.len();
    if n == 0 {
        return (0.0, None);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

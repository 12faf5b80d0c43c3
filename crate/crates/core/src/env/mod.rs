//! Gym-style environment contract and the concrete robot tasks.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{self, RenderConfig, SceneDescription};

pub mod arm;
pub mod config;
pub mod kinematics;
pub mod mobile;

pub use crate::raster::Observation;
pub use arm::ArmEnv;
pub use config::{ActionMode, ArmEnvConfig, DistractorMotion, EnvConfig, MobileEnvConfig, RewardMode, TargetMode, TargetShape};
pub use mobile::MobileEnv;

/// Default episode length cap.
pub const MAX_STEPS: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn continuous(dim: usize, low: f64, high: f64) -> Self {
        ActionSpace::Continuous { low: alloc::vec![low; dim], high: alloc::vec![high; dim] }
    }

    /// Number of discrete actions, `None` for continuous spaces.
    pub fn n(&self) -> Option<usize> {
        match self {
            ActionSpace::Discrete(n) => Some(*n),
            ActionSpace::Continuous { .. } => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            ActionSpace::Discrete(n) => *n >= 2,
            ActionSpace::Continuous { low, high } => {
                !low.is_empty() && low.len() == high.len() && low.iter().zip(high).all(|(l, h)| l < h)
            }
        }
    }

    /// Checks `action` against this space and clamps continuous components
    /// into `[low, high]`.
    pub fn validate(&self, action: &Action) -> Result<Action, EnvError> {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if a < n => Ok(action.clone()),
            (ActionSpace::Discrete(n), Action::Discrete(a)) => {
                Err(EnvError::InvalidAction(alloc::format!("index {a} outside 0..{n}")))
            }
            (ActionSpace::Continuous { low, high }, Action::Continuous(v)) => {
                if v.len() != low.len() {
                    return Err(EnvError::InvalidAction(alloc::format!(
                        "expected {} components, got {}",
                        low.len(),
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(EnvError::InvalidAction("non-finite component".into()));
                }
                Ok(Action::Continuous(
                    v.iter().zip(low.iter().zip(high)).map(|(x, (l, h))| x.clamp(*l, *h)).collect(),
                ))
            }
            _ => Err(EnvError::InvalidAction("action kind does not match the action space".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// True low-dimensional state, in world units.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthState {
    pub values: Vec<f64>,
    pub layout: &'static [&'static str],
}

/// What happened during a step, besides the numeric reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepEvent {
    None,
    WallHit,
    TargetReached,
    ButtonPressed,
    TableHit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub ground_truth: GroundTruthState,
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("episode is done; call reset before stepping")]
    EpisodeDone,
}

/// Goal-based robot environment.
///
/// A freshly built environment is in the done state: call
/// [`reset`](Env::reset) before the first [`step`](Env::step).
pub trait Env: Send {
    fn action_space(&self) -> ActionSpace;
    fn ground_truth_layout(&self) -> &'static [&'static str];

    /// Reseeds every random stream of the environment.
    fn seed(&mut self, seed: u64);
    fn reset(&mut self) -> (Observation, GroundTruthState);
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;

    fn ground_truth(&self) -> GroundTruthState;
    /// Robot position expressed relative to the target.
    fn relative_ground_truth(&self) -> Vec<f64>;

    fn scene(&self) -> SceneDescription;
    fn render_config(&self) -> RenderConfig;
    fn render(&self) -> Observation {
        raster::render(&self.scene(), self.render_config())
    }

    fn step_count(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn is_done(&self) -> bool;
}

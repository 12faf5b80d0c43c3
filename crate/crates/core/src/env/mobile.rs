//! Top-down navigation: a disc-shaped robot in the unit-square arena must
//! reach a disc or horizontal-band target.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::config::{ActionMode, MobileEnvConfig, RewardMode, TargetMode, TargetShape};
use super::{Action, ActionSpace, Env, EnvError, GroundTruthState, Observation, StepEvent, StepResult};
use crate::raster::{Color, Projection, RenderConfig, SceneDescription, Shape};
use crate::rng::{self, streams, StreamRng};

pub const ROBOT_RADIUS: f64 = 0.05;
pub const TARGET_RADIUS: f64 = 0.05;
pub const BAND_HALF_HEIGHT: f64 = 0.05;
pub const STEP: f64 = 0.05;
pub const WALL_THICKNESS: f64 = 0.02;
pub const STATIC_TARGET: [f64; 2] = [0.7, 0.7];
pub const STATIC_BAND_Y: f64 = 0.75;
/// Centre-to-centre distance at which a disc target counts as reached.
pub const REACH_DISTANCE: f64 = ROBOT_RADIUS + TARGET_RADIUS;
const TOUCH_EPS: f64 = 1e-9;

const STATIC_LAYOUT: &[&str] = &["x_robot", "y_robot"];
const RANDOM_LAYOUT: &[&str] = &["x_robot", "y_robot", "x_target", "y_target"];

/// Discrete action indices, in dataset encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MobileAction {
    Right = 0,
    Left = 1,
    Forward = 2,
    Backward = 3,
}

impl MobileAction {
    pub const ALL: [MobileAction; 4] = [Self::Right, Self::Left, Self::Forward, Self::Backward];

    pub fn displacement(self) -> [f64; 2] {
        match self {
            Self::Right => [STEP, 0.0],
            Self::Left => [-STEP, 0.0],
            Self::Forward => [0.0, STEP],
            Self::Backward => [0.0, -STEP],
        }
    }
}

/// Applies a displacement; a move that would make the robot disc touch
/// the arena boundary is rejected and reported as a wall hit.
pub fn mobile_dynamics(pos: [f64; 2], delta: [f64; 2]) -> ([f64; 2], bool) {
    let next = [pos[0] + delta[0], pos[1] + delta[1]];
    let touches = next.iter().any(|&c| c - ROBOT_RADIUS <= TOUCH_EPS || c + ROBOT_RADIUS >= 1.0 - TOUCH_EPS);
    if touches {
        (pos, true)
    } else {
        (next, false)
    }
}

pub struct MobileEnv {
    cfg: MobileEnvConfig,
    episode_rng: StreamRng,
    robot: [f64; 2],
    target: [f64; 2],
    steps: usize,
    done: bool,
}

impl MobileEnv {
    pub fn new(cfg: MobileEnvConfig, seed: u64) -> Self {
        let target = match cfg.target_shape {
            TargetShape::Disc => STATIC_TARGET,
            TargetShape::HorizontalBand => [0.5, STATIC_BAND_Y],
        };
        Self { cfg, episode_rng: rng::stream(seed, streams::EPISODE), robot: [0.5, 0.5], target, steps: 0, done: true }
    }

    pub fn config(&self) -> &MobileEnvConfig {
        &self.cfg
    }

    pub fn action_space_for(mode: ActionMode) -> ActionSpace {
        match mode {
            ActionMode::Discrete => ActionSpace::Discrete(4),
            ActionMode::Continuous => ActionSpace::continuous(2, -1.0, 1.0),
        }
    }

    pub fn layout_for(mode: TargetMode) -> &'static [&'static str] {
        match mode {
            TargetMode::Static => STATIC_LAYOUT,
            TargetMode::RandomPerEpisode => RANDOM_LAYOUT,
        }
    }

    pub fn robot(&self) -> [f64; 2] {
        self.robot
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    /// Places the robot directly; used by tests and oracles.
    pub fn set_robot(&mut self, pos: [f64; 2]) {
        self.robot = pos;
    }

    /// Whether the robot at `pos` overlaps the target.
    pub fn reaches(&self, pos: [f64; 2]) -> bool {
        target_reached(self.cfg.target_shape, pos, self.target)
    }

    fn distance_to_target(&self) -> f64 {
        match self.cfg.target_shape {
            TargetShape::Disc => (self.robot[0] - self.target[0]).hypot(self.robot[1] - self.target[1]),
            TargetShape::HorizontalBand => (self.robot[1] - self.target[1]).abs(),
        }
    }
}

pub fn target_reached(shape: TargetShape, pos: [f64; 2], target: [f64; 2]) -> bool {
    match shape {
        TargetShape::Disc => (pos[0] - target[0]).hypot(pos[1] - target[1]) <= REACH_DISTANCE,
        TargetShape::HorizontalBand => (pos[1] - target[1]).abs() <= ROBOT_RADIUS + BAND_HALF_HEIGHT,
    }
}

impl Env for MobileEnv {
    fn action_space(&self) -> ActionSpace {
        Self::action_space_for(self.cfg.action_mode)
    }

    fn ground_truth_layout(&self) -> &'static [&'static str] {
        Self::layout_for(self.cfg.target_mode)
    }

    fn seed(&mut self, seed: u64) {
        self.episode_rng = rng::stream(seed, streams::EPISODE);
        self.done = true;
    }

    fn reset(&mut self) -> (Observation, GroundTruthState) {
        if self.cfg.target_mode == TargetMode::RandomPerEpisode {
            let ty = self.episode_rng.random_range(0.15..0.85);
            self.target = match self.cfg.target_shape {
                TargetShape::Disc => [self.episode_rng.random_range(0.15..0.85), ty],
                TargetShape::HorizontalBand => [0.5, ty],
            };
        }
        // Start anywhere in the interior that is not already on the target.
        loop {
            let p = [self.episode_rng.random_range(0.1..0.9), self.episode_rng.random_range(0.1..0.9)];
            if !self.reaches(p) {
                self.robot = p;
                break;
            }
        }
        self.steps = 0;
        self.done = false;
        (self.render(), self.ground_truth())
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let delta = match self.action_space().validate(action)? {
            Action::Discrete(i) => MobileAction::ALL[i].displacement(),
            Action::Continuous(v) => [v[0] * STEP, v[1] * STEP],
        };
        let (next, hit_wall) = mobile_dynamics(self.robot, delta);
        self.robot = next;
        self.steps += 1;
        let reached = self.reaches(next);
        let event = if hit_wall {
            StepEvent::WallHit
        } else if reached {
            StepEvent::TargetReached
        } else {
            StepEvent::None
        };
        let reward = match self.cfg.reward_mode {
            RewardMode::Sparse => match event {
                StepEvent::WallHit => -1.0,
                StepEvent::TargetReached => 1.0,
                _ => 0.0,
            },
            RewardMode::Shaped => -self.distance_to_target(),
        };
        self.done = self.steps >= self.cfg.max_steps;
        Ok(StepResult { observation: self.render(), reward, done: self.done, ground_truth: self.ground_truth(), event })
    }

    fn ground_truth(&self) -> GroundTruthState {
        let mut values = vec![self.robot[0], self.robot[1]];
        if self.cfg.target_mode == TargetMode::RandomPerEpisode {
            values.extend_from_slice(&self.target);
        }
        GroundTruthState { values, layout: self.ground_truth_layout() }
    }

    fn relative_ground_truth(&self) -> Vec<f64> {
        vec![self.robot[0] - self.target[0], self.robot[1] - self.target[1]]
    }

    fn scene(&self) -> SceneDescription {
        let t = WALL_THICKNESS;
        let mut items = vec![
            (Shape::Rect { min: [0.0, 0.0], max: [1.0, t], z: 0.0 }, Color::WALL),
            (Shape::Rect { min: [0.0, 1.0 - t], max: [1.0, 1.0], z: 0.0 }, Color::WALL),
            (Shape::Rect { min: [0.0, 0.0], max: [t, 1.0], z: 0.0 }, Color::WALL),
            (Shape::Rect { min: [1.0 - t, 0.0], max: [1.0, 1.0], z: 0.0 }, Color::WALL),
        ];
        let target = match self.cfg.target_shape {
            TargetShape::Disc => Shape::Disc { center: [self.target[0], self.target[1], 0.0], radius: TARGET_RADIUS },
            TargetShape::HorizontalBand => Shape::Rect {
                min: [t, self.target[1] - BAND_HALF_HEIGHT],
                max: [1.0 - t, self.target[1] + BAND_HALF_HEIGHT],
                z: 0.0,
            },
        };
        items.push((target, Color::TARGET));
        items.push((Shape::Disc { center: [self.robot[0], self.robot[1], 0.0], radius: ROBOT_RADIUS }, Color::ROBOT));
        SceneDescription { projection: Projection::TopDown { min: [0.0, 0.0], max: [1.0, 1.0] }, background: Color::FLOOR, items }
    }

    fn render_config(&self) -> RenderConfig {
        self.cfg.image
    }

    fn step_count(&self) -> usize {
        self.steps
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn is_done(&self) -> bool {
        self.done
    }
}

//! Button pushing with a 3-DOF arm fixed on a table, controlled in
//! effector space through inverse kinematics.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;

use super::config::{ActionMode, ArmEnvConfig, DistractorMotion, RewardMode, TargetMode};
use super::kinematics::{inverse_kinematics, joint_positions, SHOULDER_Z};
use super::{Action, ActionSpace, Env, EnvError, GroundTruthState, Observation, StepEvent, StepResult};
use crate::raster::{Camera, Color, Projection, RenderConfig, SceneDescription, Shape};
use crate::rng::{self, streams, StreamRng};

pub const EFFECTOR_STEP: f64 = 0.04;
pub const WORKSPACE_XY: (f64, f64) = (-0.6, 0.6);
pub const WORKSPACE_Z: (f64, f64) = (0.0, 0.5);
pub const PRESS_RADIUS: f64 = 0.05;
pub const BUTTON_HEIGHT: f64 = 0.03;
pub const STATIC_BUTTON: [f64; 2] = [0.4, 0.2];
pub const START_Z: f64 = 0.3;
const DISTRACTOR_SIZE: f64 = 0.08;
const DISTRACTOR_AMPLITUDE: f64 = 0.08;
const DISTRACTOR_FREQ: f64 = 0.15;

const STATIC_LAYOUT: &[&str] = &["x_effector", "y_effector", "z_effector"];
const RANDOM_LAYOUT: &[&str] = &["x_effector", "y_effector", "z_effector", "x_button", "y_button"];

pub const CAMERA: Camera = Camera { eye: [1.3, -1.0, 1.0], target: [0.15, 0.0, 0.05], fov_y: 0.85 };

/// Discrete action indices, in dataset encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArmAction {
    Right = 0,
    Left = 1,
    Forward = 2,
    Backward = 3,
    Down = 4,
}

impl ArmAction {
    pub const ALL: [ArmAction; 5] = [Self::Right, Self::Left, Self::Forward, Self::Backward, Self::Down];

    pub fn displacement(self) -> [f64; 3] {
        let s = EFFECTOR_STEP;
        match self {
            Self::Right => [s, 0.0, 0.0],
            Self::Left => [-s, 0.0, 0.0],
            Self::Forward => [0.0, s, 0.0],
            Self::Backward => [0.0, -s, 0.0],
            Self::Down => [0.0, 0.0, -s],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Distractor {
    center: [f64; 2],
    phase: f64,
    motion: DistractorMotion,
}

impl Distractor {
    fn position(&self, step: usize) -> [f64; 2] {
        match self.motion {
            DistractorMotion::Static => self.center,
            DistractorMotion::Moving => {
                let a = DISTRACTOR_FREQ * step as f64 + self.phase;
                [self.center[0] + DISTRACTOR_AMPLITUDE * a.cos(), self.center[1] + DISTRACTOR_AMPLITUDE * a.sin()]
            }
        }
    }
}

pub struct ArmEnv {
    cfg: ArmEnvConfig,
    episode_rng: StreamRng,
    distractor_rng: StreamRng,
    effector: [f64; 3],
    button: [f64; 2],
    distractors: Vec<Distractor>,
    steps: usize,
    done: bool,
}

impl ArmEnv {
    pub fn new(cfg: ArmEnvConfig, seed: u64) -> Self {
        let mut env = Self {
            episode_rng: rng::stream(seed, streams::EPISODE),
            distractor_rng: rng::stream(seed, streams::DISTRACTOR),
            effector: [0.25, 0.0, START_Z],
            button: STATIC_BUTTON,
            distractors: Vec::new(),
            steps: 0,
            done: true,
            cfg,
        };
        env.resample_distractors();
        env
    }

    pub fn action_space_for(mode: ActionMode) -> ActionSpace {
        match mode {
            ActionMode::Discrete => ActionSpace::Discrete(5),
            ActionMode::Continuous => ActionSpace::continuous(3, -1.0, 1.0),
        }
    }

    pub fn layout_for(mode: TargetMode) -> &'static [&'static str] {
        match mode {
            TargetMode::Static => STATIC_LAYOUT,
            TargetMode::RandomPerEpisode => RANDOM_LAYOUT,
        }
    }

    pub fn effector(&self) -> [f64; 3] {
        self.effector
    }

    pub fn button(&self) -> [f64; 2] {
        self.button
    }

    /// Current table positions of the distractors.
    pub fn distractor_positions(&self) -> Vec<[f64; 2]> {
        self.distractors.iter().map(|d| d.position(self.steps)).collect()
    }

    /// Moves the effector directly; used by tests and oracles.
    pub fn set_effector(&mut self, p: [f64; 3]) {
        self.effector = p;
    }

    fn resample_distractors(&mut self) {
        let motions = self.cfg.distractors.clone();
        self.distractors = motions
            .into_iter()
            .map(|motion| Distractor {
                center: [self.distractor_rng.random_range(-0.45..0.45), self.distractor_rng.random_range(-0.45..0.45)],
                phase: self.distractor_rng.random_range(0.0..2.0 * PI),
                motion,
            })
            .collect();
    }

    fn over_button(&self, p: [f64; 3]) -> bool {
        (p[0] - self.button[0]).hypot(p[1] - self.button[1]) <= PRESS_RADIUS
    }

    fn in_workspace(p: [f64; 3]) -> bool {
        let (lo, hi) = WORKSPACE_XY;
        p[0] >= lo && p[0] <= hi && p[1] >= lo && p[1] <= hi && p[2] <= WORKSPACE_Z.1
    }
}

impl Env for ArmEnv {
    fn action_space(&self) -> ActionSpace {
        Self::action_space_for(self.cfg.action_mode)
    }

    fn ground_truth_layout(&self) -> &'static [&'static str] {
        Self::layout_for(self.cfg.target_mode)
    }

    fn seed(&mut self, seed: u64) {
        self.episode_rng = rng::stream(seed, streams::EPISODE);
        self.distractor_rng = rng::stream(seed, streams::DISTRACTOR);
        self.done = true;
    }

    fn reset(&mut self) -> (Observation, GroundTruthState) {
        if self.cfg.target_mode == TargetMode::RandomPerEpisode {
            self.button = [self.episode_rng.random_range(0.15..0.5), self.episode_rng.random_range(-0.3..0.3)];
        }
        self.effector = [self.episode_rng.random_range(0.15..0.35), self.episode_rng.random_range(-0.15..0.15), START_Z];
        self.resample_distractors();
        self.steps = 0;
        self.done = false;
        (self.render(), self.ground_truth())
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let delta = match self.action_space().validate(action)? {
            Action::Discrete(i) => ArmAction::ALL[i].displacement(),
            Action::Continuous(v) => [v[0] * EFFECTOR_STEP, v[1] * EFFECTOR_STEP, v[2] * EFFECTOR_STEP],
        };
        let mut next = [self.effector[0] + delta[0], self.effector[1] + delta[1], self.effector[2] + delta[2]];
        let mut event = StepEvent::None;
        if delta[2] < 0.0 && next[2] <= BUTTON_HEIGHT && self.over_button(next) {
            next[2] = BUTTON_HEIGHT;
            event = StepEvent::ButtonPressed;
        } else if next[2] < WORKSPACE_Z.0 {
            next[2] = WORKSPACE_Z.0;
            event = StepEvent::TableHit;
        }
        if event == StepEvent::TableHit || (Self::in_workspace(next) && inverse_kinematics(next).is_ok()) {
            self.effector = next;
        }
        self.steps += 1;
        let reward = match self.cfg.reward_mode {
            RewardMode::Sparse => match event {
                StepEvent::ButtonPressed => 1.0,
                StepEvent::TableHit => -1.0,
                _ => 0.0,
            },
            RewardMode::Shaped => {
                let d = [self.effector[0] - self.button[0], self.effector[1] - self.button[1], self.effector[2] - BUTTON_HEIGHT];
                -(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            }
        };
        self.done = event == StepEvent::TableHit || self.steps >= self.cfg.max_steps;
        Ok(StepResult { observation: self.render(), reward, done: self.done, ground_truth: self.ground_truth(), event })
    }

    fn ground_truth(&self) -> GroundTruthState {
        let mut values = self.effector.to_vec();
        if self.cfg.target_mode == TargetMode::RandomPerEpisode {
            values.extend_from_slice(&self.button);
        }
        GroundTruthState { values, layout: self.ground_truth_layout() }
    }

    fn relative_ground_truth(&self) -> Vec<f64> {
        vec![self.effector[0] - self.button[0], self.effector[1] - self.button[1], self.effector[2] - BUTTON_HEIGHT]
    }

    fn scene(&self) -> SceneDescription {
        let (lo, hi) = WORKSPACE_XY;
        let mut items = vec![(Shape::Quad { corners: [[lo, lo, 0.0], [hi, lo, 0.0], [hi, hi, 0.0], [lo, hi, 0.0]] }, Color::TABLE)];
        for (i, p) in self.distractor_positions().into_iter().enumerate() {
            let h = DISTRACTOR_SIZE / 2.0;
            let color = if i % 2 == 0 { Color::DISTRACTOR_BLUE } else { Color::DISTRACTOR_GREEN };
            items.push((Shape::Rect { min: [p[0] - h, p[1] - h], max: [p[0] + h, p[1] + h], z: 0.0 }, color));
        }
        let b = self.button;
        items.push((
            Shape::Rect { min: [b[0] - PRESS_RADIUS, b[1] - PRESS_RADIUS], max: [b[0] + PRESS_RADIUS, b[1] + PRESS_RADIUS], z: BUTTON_HEIGHT },
            Color::TARGET,
        ));
        let joints = match inverse_kinematics(self.effector) {
            Ok(q) => joint_positions(&q),
            // Table-hit poses can sit marginally outside the reach annulus.
            Err(_) => [[0.0, 0.0, SHOULDER_Z], [0.0, 0.0, SHOULDER_Z], self.effector],
        };
        items.push((Shape::Segment { a: [0.0, 0.0, 0.0], b: joints[0], width: 0.06 }, Color::ROBOT));
        items.push((Shape::Segment { a: joints[0], b: joints[1], width: 0.04 }, Color::ROBOT));
        items.push((Shape::Segment { a: joints[1], b: joints[2], width: 0.03 }, Color::ROBOT));
        items.push((Shape::Disc { center: joints[2], radius: 0.03 }, Color::ROBOT));
        SceneDescription { projection: Projection::Perspective(CAMERA), background: Color::FLOOR, items }
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

#[cfg(test)]
mod tests {
    use super::*;

    fn env(cfg: ArmEnvConfig) -> ArmEnv {
        let mut e = ArmEnv::new(cfg, 5);
        e.reset();
        e
    }

    #[test]
    fn pressing_the_button() {
        let mut e = env(ArmEnvConfig::default());
        e.set_effector([STATIC_BUTTON[0] + 0.01, STATIC_BUTTON[1], 0.06]);
        let r = e.step(&Action::Discrete(ArmAction::Down as usize)).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(!r.done);
        assert_eq!(r.event, StepEvent::ButtonPressed);
        assert_eq!(e.effector()[2], BUTTON_HEIGHT);
    }

    #[test]
    fn hitting_the_table_ends_episode() {
        let mut e = env(ArmEnvConfig::default());
        e.set_effector([0.1, -0.3, 0.02]);
        let r = e.step(&Action::Discrete(ArmAction::Down as usize)).unwrap();
        assert_eq!(r.reward, -1.0);
        assert!(r.done);
        assert_eq!(e.step(&Action::Discrete(0)), Err(EnvError::EpisodeDone));
    }

    #[test]
    fn unreachable_moves_are_rejected() {
        let mut e = env(ArmEnvConfig::default());
        e.set_effector([0.58, 0.0, 0.3]);
        let r = e.step(&Action::Discrete(ArmAction::Right as usize)).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(e.effector(), [0.58, 0.0, 0.3]);
    }

    #[test]
    fn ground_truth_dimensions() {
        assert_eq!(env(ArmEnvConfig::default()).ground_truth().values.len(), 3);
        let cfg = ArmEnvConfig { target_mode: TargetMode::RandomPerEpisode, ..Default::default() };
        assert_eq!(env(cfg).ground_truth().values.len(), 5);
    }

    #[test]
    fn distractors_move_without_touching_reward() {
        let plain = ArmEnvConfig::default();
        let with = ArmEnvConfig { distractors: vec![DistractorMotion::Moving, DistractorMotion::Moving], ..Default::default() };
        let mut a = ArmEnv::new(plain, 9);
        let mut b = ArmEnv::new(with, 9);
        let mut policy = rng::stream(1, streams::POLICY);
        let mut frames_differ = false;
        for _ in 0..5 {
            a.reset();
            b.reset();
            loop {
                let act = Action::Discrete(policy.random_range(0..5));
                let before = b.distractor_positions();
                let ra = a.step(&act).unwrap();
                let rb = b.step(&act).unwrap();
                frames_differ |= before != b.distractor_positions();
                assert_eq!((ra.reward, ra.done, &ra.ground_truth), (rb.reward, rb.done, &rb.ground_truth));
                if ra.done {
                    break;
                }
            }
        }
        assert!(frames_differ);
    }

    #[test]
    fn render_shows_arm_and_button() {
        let e = env(ArmEnvConfig::default());
        let img = e.render();
        let count = |c: Color| img.data.chunks(3).filter(|p| *p == [c.0, c.1, c.2]).count();
        assert!(count(Color::ROBOT) > 10);
        assert!(count(Color::TARGET) > 3);
    }
}

//! Environment configurations and named presets.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{ActionSpace, ArmEnv, Env, MobileEnv, MAX_STEPS};
use crate::raster::RenderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Static,
    RandomPerEpisode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetShape {
    Disc,
    HorizontalBand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Sparse,
    Shaped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorMotion {
    Static,
    Moving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobileEnvConfig {
    pub target_mode: TargetMode,
    pub target_shape: TargetShape,
    pub reward_mode: RewardMode,
    pub action_mode: ActionMode,
    pub image: RenderConfig,
    pub max_steps: usize,
}

impl Default for MobileEnvConfig {
    fn default() -> Self {
        Self {
            target_mode: TargetMode::Static,
            target_shape: TargetShape::Disc,
            reward_mode: RewardMode::Sparse,
            action_mode: ActionMode::Discrete,
            image: RenderConfig::default(),
            max_steps: MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmEnvConfig {
    pub target_mode: TargetMode,
    pub distractors: Vec<DistractorMotion>,
    pub reward_mode: RewardMode,
    pub action_mode: ActionMode,
    pub image: RenderConfig,
    pub max_steps: usize,
}

impl Default for ArmEnvConfig {
    fn default() -> Self {
        Self {
            target_mode: TargetMode::Static,
            distractors: Vec::new(),
            reward_mode: RewardMode::Sparse,
            action_mode: ActionMode::Discrete,
            image: RenderConfig::default(),
            max_steps: MAX_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Mobile(MobileEnvConfig),
    Arm(ArmEnvConfig),
}

/// Names accepted by [`EnvConfig::preset`].
pub const PRESETS: &[&str] =
    &["mobile-static", "mobile-random", "mobile-band", "arm-static", "arm-random", "arm-distractors"];

impl EnvConfig {
    pub fn preset(name: &str) -> Option<EnvConfig> {
        let mobile = |target_mode, target_shape| {
            EnvConfig::Mobile(MobileEnvConfig { target_mode, target_shape, ..MobileEnvConfig::default() })
        };
        Some(match name {
            "mobile-static" => mobile(TargetMode::Static, TargetShape::Disc),
            "mobile-random" => mobile(TargetMode::RandomPerEpisode, TargetShape::Disc),
            "mobile-band" => mobile(TargetMode::Static, TargetShape::HorizontalBand),
            "arm-static" => EnvConfig::Arm(ArmEnvConfig::default()),
            "arm-random" => {
                EnvConfig::Arm(ArmEnvConfig { target_mode: TargetMode::RandomPerEpisode, ..ArmEnvConfig::default() })
            }
            "arm-distractors" => EnvConfig::Arm(ArmEnvConfig {
                distractors: vec![DistractorMotion::Moving, DistractorMotion::Moving],
                ..ArmEnvConfig::default()
            }),
            _ => return None,
        })
    }

    pub fn image(&self) -> RenderConfig {
        match self {
            EnvConfig::Mobile(c) => c.image,
            EnvConfig::Arm(c) => c.image,
        }
    }

    pub fn set_image(&mut self, image: RenderConfig) {
        match self {
            EnvConfig::Mobile(c) => c.image = image,
            EnvConfig::Arm(c) => c.image = image,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            EnvConfig::Mobile(c) => MobileEnv::action_space_for(c.action_mode),
            EnvConfig::Arm(c) => ArmEnv::action_space_for(c.action_mode),
        }
    }

    pub fn ground_truth_layout(&self) -> &'static [&'static str] {
        match self {
            EnvConfig::Mobile(c) => MobileEnv::layout_for(c.target_mode),
            EnvConfig::Arm(c) => ArmEnv::layout_for(c.target_mode),
        }
    }

    pub fn is_valid(&self) -> bool {
        let image = self.image();
        let max_steps = match self {
            EnvConfig::Mobile(c) => c.max_steps,
            EnvConfig::Arm(c) => c.max_steps,
        };
        image.width > 0 && image.height > 0 && max_steps > 0
    }

    pub fn build(&self, seed: u64) -> Box<dyn Env> {
        match self {
            EnvConfig::Mobile(c) => Box::new(MobileEnv::new(c.clone(), seed)),
            EnvConfig::Arm(c) => Box::new(ArmEnv::new(c.clone(), seed)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for name in PRESETS {
            let cfg = EnvConfig::preset(name).unwrap();
            assert!(cfg.is_valid());
            let mut env = cfg.build(0);
            let (obs, gt) = env.reset();
            assert_eq!(obs.data.len(), 64 * 64 * 3);
            assert_eq!(gt.values.len(), cfg.ground_truth_layout().len());
        }
        assert!(EnvConfig::preset("nope").is_none());
    }

    #[test]
    fn minimal_state_dimensions() {
        let dim = |n: &str| EnvConfig::preset(n).unwrap().ground_truth_layout().len();
        assert_eq!(dim("mobile-static"), 2);
        assert_eq!(dim("mobile-random"), 4);
        assert_eq!(dim("arm-static"), 3);
        assert_eq!(dim("arm-random"), 5);
    }
}

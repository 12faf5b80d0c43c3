//! Human-readable environment config files.
//!
//! One `key = value` pair per line; `#` starts a comment. Keys:
//!
//! | key | values | default |
//! |-----|--------|---------|
//! | `preset` | any name from [`PRESETS`]; other keys override it | |
//! | `robot` | `mobile`, `arm` | `mobile` |
//! | `target_mode` | `static`, `random_per_episode` | `static` |
//! | `target_shape` | `disc`, `horizontal_band` (mobile only) | `disc` |
//! | `distractors` | comma-separated `static`/`moving`, or `none` (arm only) | `none` |
//! | `reward_mode` | `sparse`, `shaped` | `sparse` |
//! | `action_mode` | `discrete`, `continuous` | `discrete` |
//! | `width`, `height` | image size in pixels | `64` |
//! | `max_steps` | episode length cap | `250` |

use srl_core::env::config::PRESETS;
use srl_core::env::{
    ActionMode, ArmEnvConfig, DistractorMotion, EnvConfig, MobileEnvConfig, RewardMode, TargetMode, TargetShape,
};
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{key}` on line {line}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("unknown environment `{0}`; valid names: {list}", list = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("`{key}` does not apply to the {robot} robot")]
    NotApplicable { key: String, robot: &'static str },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<EnvConfig, ConfigError> {
    EnvConfig::preset(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
}

fn parse_enum<T>(line: usize, key: &str, value: &str, options: &[(&str, T)]) -> Result<T, ConfigError>
where
    T: Copy,
{
    options.iter().find(|(n, _)| *n == value).map(|(_, v)| *v).ok_or_else(|| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
    })
}

const TARGET_MODES: &[(&str, TargetMode)] =
    &[("static", TargetMode::Static), ("random_per_episode", TargetMode::RandomPerEpisode)];
const TARGET_SHAPES: &[(&str, TargetShape)] =
    &[("disc", TargetShape::Disc), ("horizontal_band", TargetShape::HorizontalBand)];
const REWARD_MODES: &[(&str, RewardMode)] = &[("sparse", RewardMode::Sparse), ("shaped", RewardMode::Shaped)];
const ACTION_MODES: &[(&str, ActionMode)] =
    &[("discrete", ActionMode::Discrete), ("continuous", ActionMode::Continuous)];
const MOTIONS: &[(&str, DistractorMotion)] =
    &[("static", DistractorMotion::Static), ("moving", DistractorMotion::Moving)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], v: &T) -> &'static str {
    options.iter().find(|(_, o)| o == v).map(|(n, _)| *n).expect("every variant is listed")
}

/// Parses a config file.
pub fn parse(text: &str) -> Result<EnvConfig, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, reason: "expected `key = value`".into() })?;
        pairs.push((line, k.trim().to_string(), v.trim().to_string()));
    }

    let mut cfg = match pairs.iter().find(|(_, k, _)| k == "preset") {
        Some((_, _, v)) => preset(v)?,
        None => match pairs.iter().find(|(_, k, _)| k == "robot") {
            Some((_, _, v)) if v == "arm" => EnvConfig::Arm(ArmEnvConfig::default()),
            _ => EnvConfig::Mobile(MobileEnvConfig::default()),
        },
    };

    for (line, key, value) in &pairs {
        let line = *line;
        let bad = || ConfigError::BadValue { line, key: key.clone(), value: value.clone() };
        let robot = match cfg {
            EnvConfig::Mobile(_) => "mobile",
            EnvConfig::Arm(_) => "arm",
        };
        match key.as_str() {
            "preset" => {}
            "robot" => {
                if value != robot {
                    return Err(if value == "mobile" || value == "arm" {
                        ConfigError::Invalid(format!("preset is a {robot} environment but robot = {value}"))
                    } else {
                        bad()
                    });
                }
            }
            "target_mode" => {
                let v = parse_enum(line, key, value, TARGET_MODES)?;
                match &mut cfg {
                    EnvConfig::Mobile(c) => c.target_mode = v,
                    EnvConfig::Arm(c) => c.target_mode = v,
                }
            }
            "target_shape" => {
                let v = parse_enum(line, key, value, TARGET_SHAPES)?;
                match &mut cfg {
                    EnvConfig::Mobile(c) => c.target_shape = v,
                    EnvConfig::Arm(_) => return Err(ConfigError::NotApplicable { key: key.clone(), robot }),
                }
            }
            "distractors" => {
                let list = if value == "none" || value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|m| parse_enum(line, key, m.trim(), MOTIONS)).collect::<Result<_, _>>()?
                };
                match &mut cfg {
                    EnvConfig::Arm(c) => c.distractors = list,
                    EnvConfig::Mobile(_) => return Err(ConfigError::NotApplicable { key: key.clone(), robot }),
                }
            }
            "reward_mode" => {
                let v = parse_enum(line, key, value, REWARD_MODES)?;
                match &mut cfg {
                    EnvConfig::Mobile(c) => c.reward_mode = v,
                    EnvConfig::Arm(c) => c.reward_mode = v,
                }
            }
            "action_mode" => {
                let v = parse_enum(line, key, value, ACTION_MODES)?;
                match &mut cfg {
                    EnvConfig::Mobile(c) => c.action_mode = v,
                    EnvConfig::Arm(c) => c.action_mode = v,
                }
            }
            "width" | "height" | "max_steps" => {
                let n: usize = value.parse().map_err(|_| bad())?;
                if n == 0 {
                    return Err(bad());
                }
                let mut image = cfg.image();
                match key.as_str() {
                    "width" => image.width = n,
                    "height" => image.height = n,
                    _ => match &mut cfg {
                        EnvConfig::Mobile(c) => c.max_steps = n,
                        EnvConfig::Arm(c) => c.max_steps = n,
                    },
                }
                cfg.set_image(image);
            }
            _ => return Err(ConfigError::UnknownKey { line, key: key.clone() }),
        }
    }
    Ok(cfg)
}

/// Writes every key, so that `parse(&render(c)) == c`.
pub fn render(cfg: &EnvConfig) -> String {
    let mut out = String::new();
    let image = cfg.image();
    match cfg {
        EnvConfig::Mobile(c) => {
            let _ = writeln!(out, "robot = mobile");
            let _ = writeln!(out, "target_mode = {}", name_of(TARGET_MODES, &c.target_mode));
            let _ = writeln!(out, "target_shape = {}", name_of(TARGET_SHAPES, &c.target_shape));
            let _ = writeln!(out, "reward_mode = {}", name_of(REWARD_MODES, &c.reward_mode));
            let _ = writeln!(out, "action_mode = {}", name_of(ACTION_MODES, &c.action_mode));
            let _ = writeln!(out, "max_steps = {}", c.max_steps);
        }
        EnvConfig::Arm(c) => {
            let _ = writeln!(out, "robot = arm");
            let _ = writeln!(out, "target_mode = {}", name_of(TARGET_MODES, &c.target_mode));
            let motions: Vec<&str> = c.distractors.iter().map(|m| name_of(MOTIONS, m)).collect();
            let _ = writeln!(out, "distractors = {}", if motions.is_empty() { "none".into() } else { motions.join(",") });
            let _ = writeln!(out, "reward_mode = {}", name_of(REWARD_MODES, &c.reward_mode));
            let _ = writeln!(out, "action_mode = {}", name_of(ACTION_MODES, &c.action_mode));
            let _ = writeln!(out, "max_steps = {}", c.max_steps);
        }
    }
    let _ = writeln!(out, "width = {}", image.width);
    let _ = writeln!(out, "height = {}", image.height);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            assert_eq!(parse(&render(&cfg)).unwrap(), cfg, "{name}");
        }
    }

    #[test]
    fn keys_override_preset() {
        let cfg = parse("preset = mobile-random  # base\nwidth = 224\nheight = 224\nreward_mode = shaped\n").unwrap();
        let EnvConfig::Mobile(m) = cfg else { panic!("expected mobile") };
        assert_eq!(m.target_mode, TargetMode::RandomPerEpisode);
        assert_eq!(m.reward_mode, RewardMode::Shaped);
        assert_eq!((m.image.width, m.image.height), (224, 224));
    }

    #[test]
    fn arm_distractors() {
        let cfg = parse("robot = arm\ndistractors = static, moving\n").unwrap();
        let EnvConfig::Arm(a) = cfg else { panic!("expected arm") };
        assert_eq!(a.distractors, vec![DistractorMotion::Static, DistractorMotion::Moving]);
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(parse("\nfoo = 1").unwrap_err(), ConfigError::UnknownKey { line: 2, key: "foo".into() });
        assert!(matches!(parse("width = 0"), Err(ConfigError::BadValue { line: 1, .. })));
        assert!(matches!(parse("novalue"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse("distractors = moving"), Err(ConfigError::NotApplicable { .. })));
        let e = parse("preset = nope").unwrap_err();
        assert!(e.to_string().contains("mobile-static"));
    }
}

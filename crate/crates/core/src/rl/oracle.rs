//! Best achievable episode return in the mobile navigation task, by
//! dynamic programming over the lattice of reachable positions.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::env::mobile::{mobile_dynamics, target_reached, MobileAction};
use crate::env::{ActionMode, Env, MobileEnv, MobileEnvConfig, RewardMode, TargetShape};

use super::eval::{eval_episode_seed, EvalReport};

/// Maximum return over the remaining steps of the current episode, for the
/// discrete sparse-reward variant. `None` for other variants.
pub fn optimal_return(env: &MobileEnv) -> Option<f64> {
    let cfg = env.config();
    if cfg.action_mode != ActionMode::Discrete || cfg.reward_mode != RewardMode::Sparse {
        return None;
    }
    let (shape, target) = (cfg.target_shape, env.target());
    let horizon = env.max_steps().saturating_sub(env.step_count());

    // Enumerate lattice positions reachable from the start.
    let mut index: BTreeMap<(i32, i32), usize> = BTreeMap::new();
    let mut cells: Vec<((i32, i32), [f64; 2])> = Vec::new();
    let mut edges: Vec<[(usize, f64); 4]> = Vec::new();
    index.insert((0, 0), 0);
    cells.push(((0, 0), env.robot()));
    let mut next = 0;
    while next < cells.len() {
        let ((i, j), pos) = cells[next];
        let mut out = [(0, 0.0); 4];
        for (slot, a) in out.iter_mut().zip(MobileAction::ALL) {
            let delta = a.displacement();
            let (p, wall) = mobile_dynamics(pos, delta);
            let key = if wall { (i, j) } else { (i + unit(delta[0]), j + unit(delta[1])) };
            let id = *index.entry(key).or_insert_with(|| {
                cells.push((key, p));
                cells.len() - 1
            });
            let reward = if wall {
                -1.0
            } else if target_reached(shape, p, target) {
                1.0
            } else {
                0.0
            };
            *slot = (id, reward);
        }
        edges.push(out);
        next += 1;
    }

    let mut value = alloc::vec![0.0f64; cells.len()];
    for _ in 0..horizon {
        value = edges
            .iter()
            .map(|out| out.iter().map(|&(s, r)| r + value[s]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
    }
    Some(value[0])
}

fn unit(d: f64) -> i32 {
    (d > 0.0) as i32 - (d < 0.0) as i32
}

/// Oracle returns on exactly the episodes that evaluation would run.
pub fn oracle_report(cfg: &MobileEnvConfig, n_episodes: usize, seeds: &[u64]) -> Option<EvalReport> {
    let mut rewards = Vec::with_capacity(seeds.len() * n_episodes);
    for &seed in seeds {
        for e in 0..n_episodes {
            let mut env = MobileEnv::new(cfg.clone(), eval_episode_seed(seed, e));
            env.reset();
            rewards.push(optimal_return(&env)?);
        }
    }
    let report = EvalReport::aggregate(
        &seeds
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let r = rewards[i * n_episodes..(i + 1) * n_episodes].to_vec();
                let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
                EvalReport { mean, stderr: None, n_episodes, budget: 0, seeds: alloc::vec![s], episode_rewards: r }
            })
            .collect::<Vec<_>>(),
    );
    Some(report)
}

/// Manhattan lattice distance, in steps, to the nearest reaching position
/// for a disc target; used as an independent check of the DP.
pub fn steps_to_reach(env: &MobileEnv) -> Option<usize> {
    if env.config().target_shape != TargetShape::Disc {
        return None;
    }
    let (start, target) = (env.robot(), env.target());
    let step = crate::env::mobile::STEP;
    let mut best = None;
    for i in -20i32..=20 {
        for j in -20i32..=20 {
            let p = [start[0] + i as f64 * step, start[1] + j as f64 * step];
            if target_reached(TargetShape::Disc, p, target) {
                let n = (i.unsigned_abs() + j.unsigned_abs()) as usize;
                if best.is_none_or(|b| n < b) {
                    best = Some(n);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TargetMode;

    #[test]
    fn oracle_is_horizon_minus_approach() {
        // Reaching takes n moves; every later step can stay on the target.
        for (seed, mode) in [(0, TargetMode::Static), (1, TargetMode::RandomPerEpisode)] {
            let cfg = MobileEnvConfig { target_mode: mode, ..Default::default() };
            for s in 0..30 {
                let mut env = MobileEnv::new(cfg.clone(), seed * 1000 + s);
                env.reset();
                let n = steps_to_reach(&env).unwrap();
                let best = optimal_return(&env).unwrap();
                assert_eq!(best, (env.max_steps() - n + 1) as f64, "start {:?}", env.robot());
            }
        }
    }

    #[test]
    fn oracle_counts_remaining_steps_only() {
        let mut env = MobileEnv::new(MobileEnvConfig::default(), 3);
        env.reset();
        env.set_robot([0.7, 0.7]);
        let best = optimal_return(&env).unwrap();
        // Already overlapping: every one of the 250 moves can stay on target.
        assert_eq!(best, 250.0);
    }

    #[test]
    fn shaped_rewards_are_unsupported() {
        let cfg = MobileEnvConfig { reward_mode: RewardMode::Shaped, ..Default::default() };
        let mut env = MobileEnv::new(cfg, 0);
        env.reset();
        assert!(optimal_return(&env).is_none());
    }
}

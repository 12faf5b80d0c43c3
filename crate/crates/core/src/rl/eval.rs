use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::Policy;
use super::{mean_stderr, RlError};
use crate::env::{Action, EnvConfig};
use crate::exec::{par_map, Exec, Serial};
use crate::rng::{self, streams};

/// Acting rule used during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Agent<'a> {
    /// Argmax over the policy's action distribution.
    Greedy(&'a Policy),
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: f64,
    /// Across seeds when there are several, otherwise across episodes;
    /// absent for a single sample.
    pub stderr: Option<f64>,
    pub n_episodes: usize,
    /// Training timesteps of the evaluated policy.
    pub budget: usize,
    pub seeds: Vec<u64>,
    /// Episode returns, seed-major.
    pub episode_rewards: Vec<f64>,
}

impl EvalReport {
    /// Per-seed mean returns.
    pub fn seed_means(&self) -> Vec<f64> {
        let per = self.episode_rewards.len() / self.seeds.len().max(1);
        self.episode_rewards.chunks(per.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }

    /// Pools independent runs: mean of run means, standard error of the
    /// run means.
    pub fn aggregate(reports: &[EvalReport]) -> EvalReport {
        let means: Vec<f64> = reports.iter().map(|r| r.mean).collect();
        let (mean, stderr) = mean_stderr(&means);
        EvalReport {
            mean,
            stderr,
            n_episodes: reports.iter().map(|r| r.n_episodes).sum(),
            budget: reports.first().map_or(0, |r| r.budget),
            seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
            episode_rewards: reports.iter().flat_map(|r| r.episode_rewards.iter().copied()).collect(),
        }
    }

    fn from_rewards(rewards: Vec<f64>, seeds: &[u64], per_seed: usize, budget: usize) -> Self {
        let mut report = EvalReport {
            mean: 0.0,
            stderr: None,
            n_episodes: rewards.len(),
            budget,
            seeds: seeds.to_vec(),
            episode_rewards: rewards,
        };
        let (mean, stderr) = if seeds.len() >= 2 {
            mean_stderr(&report.seed_means())
        } else {
            mean_stderr(&report.episode_rewards)
        };
        report.mean = if per_seed == 0 { 0.0 } else { mean };
        report.stderr = stderr;
        report
    }
}

/// Seed of the fresh env used for evaluation episode `episode` under `seed`.
pub fn eval_episode_seed(seed: u64, episode: usize) -> u64 {
    rng::mix(rng::mix(seed, 0x6576_616c), episode as u64)
}

/// Runs `n_episodes` episodes per seed, each in a freshly seeded env.
pub fn evaluate_policy(
    exec: &dyn Exec,
    agent: Agent<'_>,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seeds: &[u64],
) -> Result<EvalReport, RlError> {
    let n_actions = env_cfg.action_space().n().ok_or(RlError::ContinuousActions)?;
    let jobs = seeds.len() * n_episodes;
    let results = par_map(exec, jobs, |j| {
        let (seed, episode) = (seeds[j / n_episodes], j % n_episodes);
        let env_seed = eval_episode_seed(seed, episode);
        let mut env = env_cfg.build(env_seed);
        let mut act_rng = rng::stream(env_seed, streams::POLICY);
        let (mut obs, gt) = env.reset();
        let mut gt = gt.values;
        let mut total = 0.0;
        loop {
            let a = match agent {
                Agent::Greedy(p) => p.act_greedy(&Serial, &[&obs], &[&gt])?[0],
                Agent::UniformRandom => act_rng.random_range(0..n_actions),
            };
            let r = env.step(&Action::Discrete(a))?;
            total += r.reward;
            if r.done {
                return Ok(total);
            }
            obs = r.observation;
            gt = r.ground_truth.values;
        }
    });
    let rewards = results.into_iter().collect::<Result<Vec<f64>, RlError>>()?;
    let budget = match agent {
        Agent::Greedy(p) => p.timesteps,
        Agent::UniformRandom => 0,
    };
    Ok(EvalReport::from_rewards(rewards, seeds, n_episodes, budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::policy::PolicyInput;

    #[test]
    fn single_episode_has_no_stderr() {
        let env = EnvConfig::preset("mobile-static").unwrap();
        let r = evaluate_policy(&Serial, Agent::UniformRandom, &env, 1, &[0]).unwrap();
        assert_eq!(r.n_episodes, 1);
        assert!(r.stderr.is_none());
        let r = evaluate_policy(&Serial, Agent::UniformRandom, &env, 3, &[0]).unwrap();
        assert!(r.stderr.is_some());
    }

    #[test]
    fn evaluation_is_repeatable() {
        let env = EnvConfig::preset("mobile-random").unwrap();
        let p = Policy::for_env(PolicyInput::GroundTruth, &env, 1).unwrap();
        let a = evaluate_policy(&Serial, Agent::Greedy(&p), &env, 4, &[1, 2]).unwrap();
        let b = evaluate_policy(&Serial, Agent::Greedy(&p), &env, 4, &[1, 2]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episode_rewards.len(), 8);
        assert_eq!(a.seed_means().len(), 2);
    }

    #[test]
    fn aggregate_uses_sample_std_of_run_means() {
        let mk = |mean: f64| EvalReport {
            mean,
            stderr: None,
            n_episodes: 1,
            budget: 10,
            seeds: alloc::vec![0],
            episode_rewards: alloc::vec![mean],
        };
        let agg = EvalReport::aggregate(&[mk(1.0), mk(2.0), mk(3.0), mk(6.0)]);
        assert_eq!(agg.mean, 3.0);
        // Sample variance 14 / 3.
        let expect = (14.0f64 / 3.0).sqrt() / 2.0;
        assert!((agg.stderr.unwrap() - expect).abs() < 1e-12);
        assert!(EvalReport::aggregate(&[mk(1.0)]).stderr.is_none());
    }
}

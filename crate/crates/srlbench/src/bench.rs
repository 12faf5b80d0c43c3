//! Environment stepping throughput.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::Serialize;
use srl_core::env::{Action, EnvConfig};
use srl_core::rng::{self, streams};

use crate::dataset::worker_seed;

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub env: String,
    pub workers: usize,
    pub width: usize,
    pub height: usize,
    pub seconds: f64,
    pub steps: u64,
    pub steps_per_sec: f64,
}

/// Steps `workers` independent envs under a uniform random policy for
/// `duration`, rendering every frame.
pub fn run(env: &EnvConfig, name: &str, workers: usize, duration: Duration, seed: u64) -> BenchReport {
    let n_actions = env.action_space().n();
    let start = Instant::now();
    let counts: Vec<u64> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers.max(1))
            .map(|w| {
                s.spawn(move || {
                    let ws = worker_seed(seed, w);
                    let mut e = env.build(ws);
                    let mut policy = rng::stream(ws, streams::POLICY);
                    e.reset();
                    let mut steps = 0u64;
                    while start.elapsed() < duration {
                        let action = match (n_actions, e.action_space()) {
                            (Some(n), _) => Action::Discrete(policy.random_range(0..n)),
                            (None, space) => random_continuous(&space, &mut policy),
                        };
                        let r = e.step(&action).expect("valid random action");
                        steps += 1;
                        if r.done {
                            e.reset();
                        }
                    }
                    steps
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let seconds = start.elapsed().as_secs_f64();
    let steps: u64 = counts.iter().sum();
    let image = env.image();
    BenchReport {
        env: name.to_string(),
        workers: workers.max(1),
        width: image.width,
        height: image.height,
        seconds,
        steps,
        steps_per_sec: steps as f64 / seconds,
    }
}

fn random_continuous(space: &srl_core::env::ActionSpace, rng: &mut impl Rng) -> Action {
    match space {
        srl_core::env::ActionSpace::Continuous { low, high } => {
            Action::Continuous(low.iter().zip(high).map(|(l, h)| rng.random_range(*l..*h)).collect())
        }
        srl_core::env::ActionSpace::Discrete(n) => Action::Discrete(rng.random_range(0..*n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_counts_steps() {
        let env = EnvConfig::preset("mobile-static").unwrap();
        let r = run(&env, "mobile-static", 2, Duration::from_millis(100), 0);
        assert_eq!((r.workers, r.width, r.height), (2, 64, 64));
        assert!(r.steps > 0 && r.steps_per_sec > 0.0);
    }
}

//! In-memory dataset of recorded environment steps.
//!
//! Record `t` holds the observation seen before acting, the action taken,
//! the reward received for that action, and the ground truth of the
//! observation. Consecutive records of one episode form a transition
//! `(o_t, a_t, r_t, o_{t+1})`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvConfig};
use crate::linalg::Matrix;
use crate::raster::Observation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("column `{column}` has {found} entries, expected {expected}")]
    Length { column: &'static str, expected: usize, found: usize },
    #[error("record {index}: {reason}")]
    Invariant { index: usize, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub width: usize,
    pub height: usize,
    pub gt_dim: usize,
    pub n_actions: usize,
    /// `len * height * width * 3` RGB bytes.
    pub images: Vec<u8>,
    pub actions: Vec<i32>,
    pub rewards: Vec<f32>,
    /// `len * gt_dim`, row-major.
    pub ground_truth: Vec<f32>,
    /// Globally unique episode id per record.
    pub episodes: Vec<u32>,
    pub steps: Vec<u32>,
}

impl SampleSet {
    pub fn empty(width: usize, height: usize, gt_dim: usize, n_actions: usize) -> Self {
        Self {
            width,
            height,
            gt_dim,
            n_actions,
            images: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            ground_truth: Vec::new(),
            episodes: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn image_bytes(&self) -> usize {
        self.width * self.height * 3
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_bytes();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation { width: self.width, height: self.height, data: self.image(i).to_vec() }
    }

    pub fn gt(&self, i: usize) -> &[f32] {
        &self.ground_truth[i * self.gt_dim..(i + 1) * self.gt_dim]
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, image: &[u8], action: i32, reward: f32, gt: &[f32], episode: u32, step: u32) {
        debug_assert_eq!(image.len(), self.image_bytes());
        debug_assert_eq!(gt.len(), self.gt_dim);
        self.images.extend_from_slice(image);
        self.actions.push(action);
        self.rewards.push(reward);
        self.ground_truth.extend_from_slice(gt);
        self.episodes.push(episode);
        self.steps.push(step);
    }

    /// Ground-truth states as an `len x gt_dim` matrix.
    pub fn ground_truth_matrix(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.gt_dim, self.ground_truth.iter().map(|&v| v as f64).collect())
    }

    /// Checks column lengths and episode bookkeeping.
    pub fn validate(&self) -> Result<(), SampleError> {
        let n = self.len();
        let check = |column, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(SampleError::Length { column, expected, found })
            }
        };
        check("images", n * self.image_bytes(), self.images.len())?;
        check("rewards", n, self.rewards.len())?;
        check("ground_truth", n * self.gt_dim, self.ground_truth.len())?;
        check("episodes", n, self.episodes.len())?;
        check("steps", n, self.steps.len())?;
        for i in 0..n {
            if self.n_actions > 0 && (self.actions[i] < 0 || self.actions[i] as usize >= self.n_actions) {
                return Err(SampleError::Invariant { index: i, reason: "action outside the action space" });
            }
            if i == 0 || self.episodes[i] != self.episodes[i - 1] {
                if i > 0 && self.episodes[i] < self.episodes[i - 1] {
                    return Err(SampleError::Invariant { index: i, reason: "episode index decreased" });
                }
                if self.steps[i] != 0 {
                    return Err(SampleError::Invariant { index: i, reason: "episode does not start at step 0" });
                }
            } else if self.steps[i] != self.steps[i - 1] + 1 {
                return Err(SampleError::Invariant { index: i, reason: "step index not consecutive" });
            }
        }
        Ok(())
    }

    /// Indices `t` such that records `t` and `t + 1` belong to the same
    /// episode.
    pub fn transitions(&self) -> Vec<usize> {
        (0..self.len().saturating_sub(1))
            .filter(|&t| self.episodes[t] == self.episodes[t + 1] && self.steps[t] + 1 == self.steps[t + 1])
            .collect()
    }

    /// Copies the selected records into a new set.
    pub fn subset(&self, indices: &[usize]) -> SampleSet {
        let mut out = SampleSet::empty(self.width, self.height, self.gt_dim, self.n_actions);
        for &i in indices {
            out.push(self.image(i), self.actions[i], self.rewards[i], self.gt(i), self.episodes[i], self.steps[i]);
        }
        out
    }

    pub fn stats(&self) -> DatasetStats {
        let mut rewards: BTreeMap<i64, (f32, usize)> = BTreeMap::new();
        for &r in &self.rewards {
            // Keyed on a fixed-point image of the value so histogram order is numeric.
            let key = (r as f64 * 1e6).round() as i64;
            rewards.entry(key).or_insert((r, 0)).1 += 1;
        }
        let mut episode_lengths: BTreeMap<usize, usize> = BTreeMap::new();
        let mut i = 0;
        while i < self.len() {
            let mut j = i + 1;
            while j < self.len() && self.episodes[j] == self.episodes[i] {
                j += 1;
            }
            *episode_lengths.entry(j - i).or_insert(0) += 1;
            i = j;
        }
        let mut ranges = alloc::vec![(f64::INFINITY, f64::NEG_INFINITY); self.gt_dim];
        for row in self.ground_truth.chunks(self.gt_dim.max(1)) {
            for (r, &v) in ranges.iter_mut().zip(row) {
                r.0 = r.0.min(v as f64);
                r.1 = r.1.max(v as f64);
            }
        }
        DatasetStats {
            samples: self.len(),
            episodes: episode_lengths.values().sum(),
            reward_histogram: rewards.into_values().map(|(v, c)| (v as f64, c)).collect(),
            episode_length_histogram: episode_lengths.into_iter().collect(),
            ground_truth_ranges: ranges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub episodes: usize,
    /// `(reward value, count)` in ascending value order.
    pub reward_histogram: Vec<(f64, usize)>,
    /// `(episode length, count)` in ascending length order.
    pub episode_length_histogram: Vec<(usize, usize)>,
    /// `(min, max)` per ground-truth component.
    pub ground_truth_ranges: Vec<(f64, f64)>,
}

/// Records `n` steps of a uniform random policy in a fresh environment
/// built from `cfg`. Episodes are numbered from 0 in recording order.
///
/// Returns `None` for continuous action spaces, which the record layout
/// cannot store.
pub fn collect_random(cfg: &EnvConfig, n: usize, seed: u64) -> Option<SampleSet> {
    use rand::Rng;
    let n_actions = cfg.action_space().n()?;
    let image = cfg.image();
    let layout = cfg.ground_truth_layout();
    let mut out = SampleSet::empty(image.width, image.height, layout.len(), n_actions);
    let mut env = cfg.build(seed);
    let mut policy = crate::rng::stream(seed, crate::rng::streams::POLICY);
    let mut episode = 0u32;
    let (mut obs, mut gt) = env.reset();
    let mut step = 0u32;
    while out.len() < n {
        let a = policy.random_range(0..n_actions);
        let result = env.step(&Action::Discrete(a)).expect("random action is valid and episode is live");
        let gt_f32: Vec<f32> = gt.values.iter().map(|&v| v as f32).collect();
        out.push(&obs.data, a as i32, result.reward as f32, &gt_f32, episode, step);
        if result.done {
            episode += 1;
            step = 0;
            (obs, gt) = env.reset();
        } else {
            step += 1;
            obs = result.observation;
            gt = result.ground_truth;
        }
    }
    out.images.shrink_to_fit();
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny(episodes: &[(u32, u32)]) -> SampleSet {
        let mut s = SampleSet::empty(1, 1, 1, 4);
        for &(ep, len) in episodes {
            for step in 0..len {
                s.push(&[0, 0, 0], 0, 0.0, &[step as f32], ep, step);
            }
        }
        s
    }

    #[test]
    fn transitions_skip_episode_boundaries() {
        let s = tiny(&[(0, 3), (1, 2)]);
        assert_eq!(s.transitions(), vec![0, 1, 3]);
        s.validate().unwrap();
    }

    #[test]
    fn single_episode_length_histogram() {
        let s = tiny(&[(0, 7)]);
        assert_eq!(s.stats().episode_length_histogram, vec![(7, 1)]);
        assert_eq!(s.stats().ground_truth_ranges, vec![(0.0, 6.0)]);
    }

    #[test]
    fn validate_rejects_bad_steps() {
        let mut s = tiny(&[(0, 3)]);
        s.steps[2] = 5;
        assert!(matches!(s.validate(), Err(SampleError::Invariant { index: 2, .. })));
        let mut s = tiny(&[(0, 2)]);
        s.rewards.pop();
        assert!(matches!(s.validate(), Err(SampleError::Length { column: "rewards", .. })));
    }
}

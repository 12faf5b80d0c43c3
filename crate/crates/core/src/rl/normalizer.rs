use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-8;
/// Normalized inputs are clipped to `[-CLIP, CLIP]`.
pub const CLIP: f64 = 10.0;

/// Running per-dimension mean and variance of observed state vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: vec![0.0; dim], var: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges a `[n, dim]` batch into the statistics.
    pub fn update(&mut self, batch: &[f32]) {
        let d = self.dim();
        let n = batch.len() / d.max(1);
        if n == 0 {
            return;
        }
        let nb = n as f64;
        let mut bmean = vec![0.0; d];
        for row in batch.chunks(d) {
            for (m, &x) in bmean.iter_mut().zip(row) {
                *m += x as f64;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= nb);
        let mut bvar = vec![0.0; d];
        for row in batch.chunks(d) {
            for ((v, &x), m) in bvar.iter_mut().zip(row).zip(&bmean) {
                *v += (x as f64 - m) * (x as f64 - m);
            }
        }
        bvar.iter_mut().for_each(|v| *v /= nb);

        if self.count == 0.0 {
            self.mean = bmean;
            self.var = bvar;
            self.count = nb;
            return;
        }
        let total = self.count + nb;
        for j in 0..d {
            let delta = bmean[j] - self.mean[j];
            let m2 = self.var[j] * self.count + bvar[j] * nb + delta * delta * self.count * nb / total;
            self.mean[j] += delta * nb / total;
            self.var[j] = m2 / total;
        }
        self.count = total;
    }

    pub fn apply(&self, batch: &[f32]) -> Vec<f32> {
        let d = self.dim();
        batch
            .chunks(d)
            .flat_map(|row| {
                row.iter().zip(self.mean.iter().zip(&self.var)).map(|(&x, (m, v))| {
                    ((x as f64 - m) / (v + EPS).sqrt()).clamp(-CLIP, CLIP) as f32
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn column_stats(x: &[f32], d: usize, j: usize) -> (f64, f64) {
        let col: Vec<f64> = x.chunks(d).map(|r| r[j] as f64).collect();
        let n = col.len() as f64;
        let m = col.iter().sum::<f64>() / n;
        let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / n;
        (m, v.sqrt())
    }

    #[test]
    fn normalized_batch_is_standardized() {
        let mut rng = crate::rng::stream(3, 0);
        let d = 3;
        let batch: Vec<f32> = (0..500 * d)
            .map(|i| (i % d) as f32 * 5.0 + rng.random_range(-2.0..2.0) * (1 + i % d) as f32)
            .collect();
        let mut norm = RunningNorm::new(d);
        norm.update(&batch);
        let out = norm.apply(&batch);
        for j in 0..d {
            let (m, s) = column_stats(&out, d, j);
            assert!(m.abs() < 1e-6, "mean {m}");
            assert!((s - 1.0).abs() < 1e-3, "std {s}");
        }
    }

    #[test]
    fn incremental_updates_match_one_batch() {
        let mut rng = crate::rng::stream(4, 0);
        let batch: Vec<f32> = (0..2 * 97).map(|_| rng.random_range(-3.0..7.0)).collect();
        let mut once = RunningNorm::new(2);
        once.update(&batch);
        let mut parts = RunningNorm::new(2);
        for c in batch.chunks(2 * 13) {
            parts.update(c);
        }
        for j in 0..2 {
            assert!((once.mean[j] - parts.mean[j]).abs() < 1e-9);
            assert!((once.var[j] - parts.var[j]).abs() < 1e-9);
        }
        assert_eq!(parts.count, 97.0);
    }
}

use alloc::vec::Vec;
use rand::seq::index;

use super::{compute_loss, Architecture, LossBatch, LossWeights, SrlError};
use crate::autodiff::Graph;
use crate::exec::Exec;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst: usize,
}

/// Relative error floor, so parameters with vanishing gradients do not
/// divide by zero.
const FLOOR: f64 = 1e-6;
const STEP: f64 = 1e-4;
const MIN_STEP: f64 = 1e-8;
const SMOOTH_TOL: f64 = 1e-6;
/// Loss evaluations carry about this many ulps of accumulated rounding.
const ROUNDOFF_ULPS: f64 = 100.0;
const LIVE_FRACTION: f64 = 1e-9;

fn loss_at(exec: &dyn Exec, arch: &Architecture, params: &[f64], batch: &LossBatch<f64>, weights: &LossWeights) -> Result<f64, SrlError> {
    let mut g = Graph::<f64>::new(exec);
    let bound = arch.bind(&mut g, params, false);
    let out = compute_loss(&mut g, arch, &bound, batch, weights)?;
    Ok(g.scalar(out.total))
}

/// Checks `count` randomly chosen parameters among those with a nonzero
/// analytic gradient, in `f64`, using a fourth-order central stencil with an
/// adaptive step.
pub fn gradient_check(
    exec: &dyn Exec,
    arch: &Architecture,
    params: &[f64],
    batch: &LossBatch<f64>,
    weights: &LossWeights,
    count: usize,
    seed: u64,
) -> Result<GradCheck, SrlError> {
    let mut g = Graph::<f64>::new(exec);
    let bound = arch.bind(&mut g, params, true);
    let out = compute_loss(&mut g, arch, &bound, batch, weights)?;
    let grads = g.backward(out.total);
    let analytic = bound.flat_grad(&g, &grads);
    drop(grads);
    drop(g);

    // Gradients below this fraction of the largest one are cancellation
    // noise around an exact zero.
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let live: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i].abs() > scale * LIVE_FRACTION).collect();
    let mut rng = crate::rng::stream(seed, crate::rng::streams::SHUFFLE);
    let picks = index::sample(&mut rng, live.len(), count.min(live.len()));
    let mut report = GradCheck { checked: 0, max_rel_error: 0.0, worst: 0 };
    let mut p = params.to_vec();
    for k in picks.iter() {
        let i = live[k];
        let orig = p[i];
        let mut at = |offset: f64| -> Result<f64, SrlError> {
            p[i] = orig + offset;
            loss_at(exec, arch, &p, batch, weights)
        };
        // Start wide to keep rounding small relative to tiny gradients. When
        // the central and one-sided estimates disagree, a ReLU or max-pool
        // kink lies inside the stencil: shrink it, and if the kink sits at
        // the point itself the analytic gradient must match one side.
        let f0 = at(0.0)?;
        let mut step = STEP;
        let numeric = loop {
            let (p1, m1, p2, m2) = (at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?);
            let central = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * step);
            let right = (-3.0 * f0 + 4.0 * p1 - p2) / (2.0 * step);
            let left = (3.0 * f0 - 4.0 * m1 + m2) / (2.0 * step);
            let tol = (SMOOTH_TOL * central.abs()).max(ROUNDOFF_ULPS * f64::EPSILON * f0.abs() / step);
            if (right - central).abs() <= tol && (left - central).abs() <= tol {
                break central;
            }
            if step <= MIN_STEP {
                break if (right - analytic[i]).abs() < (left - analytic[i]).abs() { right } else { left };
            }
            step /= 4.0;
        };
        p[i] = orig;
        let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(FLOOR);
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = i;
        }
    }
    Ok(report)
}

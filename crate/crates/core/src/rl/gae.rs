use alloc::vec::Vec;

/// Generalized advantage estimates for one environment's trajectory.
///
/// `dones[t]` marks that the episode ended with step `t`; the recursion
/// restarts there and no value is bootstrapped across the boundary.
/// `bootstrap` is the value of the state following the last step.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae: length mismatch");
    let mut adv = alloc::vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    adv
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::Rng;

    /// Direct summation of discounted TD errors up to the episode end.
    fn oracle(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        let v = |k: usize| if k == n { bootstrap } else { values[k] };
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                for k in t..n {
                    let live = if dones[k] { 0.0 } else { 1.0 };
                    let delta = rewards[k] + gamma * live * v(k + 1) - values[k];
                    total += (gamma * lambda).powi((k - t) as i32) * delta;
                    if dones[k] {
                        break;
                    }
                }
                total
            })
            .collect()
    }

    #[test]
    fn matches_direct_summation_on_random_buffers() {
        let mut rng = crate::rng::stream(11, 0);
        for _ in 0..100 {
            let n = rng.random_range(1..200);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.05)).collect();
            let (gamma, lambda) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let boot = rng.random_range(-2.0..2.0);
            let fast = gae(&r, &v, &d, boot, gamma, lambda);
            let slow = oracle(&r, &v, &d, boot, gamma, lambda);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn zero_discount_is_one_step_error(r in proptest::collection::vec(-5.0..5.0f64, 1..50), seed in 0u64..1000) {
            let mut rng = crate::rng::stream(seed, 0);
            let v: Vec<f64> = r.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
            let d: Vec<bool> = r.iter().map(|_| rng.random_bool(0.2)).collect();
            let a = gae(&r, &v, &d, 1.5, 0.0, 0.95);
            for t in 0..r.len() {
                prop_assert!((a[t] - (r[t] - v[t])).abs() < 1e-12);
            }
        }

        #[test]
        fn undiscounted_monte_carlo_limit(r in proptest::collection::vec(-5.0..5.0f64, 1..50), seed in 0u64..1000) {
            let mut rng = crate::rng::stream(seed, 0);
            let mut d: Vec<bool> = r.iter().map(|_| rng.random_bool(0.2)).collect();
            *d.last_mut().unwrap() = true;
            let v = alloc::vec![0.0; r.len()];
            let a = gae(&r, &v, &d, 0.0, 1.0, 1.0);
            for t in 0..r.len() {
                let end = (t..r.len()).find(|&k| d[k]).unwrap();
                let expect: f64 = r[t..=end].iter().sum();
                prop_assert!((a[t] - expect).abs() < 1e-9);
            }
        }
    }
}

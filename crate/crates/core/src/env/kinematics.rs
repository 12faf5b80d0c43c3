//! Analytic kinematics of the 3-DOF arm: base yaw, shoulder pitch and
//! elbow pitch. Zero pose is the arm stretched horizontally along +x.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const UPPER_ARM: f64 = 0.35;
pub const FOREARM: f64 = 0.35;
/// Height of the shoulder joint above the table.
pub const SHOULDER_Z: f64 = 0.1;

const REACH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAngles {
    pub yaw: f64,
    pub shoulder: f64,
    pub elbow: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("point at distance {distance} from the shoulder is outside [{min}, {max}]")]
pub struct Unreachable {
    pub distance: f64,
    pub min: f64,
    pub max: f64,
}

/// Joint positions for drawing: shoulder, elbow, effector.
pub fn joint_positions(q: &JointAngles) -> [[f64; 3]; 3] {
    let (sy, cy) = q.yaw.sin_cos();
    let r1 = UPPER_ARM * q.shoulder.cos();
    let h1 = UPPER_ARM * q.shoulder.sin();
    let r2 = r1 + FOREARM * (q.shoulder + q.elbow).cos();
    let h2 = h1 + FOREARM * (q.shoulder + q.elbow).sin();
    [
        [0.0, 0.0, SHOULDER_Z],
        [r1 * cy, r1 * sy, SHOULDER_Z + h1],
        [r2 * cy, r2 * sy, SHOULDER_Z + h2],
    ]
}

pub fn forward_kinematics(q: &JointAngles) -> [f64; 3] {
    joint_positions(q)[2]
}

/// Elbow-up analytic solution.
pub fn inverse_kinematics(p: [f64; 3]) -> Result<JointAngles, Unreachable> {
    let radial = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let h = p[2] - SHOULDER_Z;
    let d2 = radial * radial + h * h;
    let d = d2.sqrt();
    let (min, max) = ((UPPER_ARM - FOREARM).abs(), UPPER_ARM + FOREARM);
    if d > max + REACH_TOL || d < min - REACH_TOL {
        return Err(Unreachable { distance: d, min, max });
    }
    let yaw = if radial == 0.0 { 0.0 } else { p[1].atan2(p[0]) };
    let c2 = ((d2 - UPPER_ARM * UPPER_ARM - FOREARM * FOREARM) / (2.0 * UPPER_ARM * FOREARM)).clamp(-1.0, 1.0);
    let elbow = -c2.acos();
    let shoulder = h.atan2(radial) - (FOREARM * elbow.sin()).atan2(UPPER_ARM + FOREARM * elbow.cos());
    Ok(JointAngles { yaw, shoulder, elbow })
}

pub fn is_reachable(p: [f64; 3]) -> bool {
    inverse_kinematics(p).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn full_extension_is_zero_pose() {
        let q = inverse_kinematics([UPPER_ARM + FOREARM, 0.0, SHOULDER_Z]).unwrap();
        assert!(q.yaw.abs() < 1e-12 && q.shoulder.abs() < 1e-6 && q.elbow.abs() < 1e-6);
    }

    #[test]
    fn beyond_reach_is_unreachable() {
        let err = inverse_kinematics([0.8, 0.0, SHOULDER_Z]).unwrap_err();
        assert!(err.distance > err.max);
    }

    #[test]
    fn round_trip_over_sampled_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        let mut n = 0;
        while n < 1000 {
            let p = [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-0.6..0.8)];
            let Ok(q) = inverse_kinematics(p) else { continue };
            let back = forward_kinematics(&q);
            for k in 0..3 {
                worst = worst.max((back[k] - p[k]).abs());
            }
            n += 1;
        }
        assert!(worst < 1e-6, "max round-trip error {worst}");
    }
}

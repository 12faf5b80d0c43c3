//! CSV exports of training logs and reward curves.

use std::fmt::Write as _;
use std::path::Path;

use srl_core::rl::RewardCurve;
use srl_core::srl::TrainingLog;

/// `epoch,term,value` rows.
pub fn training_log_csv(log: &TrainingLog) -> String {
    let mut out = String::from("epoch,term,value\n");
    for e in &log.entries {
        let _ = writeln!(out, "{},{},{}", e.epoch, e.term, e.value);
    }
    out
}

/// `timesteps,mean,stderr` rows; `stderr` is empty when undefined.
pub fn reward_curve_csv(curve: &RewardCurve) -> String {
    let mut out = String::from("timesteps,mean,stderr\n");
    for p in &curve.points {
        let stderr = p.stderr.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", p.timesteps, p.mean, stderr);
    }
    out
}

pub fn write(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use srl_core::rl::CurvePoint;
    use srl_core::srl::LogEntry;

    #[test]
    fn csv_layouts() {
        let log = TrainingLog {
            entries: vec![LogEntry { epoch: 0, term: "total".into(), value: 0.5 }],
            flags: vec![],
        };
        assert_eq!(training_log_csv(&log), "epoch,term,value\n0,total,0.5\n");
        let curve = RewardCurve {
            points: vec![
                CurvePoint { timesteps: 1024, mean: -3.0, stderr: None, episodes: 1 },
                CurvePoint { timesteps: 2048, mean: 1.5, stderr: Some(0.25), episodes: 2 },
            ],
            flags: vec![],
        };
        assert_eq!(reward_curve_csv(&curve), "timesteps,mean,stderr\n1024,-3,\n2048,1.5,0.25\n");
    }
}

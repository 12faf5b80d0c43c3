use std::path::Path;
use std::process::{Command, Output};

fn srlbench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srlbench")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn generate(cwd: &Path, out: &str, samples: &str) -> Output {
    srlbench(&["generate", "--env", "mobile-random", "--samples", samples, "--workers", "2", "--seed", "1", "--out", out], cwd)
}

#[test]
fn generate_validates_env_and_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = srlbench(&["generate", "--env", "warehouse", "--out", "d"], dir.path());
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mobile-static") && err.contains("arm-distractors"), "{err}");

    let out = generate(dir.path(), "d", "50");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["samples"], 50);
    let shard = std::fs::read(dir.path().join("d/shard_000.bin")).unwrap();

    assert_eq!(code(&generate(dir.path(), "d", "60")), 3);
    assert_eq!(std::fs::read(dir.path().join("d/shard_000.bin")).unwrap(), shard);
}

#[test]
fn env_config_file_and_image_size_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("env.cfg"), "preset = mobile-static\nwidth = 48\nheight = 48\n").unwrap();
    let out = srlbench(
        &["generate", "--env-config", "env.cfg", "--image-size", "32", "--samples", "5", "--workers", "1", "--out", "d"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("d/manifest.json")).unwrap()).unwrap();
    assert_eq!((manifest["width"].as_u64(), manifest["height"].as_u64()), (Some(32), Some(32)));

    std::fs::write(dir.path().join("bad.cfg"), "colour = red\n").unwrap();
    let out = srlbench(&["generate", "--env-config", "bad.cfg", "--out", "e"], dir.path());
    assert_eq!(code(&out), 2);
    let out = srlbench(&["generate", "--env-config", "missing.cfg", "--out", "e"], dir.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&generate(dir.path(), "d", "200")), 0);

    let out = srlbench(&["train-srl", "--model", "priors", "--batch-size", "1", "--data", "d", "--out", "p.bin"], dir.path());
    assert_eq!(code(&out), 2);

    let train = |out: &str| {
        srlbench(
            &[
                "train-srl", "--model", "fwd+inv", "--state-dim", "2", "--data", "d", "--out", out, "--log", "log.csv",
                "--epochs", "1", "--seed", "4", "--threads", "1",
            ],
            dir.path(),
        )
    };
    let out = train("a.bin");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&train("b.bin")), 0);
    let a = std::fs::read(dir.path().join("a.bin")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.bin")).unwrap());
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert!(log.starts_with("epoch,term,value\n") && log.contains(",inverse,"), "{log}");

    let out = srlbench(&["eval", "--model", "a.bin", "--data", "d", "--k", "5"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert!(report["knn_mse"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["gtc"].as_array().unwrap().len(), 4);
    assert_eq!(report["state_dim"], 2);

    let gt = json(&srlbench(&["eval", "--model", "ground-truth", "--data", "d"], dir.path()));
    assert!((gt["gtc_mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let out = srlbench(&["eval", "--model", "ground-truth", "--data", "d", "--k", "999999"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("k = 999999"));

    let out = srlbench(&["eval", "--model", "nothing.bin", "--data", "d"], dir.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn train_rl_validates_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&srlbench(&["train-rl", "--budget", "0"], dir.path())), 2);
    assert_eq!(code(&srlbench(&["train-rl", "--input", "learned"], dir.path())), 2);

    let out = srlbench(
        &[
            "train-rl", "--env", "mobile-static", "--input", "gt", "--budget", "1024", "--n-envs", "2", "--horizon", "256",
            "--out", "pol.bin", "--curve", "curve.csv", "--eval-episodes", "1",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["timesteps"], 1024);
    assert_eq!(report["input"], "ground_truth");
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("timesteps,mean,stderr"));
    assert_eq!(curve.lines().count(), 3);
    assert!(dir.path().join("pol.bin").exists());
}

#[test]
fn benchmark_reports_resolution_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let out = srlbench(&["benchmark", "--env", "mobile-static", "--workers", "2", "--seconds", "0.3"], dir.path());
    assert_eq!(code(&out), 0);
    let r = json(&out);
    assert_eq!((r["width"].as_u64(), r["height"].as_u64(), r["workers"].as_u64()), (Some(64), Some(64), Some(2)));
    assert!(r["steps_per_sec"].as_f64().unwrap() > 0.0);
    assert_eq!(code(&srlbench(&["benchmark", "--workers", "0"], dir.path())), 2);
}

#[test]
fn help_lists_flags_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = srlbench(&["train-srl", "--help"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--model", "--state-dim", "--epochs", "--lr", "--seed", "[default: 10]"] {
        assert!(text.contains(flag), "missing {flag} in\n{text}");
    }
}

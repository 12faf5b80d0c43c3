use std::fs;
use std::path::Path;

use srl_core::env::EnvConfig;
use srl_core::samples::{collect_random, SampleSet};
use srlbench::dataset::{self, Dataset, DatasetError};

fn mobile_random() -> EnvConfig {
    EnvConfig::preset("mobile-random").unwrap()
}

fn shard_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn generated_records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let env = mobile_random();
    let manifest = dataset::generate(&env, Some("mobile-random"), 250, 3, 7, dir.path(), false).unwrap();
    assert_eq!(manifest.samples, 250);
    assert_eq!(manifest.shards.len(), 3);
    assert_eq!(manifest.gt_dim(), 4);

    let data = Dataset::open(dir.path()).unwrap();
    let set = data.load().unwrap();
    assert_eq!(set.len(), 250);
    for i in [0, 1, 83, 84, 166, 249] {
        let r = data.record(i).unwrap();
        assert_eq!(r.image, set.image(i));
        assert_eq!(r.ground_truth, set.gt(i));
        assert_eq!((r.episode, r.step, r.action), (set.episodes[i], set.steps[i], set.actions[i]));
        assert_eq!(r.reward, set.rewards[i]);
    }
    // Episode ids keep increasing across shard boundaries.
    assert!(set.episodes.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn saved_set_loads_back_equal() {
    let dir = tempfile::tempdir().unwrap();
    let env = mobile_random();
    let set = collect_random(&env, 120, 3).unwrap();
    dataset::save(&set, &env, 3, dir.path(), false).unwrap();
    assert_eq!(Dataset::open(dir.path()).unwrap().load().unwrap(), set);
}

#[test]
fn same_seed_and_workers_give_identical_shards() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let env = mobile_random();
    dataset::generate(&env, None, 400, 4, 11, a.path(), false).unwrap();
    dataset::generate(&env, None, 400, 4, 11, b.path(), false).unwrap();
    assert_eq!(shard_bytes(a.path()), shard_bytes(b.path()));
    assert_eq!(fs::read(a.path().join("manifest.json")).unwrap(), fs::read(b.path().join("manifest.json")).unwrap());

    let c = tempfile::tempdir().unwrap();
    dataset::generate(&env, None, 400, 4, 12, c.path(), false).unwrap();
    assert_ne!(shard_bytes(a.path()), shard_bytes(c.path()));
}

#[test]
fn single_sample_dataset() {
    let dir = tempfile::tempdir().unwrap();
    dataset::generate(&mobile_random(), None, 1, 4, 0, dir.path(), false).unwrap();
    let set = Dataset::open(dir.path()).unwrap().load().unwrap();
    assert_eq!(set.len(), 1);
    assert_eq!((set.episodes[0], set.steps[0]), (0, 0));
}

#[test]
fn truncated_shard_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    dataset::generate(&mobile_random(), None, 60, 2, 0, dir.path(), false).unwrap();
    let shard = dir.path().join(dataset::shard_name(1));
    let bytes = fs::read(&shard).unwrap();
    fs::write(&shard, &bytes[..bytes.len() - 10]).unwrap();
    match Dataset::open(dir.path()) {
        Err(e @ DatasetError::Format { .. }) => assert!(e.to_string().contains("shard_001.bin"), "{e}"),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn bad_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    dataset::generate(&mobile_random(), None, 10, 1, 0, dir.path(), false).unwrap();
    let shard = dir.path().join(dataset::shard_name(0));
    let mut bytes = fs::read(&shard).unwrap();
    bytes[0] = b'X';
    fs::write(&shard, bytes).unwrap();
    assert!(matches!(Dataset::open(dir.path()), Err(DatasetError::Format { .. })));
}

#[test]
fn existing_dataset_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let env = mobile_random();
    dataset::generate(&env, None, 20, 1, 0, dir.path(), false).unwrap();
    let before = shard_bytes(dir.path());
    let err = dataset::generate(&env, None, 20, 1, 1, dir.path(), false).unwrap_err();
    assert!(err.is_io() && matches!(err, DatasetError::NotEmpty(_)));
    assert_eq!(shard_bytes(dir.path()), before);

    fs::write(dir.path().join("notes.txt"), "keep").unwrap();
    dataset::generate(&env, None, 20, 1, 1, dir.path(), true).unwrap();
    assert_ne!(shard_bytes(dir.path()), before);
    assert!(dir.path().join("notes.txt").exists());
}

#[test]
fn continuous_envs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut env = mobile_random();
    if let EnvConfig::Mobile(m) = &mut env {
        m.action_mode = srl_core::env::ActionMode::Continuous;
    }
    assert!(matches!(
        dataset::generate(&env, None, 10, 1, 0, dir.path(), false),
        Err(DatasetError::Config(_))
    ));
}

#[test]
fn transitions_stay_inside_episodes() {
    let env = mobile_random();
    let image = env.image();
    let mut set = SampleSet::empty(image.width, image.height, 4, 4);
    let pixels = vec![0u8; image.width * image.height * 3];
    for (episode, step) in [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)] {
        set.push(&pixels, 0, 0.0, &[0.5; 4], episode, step);
    }
    let dir = tempfile::tempdir().unwrap();
    dataset::save(&set, &env, 0, dir.path(), false).unwrap();
    let loaded = Dataset::open(dir.path()).unwrap().load().unwrap();
    assert_eq!(loaded.transitions(), vec![0, 1, 3]);
}

#[test]
fn stats_of_a_sparse_mobile_dataset() {
    let dir = tempfile::tempdir().unwrap();
    dataset::generate(&mobile_random(), None, 3000, 2, 5, dir.path(), false).unwrap();
    let stats = Dataset::open(dir.path()).unwrap().load().unwrap().stats();
    assert_eq!(stats.samples, 3000);
    assert!(stats.reward_histogram.iter().all(|(r, _)| [-1.0, 0.0, 1.0].contains(r)), "{:?}", stats.reward_histogram);
    assert_eq!(stats.reward_histogram.iter().map(|(_, c)| c).sum::<usize>(), 3000);
    assert_eq!(stats.episode_length_histogram.iter().map(|(l, c)| l * c).sum::<usize>(), 3000);
    for &(lo, hi) in &stats.ground_truth_ranges[..2] {
        assert!(lo >= 0.05 && hi <= 0.95, "robot range {lo}..{hi}");
    }
}

#[test]
fn single_episode_length_histogram() {
    let env = mobile_random();
    let set = collect_random(&env, 400, 0).unwrap();
    let first_len = set.episodes.iter().take_while(|&&e| e == 0).count();
    let one = set.subset(&(0..first_len).collect::<Vec<_>>());
    assert_eq!(one.stats().episode_length_histogram, vec![(first_len, 1)]);
}

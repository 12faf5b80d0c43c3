//! On-disk datasets: a directory with `manifest.json` and `shard_NNN.bin`
//! files.
//!
//! Shard layout, little-endian: magic `SRLBDATA`, u32 version, u32 record
//! count, then fixed-size records of u32 episode index, u32 step index,
//! i32 action, f32 reward, f32 ground truth `[dim]`, and raw RGB bytes.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use srl_core::env::{ActionSpace, EnvConfig};
use srl_core::rng;
use srl_core::samples::{collect_random, SampleError, SampleSet};

pub const MAGIC: &[u8; 8] = b"SRLBDATA";
pub const VERSION: u32 = 1;
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const HEADER_LEN: u64 = 16;
const REWARD_ALIGNMENT: &str = "reward[t] is received for taking action[t] in observation[t]";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{} exists and is not empty; pass --force to overwrite", .0.display())]
    NotEmpty(PathBuf),
    #[error("shard {shard}: {reason}")]
    Format { shard: String, reason: String },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Invariant(#[from] SampleError),
    #[error("invalid generation request: {0}")]
    Config(String),
}

impl DatasetError {
    pub fn is_io(&self) -> bool {
        matches!(self, DatasetError::Io { .. } | DatasetError::NotEmpty(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub env: EnvConfig,
    pub env_name: Option<String>,
    pub samples: usize,
    pub width: usize,
    pub height: usize,
    pub action_space: ActionSpace,
    pub ground_truth_layout: Vec<String>,
    pub seed: u64,
    pub workers: usize,
    pub reward_alignment: String,
    pub shards: Vec<ShardInfo>,
}

impl Manifest {
    pub fn gt_dim(&self) -> usize {
        self.ground_truth_layout.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_space.n().unwrap_or(0)
    }

    pub fn record_len(&self) -> usize {
        16 + 4 * self.gt_dim() + self.width * self.height * 3
    }
}

/// One stored step.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub episode: u32,
    pub step: u32,
    pub action: i32,
    pub reward: f32,
    pub ground_truth: Vec<f32>,
    pub image: Vec<u8>,
}

/// Seed of generation worker `w`.
pub fn worker_seed(seed: u64, worker: usize) -> u64 {
    rng::mix(seed, 0x6461_7461_0000 + worker as u64)
}

/// Records `n_samples` steps of a uniform random policy. Worker `w`
/// records the `w`-th share of the samples in its own env, seeded from
/// `(seed, w)`, and owns shard `w`; episode ids are renumbered to be
/// increasing across shards. Output is identical for equal `(seed,
/// workers)`.
pub fn generate(
    env: &EnvConfig,
    env_name: Option<&str>,
    n_samples: usize,
    workers: usize,
    seed: u64,
    dir: &Path,
    force: bool,
) -> Result<Manifest, DatasetError> {
    if n_samples == 0 || workers == 0 {
        return Err(DatasetError::Config("samples and workers must be at least 1".into()));
    }
    let n_actions = env.action_space().n();
    if n_actions.is_none() {
        return Err(DatasetError::Config("datasets store integer actions; use a discrete action mode".into()));
    }
    prepare_dir(dir, force)?;

    let counts: Vec<usize> = (0..workers).map(|w| n_samples / workers + usize::from(w < n_samples % workers)).collect();
    let mut sets: Vec<SampleSet> = std::thread::scope(|s| {
        let handles: Vec<_> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(w, &c)| s.spawn(move || collect_random(env, c, worker_seed(seed, w)).expect("discrete env")))
            .collect();
        handles.into_iter().map(|h| h.join().expect("generation worker panicked")).collect()
    });
    let mut offset = 0;
    for set in &mut sets {
        set.episodes.iter_mut().for_each(|e| *e += offset);
        offset = set.episodes.last().map_or(offset, |e| e + 1);
    }

    let image = env.image();
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        env: env.clone(),
        env_name: env_name.map(str::to_string),
        samples: n_samples,
        width: image.width,
        height: image.height,
        action_space: env.action_space(),
        ground_truth_layout: env.ground_truth_layout().iter().map(|s| s.to_string()).collect(),
        seed,
        workers,
        reward_alignment: REWARD_ALIGNMENT.into(),
        shards: sets.iter().enumerate().map(|(i, s)| ShardInfo { file: shard_name(i), records: s.len() }).collect(),
    };
    let results: Vec<Result<(), DatasetError>> = std::thread::scope(|s| {
        let handles: Vec<_> = sets
            .iter()
            .enumerate()
            .map(|(i, set)| s.spawn(move || write_shard(&dir.join(shard_name(i)), set)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("shard writer panicked")).collect()
    });
    results.into_iter().collect::<Result<Vec<()>, _>>()?;
    manifest.samples = sets.iter().map(SampleSet::len).sum();
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Writes an in-memory set as a single-shard dataset.
pub fn save(set: &SampleSet, env: &EnvConfig, seed: u64, dir: &Path, force: bool) -> Result<Manifest, DatasetError> {
    prepare_dir(dir, force)?;
    set.validate()?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        env: env.clone(),
        env_name: None,
        samples: set.len(),
        width: set.width,
        height: set.height,
        action_space: env.action_space(),
        ground_truth_layout: env.ground_truth_layout().iter().map(|s| s.to_string()).collect(),
        seed,
        workers: 1,
        reward_alignment: REWARD_ALIGNMENT.into(),
        shards: vec![ShardInfo { file: shard_name(0), records: set.len() }],
    };
    write_shard(&dir.join(shard_name(0)), set)?;
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn shard_name(i: usize) -> String {
    format!("shard_{i:03}.bin")
}

fn prepare_dir(dir: &Path, force: bool) -> Result<(), DatasetError> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(io_err(dir))?;
        if entries.next().is_some() {
            if !force {
                return Err(DatasetError::NotEmpty(dir.to_path_buf()));
            }
            for entry in fs::read_dir(dir).map_err(io_err(dir))? {
                let path = entry.map_err(io_err(dir))?.path();
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if name == MANIFEST || (name.starts_with("shard_") && name.ends_with(".bin")) {
                    fs::remove_file(&path).map_err(io_err(&path))?;
                }
            }
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), DatasetError> {
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

fn write_shard(path: &Path, set: &SampleSet) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let put = |w: &mut BufWriter<File>, bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    put(&mut w, MAGIC)?;
    put(&mut w, &VERSION.to_le_bytes())?;
    put(&mut w, &(set.len() as u32).to_le_bytes())?;
    for i in 0..set.len() {
        put(&mut w, &set.episodes[i].to_le_bytes())?;
        put(&mut w, &set.steps[i].to_le_bytes())?;
        put(&mut w, &set.actions[i].to_le_bytes())?;
        put(&mut w, &set.rewards[i].to_le_bytes())?;
        for v in set.gt(i) {
            put(&mut w, &v.to_le_bytes())?;
        }
        put(&mut w, set.image(i))?;
    }
    w.flush().map_err(io_err(path))
}

/// An opened dataset directory. Records are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    starts: Vec<usize>,
}

impl Dataset {
    /// Reads the manifest and checks every shard header and length.
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Format { shard: MANIFEST.into(), reason: e.to_string() })?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::Format {
                shard: MANIFEST.into(),
                reason: format!("unsupported schema version {}", manifest.schema_version),
            });
        }
        let image = manifest.env.image();
        if (image.width, image.height) != (manifest.width, manifest.height)
            || manifest.ground_truth_layout.len() != manifest.env.ground_truth_layout().len()
        {
            return Err(DatasetError::ManifestMismatch("image size or layout differs from the env config".into()));
        }
        let total: usize = manifest.shards.iter().map(|s| s.records).sum();
        if total != manifest.samples {
            return Err(DatasetError::ManifestMismatch(format!(
                "manifest lists {} samples but shards hold {total}",
                manifest.samples
            )));
        }
        let mut starts = Vec::with_capacity(manifest.shards.len());
        let mut at = 0;
        for shard in &manifest.shards {
            let count = read_header(&dir.join(&shard.file), &shard.file, manifest.record_len())?;
            if count != shard.records {
                return Err(DatasetError::ManifestMismatch(format!(
                    "{} holds {count} records, manifest says {}",
                    shard.file, shard.records
                )));
            }
            starts.push(at);
            at += count;
        }
        Ok(Self { dir: dir.to_path_buf(), manifest, starts })
    }

    pub fn len(&self) -> usize {
        self.manifest.samples
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn locate(&self, index: usize) -> (usize, usize) {
        let shard = self.starts.partition_point(|&s| s <= index) - 1;
        (shard, index - self.starts[shard])
    }

    /// Reads record `index` from its shard.
    pub fn record(&self, index: usize) -> Result<Record, DatasetError> {
        assert!(index < self.len(), "record {index} out of range 0..{}", self.len());
        let (shard, local) = self.locate(index);
        let info = &self.manifest.shards[shard];
        let path = self.dir.join(&info.file);
        let mut f = File::open(&path).map_err(io_err(&path))?;
        let len = self.manifest.record_len();
        f.seek(SeekFrom::Start(HEADER_LEN + (local * len) as u64)).map_err(io_err(&path))?;
        let mut buf = vec![0; len];
        f.read_exact(&mut buf).map_err(|e| truncated(&info.file, e))?;
        Ok(self.parse_record(&buf))
    }

    fn parse_record(&self, buf: &[u8]) -> Record {
        let word = |i: usize| <[u8; 4]>::try_from(&buf[4 * i..4 * i + 4]).expect("4 bytes");
        let dim = self.manifest.gt_dim();
        Record {
            episode: u32::from_le_bytes(word(0)),
            step: u32::from_le_bytes(word(1)),
            action: i32::from_le_bytes(word(2)),
            reward: f32::from_le_bytes(word(3)),
            ground_truth: (0..dim).map(|j| f32::from_le_bytes(word(4 + j))).collect(),
            image: buf[16 + 4 * dim..].to_vec(),
        }
    }

    /// Reads every record and validates the episode bookkeeping.
    pub fn load(&self) -> Result<SampleSet, DatasetError> {
        let m = &self.manifest;
        let mut set = SampleSet::empty(m.width, m.height, m.gt_dim(), m.n_actions());
        set.images.reserve(m.samples * m.width * m.height * 3);
        let len = m.record_len();
        for info in &m.shards {
            let path = self.dir.join(&info.file);
            let mut r = BufReader::new(File::open(&path).map_err(io_err(&path))?);
            r.seek(SeekFrom::Start(HEADER_LEN)).map_err(io_err(&path))?;
            let mut buf = vec![0; len];
            for _ in 0..info.records {
                r.read_exact(&mut buf).map_err(|e| truncated(&info.file, e))?;
                let rec = self.parse_record(&buf);
                set.push(&rec.image, rec.action, rec.reward, &rec.ground_truth, rec.episode, rec.step);
            }
        }
        set.validate()?;
        Ok(set)
    }
}

fn truncated(shard: &str, e: io::Error) -> DatasetError {
    DatasetError::Format { shard: shard.to_string(), reason: format!("truncated record data ({e})") }
}

fn read_header(path: &Path, name: &str, record_len: usize) -> Result<usize, DatasetError> {
    let format = |reason: String| DatasetError::Format { shard: name.to_string(), reason };
    let mut f = File::open(path).map_err(io_err(path))?;
    let size = f.metadata().map_err(io_err(path))?.len();
    let mut header = [0u8; HEADER_LEN as usize];
    f.read_exact(&mut header).map_err(|_| format(format!("file is {size} bytes, shorter than the header")))?;
    if &header[..8] != MAGIC {
        return Err(format("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes")) as usize;
    let expected = HEADER_LEN + (count * record_len) as u64;
    if size != expected {
        return Err(format(format!("length {size} bytes, expected {expected} for {count} records")));
    }
    Ok(count)
}

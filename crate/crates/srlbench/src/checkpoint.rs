//! Binary checkpoints for encoders and policies.
//!
//! Both formats are little-endian: an 8-byte magic, u32 version, u32
//! header length, a UTF-8 JSON header describing the networks, u32
//! parameter count and the f32 parameters. Policy checkpoints append a
//! u32 length and an embedded encoder checkpoint (length 0 when the
//! policy does not use one).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use srl_core::nn::Net;
use srl_core::rl::{Policy, PolicyInput, RunningNorm};
use srl_core::srl::{Architecture, Model, SrlError};

pub const MODEL_MAGIC: &[u8; 8] = b"SRLMODEL";
pub const POLICY_MAGIC: &[u8; 8] = b"SRLPOLCY";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("not a {expected} checkpoint (bad magic)")]
    Magic { expected: &'static str },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] SrlError),
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    architecture: Architecture,
}

#[derive(Serialize, Deserialize)]
struct PolicyHeader {
    input: String,
    n_actions: usize,
    pi: Net,
    vf: Net,
    normalizer: Option<RunningNorm>,
    timesteps: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_params(out: &mut Vec<u8>, params: &[f32]) {
    put_u32(out, params.len());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
}

fn put_header(out: &mut Vec<u8>, magic: &[u8; 8], json: &[u8]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(out, json.len());
    out.extend_from_slice(json);
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.0.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn header(&mut self, magic: &[u8; 8], name: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.take(8)? != magic {
            return Err(CheckpointError::Magic { expected: name });
        }
        let version = self.u32()? as u32;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = self.u32()?;
        self.take(len)
    }

    fn params(&mut self) -> Result<Vec<f32>, CheckpointError> {
        let n = self.u32()?;
        let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let json = serde_json::to_vec(&ModelHeader { architecture: model.arch.clone() }).expect("header serializes");
    let mut out = Vec::with_capacity(24 + json.len() + 4 * model.params.len());
    put_header(&mut out, MODEL_MAGIC, &json);
    put_params(&mut out, &model.params);
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut c = Cursor(bytes);
    let header: ModelHeader =
        serde_json::from_slice(c.header(MODEL_MAGIC, "model")?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let params = c.params()?;
    if !c.0.is_empty() {
        return Err(CheckpointError::Header(format!("{} trailing bytes", c.0.len())));
    }
    Ok(Model::new(header.architecture, params)?)
}

pub fn policy_to_bytes(policy: &Policy) -> Vec<u8> {
    let header = PolicyHeader {
        input: policy.input.name().to_string(),
        n_actions: policy.n_actions,
        pi: policy.pi.clone(),
        vf: policy.vf.clone(),
        normalizer: policy.normalizer.clone(),
        timesteps: policy.timesteps,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    put_header(&mut out, POLICY_MAGIC, &json);
    put_params(&mut out, &policy.params);
    match &policy.input {
        PolicyInput::LearnedStates(model) => {
            let inner = model_to_bytes(model);
            put_u32(&mut out, inner.len());
            out.extend_from_slice(&inner);
        }
        _ => put_u32(&mut out, 0),
    }
    out
}

pub fn policy_from_bytes(bytes: &[u8]) -> Result<Policy, CheckpointError> {
    let mut c = Cursor(bytes);
    let h: PolicyHeader =
        serde_json::from_slice(c.header(POLICY_MAGIC, "policy")?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let params = c.params()?;
    let inner_len = c.u32()?;
    let inner = c.take(inner_len)?;
    let input = match (h.input.as_str(), inner_len) {
        ("ground_truth", 0) => PolicyInput::GroundTruth,
        ("pixels", 0) => PolicyInput::RawPixels,
        ("learned", n) if n > 0 => PolicyInput::LearnedStates(model_from_bytes(inner)?),
        (other, _) => return Err(CheckpointError::Header(format!("inconsistent input kind `{other}`"))),
    };
    if params.len() != h.pi.param_count() + h.vf.param_count() {
        return Err(CheckpointError::Header("parameter count does not match the networks".into()));
    }
    Ok(Policy { input, n_actions: h.n_actions, pi: h.pi, vf: h.vf, params, normalizer: h.normalizer, timesteps: h.timesteps })
}

fn read(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    fs::write(path, bytes).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn save_model(path: &Path, model: &Model) -> Result<(), CheckpointError> {
    write(path, &model_to_bytes(model))
}

pub fn load_model(path: &Path) -> Result<Model, CheckpointError> {
    model_from_bytes(&read(path)?)
}

pub fn save_policy(path: &Path, policy: &Policy) -> Result<(), CheckpointError> {
    write(path, &policy_to_bytes(policy))
}

pub fn load_policy(path: &Path) -> Result<Policy, CheckpointError> {
    policy_from_bytes(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use srl_core::srl::{Backbone, ModelKind};

    fn model(kind: ModelKind) -> Model {
        Model::initialized(Architecture::new(kind, 3, 64, 4, Backbone::Small, 16), 9)
    }

    #[test]
    fn model_round_trip() {
        for kind in ModelKind::ALL {
            let m = model(kind);
            let bytes = model_to_bytes(&m);
            assert_eq!(&bytes[..8], MODEL_MAGIC);
            assert_eq!(model_from_bytes(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn policy_round_trip() {
        for input in [PolicyInput::GroundTruth, PolicyInput::RawPixels, PolicyInput::LearnedStates(model(ModelKind::Autoencoder))] {
            let p = Policy::new(input, 4, 4, 2);
            assert_eq!(policy_from_bytes(&policy_to_bytes(&p)).unwrap(), p);
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = model_to_bytes(&model(ModelKind::Forward));
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(CheckpointError::Magic { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(model_from_bytes(&long), Err(CheckpointError::Header(_))));
        assert!(matches!(policy_from_bytes(&model_to_bytes(&model(ModelKind::Forward))), Err(CheckpointError::Magic { .. })));
    }
}

//! HTTP + WebSocket server backing the state-space explorer.
//!
//! The wire protocol is documented in `docs/api.md`.

mod live;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use srl_core::env::EnvConfig;
use srl_core::exec::Exec;
use srl_core::linalg::Matrix;
use srl_core::metrics::{self, Pca};
use srl_core::rl::Policy;
use srl_core::samples::SampleSet;
use srl_core::srl::{nearest_decode, Model, SrlError};

use crate::image::to_png;

pub use live::LiveOptions;

/// Loaded dataset plus the state set shown in the explorer.
pub struct Session {
    pub samples: SampleSet,
    /// `None` shows ground-truth states.
    pub model: Option<Model>,
    pub states: Matrix,
    pub projection: Matrix,
    pca: Option<Pca>,
    /// Environment for the live stream; usually the dataset's.
    pub env: EnvConfig,
    pub policy: Option<Policy>,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Model(#[from] SrlError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("dataset has no samples")]
    Empty,
}

impl Session {
    pub fn new(
        exec: &dyn Exec,
        samples: SampleSet,
        model: Option<Model>,
        env: EnvConfig,
        policy: Option<Policy>,
    ) -> Result<Self, SessionError> {
        if samples.is_empty() {
            return Err(SessionError::Empty);
        }
        let states = match &model {
            Some(m) => m.encode_samples(exec, &samples)?,
            None => samples.ground_truth_matrix(),
        };
        let (projection, pca) = if states.cols <= 3 {
            (metrics::project3(&states)?, None)
        } else {
            let p = metrics::pca_project(&states, 3)?;
            let mut proj = Matrix::zeros(states.rows, 3);
            for i in 0..states.rows {
                proj.row_mut(i)[..p.projected.cols].copy_from_slice(p.projected.row(i));
            }
            (proj, Some(p))
        };
        Ok(Self { samples, model, states, projection, pca, env, policy })
    }

    pub fn state_dim(&self) -> usize {
        self.states.cols
    }

    pub fn projection_kind(&self) -> &'static str {
        if self.pca.is_some() {
            "pca"
        } else {
            "identity"
        }
    }

    /// Places a state in the 3-D view space of the session.
    pub fn project(&self, state: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        match &self.pca {
            Some(p) => out[..p.components.cols].copy_from_slice(&p.project(state)),
            None => out[..state.len()].copy_from_slice(state),
        }
        out
    }
}

pub struct AppState {
    session: RwLock<Option<Arc<Session>>>,
    live: LiveOptions,
}

impl AppState {
    pub fn new(session: Option<Session>, live: LiveOptions) -> Arc<Self> {
        Arc::new(Self { session: RwLock::new(session.map(Arc::new)), live })
    }

    /// Replaces the active session; projections are rebuilt by the caller
    /// through [`Session::new`].
    pub fn set_session(&self, session: Session) {
        *self.session.write().expect("session lock") = Some(Arc::new(session));
    }

    fn current(&self) -> Result<Arc<Session>, ApiError> {
        self.session.read().expect("session lock").clone().ok_or(ApiError::NoSession)
    }
}

#[derive(Debug)]
pub enum ApiError {
    NoSession,
    IndexOutOfRange { index: usize, len: usize },
    DimensionMismatch { expected: usize, found: usize },
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    valid_range: Option<[usize; 2]>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error, message, valid_range) = match self {
            ApiError::NoSession => (StatusCode::SERVICE_UNAVAILABLE, "no_session", "no dataset is loaded".into(), None),
            ApiError::IndexOutOfRange { index, len } => (
                StatusCode::NOT_FOUND,
                "index_out_of_range",
                format!("index {index} is outside 0..{len}"),
                Some([0, len]),
            ),
            ApiError::DimensionMismatch { expected, found } => (
                StatusCode::BAD_REQUEST,
                "dimension_mismatch",
                format!("state has {found} components, expected {expected}"),
                None,
            ),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m, None),
        };
        (status, Json(ErrorBody { error, message, valid_range })).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StatePoint {
    pub index: usize,
    pub point: [f64; 3],
    pub reward: f32,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StatesResponse {
    pub count: usize,
    pub state_dim: usize,
    pub projection: String,
    pub source: String,
    pub points: Vec<StatePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub state: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecodeResponse {
    /// `reconstruction` or `nearest_neighbor`.
    pub path: String,
    pub nearest_index: Option<usize>,
    pub image_png_base64: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/states", get(get_states))
        .route("/api/observation/{index}", get(get_observation))
        .route("/api/decode", post(decode_state))
        .route("/api/live", get(live::handler))
        .with_state(state)
}

async fn get_states(State(app): State<Arc<AppState>>) -> Result<Json<StatesResponse>, ApiError> {
    let s = app.current()?;
    let points = (0..s.states.rows)
        .map(|i| {
            let p = s.projection.row(i);
            StatePoint { index: i, point: [p[0], p[1], p[2]], reward: s.samples.rewards[i], state: s.states.row(i).to_vec() }
        })
        .collect();
    Ok(Json(StatesResponse {
        count: s.states.rows,
        state_dim: s.state_dim(),
        projection: s.projection_kind().into(),
        source: s.model.as_ref().map_or("ground_truth", |m| m.arch.kind.name()).into(),
        points,
    }))
}

async fn get_observation(State(app): State<Arc<AppState>>, Path(index): Path<usize>) -> Result<Response, ApiError> {
    let s = app.current()?;
    if index >= s.samples.len() {
        return Err(ApiError::IndexOutOfRange { index, len: s.samples.len() });
    }
    let png = to_png(&s.samples.observation(index));
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn decode_state(
    State(app): State<Arc<AppState>>,
    Json(req): Json<DecodeRequest>,
) -> Result<Json<DecodeResponse>, ApiError> {
    let s = app.current()?;
    if req.state.len() != s.state_dim() {
        return Err(ApiError::DimensionMismatch { expected: s.state_dim(), found: req.state.len() });
    }
    tokio::task::spawn_blocking(move || decode_blocking(&s, &req.state))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map(Json)
}

fn decode_blocking(s: &Session, state: &[f32]) -> Result<DecodeResponse, ApiError> {
    let internal = |e: SrlError| ApiError::Internal(e.to_string());
    let (path, nearest_index, image) = match &s.model {
        Some(m) if m.arch.decoder.is_some() => {
            ("reconstruction", None, m.decode(&srl_core::exec::Serial, state).map_err(internal)?)
        }
        _ => {
            let q: Vec<f64> = state.iter().map(|&v| v as f64).collect();
            let (i, obs) = nearest_decode(&q, &s.states, &s.samples).map_err(internal)?;
            ("nearest_neighbor", Some(i), obs)
        }
    };
    Ok(DecodeResponse {
        path: path.into(),
        nearest_index,
        image_png_base64: base64::engine::general_purpose::STANDARD.encode(to_png(&image)),
    })
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

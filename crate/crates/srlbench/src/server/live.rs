use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::Response;
use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use srl_core::env::{Action, Env, Observation};
use srl_core::exec::Serial;
use srl_core::rl::Policy;
use srl_core::rng::{self, streams};
use tokio::sync::broadcast;

use super::{AppState, Session};
use crate::image::to_png;

pub const THUMBNAIL_SIDE: usize = 128;

#[derive(Debug, Clone)]
pub struct LiveOptions {
    pub fps: f64,
    /// Messages buffered per client before the oldest are dropped.
    pub queue: usize,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self { fps: 10.0, queue: 64 }
    }
}

#[derive(Debug, Deserialize)]
pub struct LiveQuery {
    fps: Option<f64>,
    seed: Option<u64>,
    /// `random` or `checkpoint`.
    policy: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
enum Control {
    Pause,
    Resume,
    Reset,
    SetRate { fps: f64 },
}

#[derive(Debug, Serialize)]
struct StepPayload {
    episode: u64,
    step: usize,
    action: Option<usize>,
    reward: f64,
    done: bool,
    state: Vec<f64>,
    point: [f64; 3],
    thumbnail_png_base64: String,
}

pub async fn handler(
    ws: WebSocketUpgrade,
    State(app): State<Arc<AppState>>,
    Query(q): Query<LiveQuery>,
) -> Result<Response, super::ApiError> {
    let session = app.current()?;
    let fps = q.fps.unwrap_or(app.live.fps);
    let use_policy = match q.policy.as_deref() {
        None | Some("random") => false,
        Some("checkpoint") if session.policy.is_some() => true,
        Some(_) => return Err(super::ApiError::Internal("policy must be `random` or `checkpoint` (with a loaded policy)".into())),
    };
    let queue = app.live.queue;
    let seed = q.seed.unwrap_or(0);
    Ok(ws.on_upgrade(move |socket| run(socket, session, fps, queue, seed, use_policy)))
}

async fn run(socket: WebSocket, session: Arc<Session>, fps: f64, queue: usize, seed: u64, use_policy: bool) {
    let (frames, mut rx) = broadcast::channel::<String>(queue.max(1));
    let (ctl_tx, ctl_rx) = mpsc::channel::<Control>();
    let worker = std::thread::spawn(move || stepper(session, frames, ctl_rx, fps, seed, use_policy));
    let (mut sink, mut stream) = socket.split();

    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Ok(text) => {
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let note = json!({"type": "dropped", "payload": {"count": n}}).to_string();
                    if sink.send(Message::Text(note.into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(t))) => match serde_json::from_str::<Control>(&t) {
                    Ok(c) => {
                        if ctl_tx.send(c).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let note = json!({"type": "error", "payload": {"message": format!("bad control message: {e}")}});
                        if sink.send(Message::Text(note.to_string().into())).await.is_err() {
                            break;
                        }
                    }
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    drop(ctl_tx);
    drop(rx);
    let _ = tokio::task::spawn_blocking(move || worker.join()).await;
}

struct Episode {
    env: Box<dyn Env>,
    obs: Observation,
    gt: Vec<f64>,
    episode: u64,
    step: usize,
}

fn stepper(
    session: Arc<Session>,
    frames: broadcast::Sender<String>,
    ctl: mpsc::Receiver<Control>,
    mut fps: f64,
    seed: u64,
    use_policy: bool,
) {
    let mut env = session.env.build(seed);
    let n_actions = env.action_space().n().unwrap_or(0);
    let (obs, gt) = env.reset();
    let mut ep = Episode { env, obs, gt: gt.values, episode: 0, step: 0 };
    let mut act_rng = rng::stream(seed, streams::POLICY);
    let policy: Option<&Policy> = if use_policy { session.policy.as_ref() } else { None };
    let emit = |msg: String| frames.send(msg).is_ok();
    let ack = |what: &str| json!({"type": "ack", "payload": {"control": what}}).to_string();

    if !emit(step_message(&session, &ep, None, 0.0, false)) {
        return;
    }
    let mut paused = false;
    let period = |fps: f64| Duration::from_secs_f64(1.0 / fps.clamp(0.1, 1000.0));
    let mut due = Instant::now() + period(fps);
    loop {
        let wait = if paused { Duration::from_secs(3600) } else { due.saturating_duration_since(Instant::now()) };
        match ctl.recv_timeout(wait) {
            Ok(Control::Pause) => {
                paused = true;
                emit(ack("pause"));
            }
            Ok(Control::Resume) => {
                paused = false;
                due = Instant::now() + period(fps);
                emit(ack("resume"));
            }
            Ok(Control::Reset) => {
                let (obs, gt) = ep.env.reset();
                ep = Episode { obs, gt: gt.values, episode: ep.episode + 1, step: 0, ..ep };
                due = Instant::now() + period(fps);
                if !emit(ack("reset")) || !emit(step_message(&session, &ep, None, 0.0, false)) {
                    return;
                }
            }
            Ok(Control::SetRate { fps: f }) => {
                fps = f;
                due = Instant::now() + period(fps);
                emit(ack("set_rate"));
            }
            Err(RecvTimeoutError::Disconnected) => return,
            Err(RecvTimeoutError::Timeout) if paused => {}
            Err(RecvTimeoutError::Timeout) => {
                due += period(fps);
                let action = match policy {
                    Some(p) => match p.act_greedy(&Serial, &[&ep.obs], &[&ep.gt]) {
                        Ok(a) => a[0],
                        Err(e) => {
                            emit(error_message(&e.to_string()));
                            return;
                        }
                    },
                    None => act_rng.random_range(0..n_actions.max(1)),
                };
                let r = match ep.env.step(&Action::Discrete(action)) {
                    Ok(r) => r,
                    Err(e) => {
                        emit(error_message(&e.to_string()));
                        return;
                    }
                };
                ep.obs = r.observation;
                ep.gt = r.ground_truth.values;
                ep.step += 1;
                if !emit(step_message(&session, &ep, Some(action), r.reward, r.done)) {
                    return;
                }
                if r.done {
                    let (obs, gt) = ep.env.reset();
                    ep = Episode { obs, gt: gt.values, episode: ep.episode + 1, step: 0, ..ep };
                    if !emit(step_message(&session, &ep, None, 0.0, false)) {
                        return;
                    }
                }
            }
        }
    }
}

fn error_message(message: &str) -> String {
    json!({"type": "error", "payload": {"message": message}}).to_string()
}

fn step_message(session: &Session, ep: &Episode, action: Option<usize>, reward: f64, done: bool) -> String {
    let state: Vec<f64> = match &session.model {
        Some(m) => match m.encode_observation(&Serial, &ep.obs) {
            Ok(s) => s.into_iter().map(f64::from).collect(),
            Err(e) => return error_message(&e.to_string()),
        },
        None => ep.gt.clone(),
    };
    let thumb = ep.obs.resize_nearest(THUMBNAIL_SIDE, THUMBNAIL_SIDE);
    let payload = StepPayload {
        episode: ep.episode,
        step: ep.step,
        action,
        reward,
        done,
        point: session.project(&state),
        state,
        thumbnail_png_base64: base64::engine::general_purpose::STANDARD.encode(to_png(&thumb)),
    };
    json!({"type": "step", "payload": payload}).to_string()
}

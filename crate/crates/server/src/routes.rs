use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nca_core::data::Dataset;
use nca_core::metrics::{eval_sample, EvalTarget};
use nca_core::nca::{embed_seed, one_hot, render_channel, render_rgba, CellState, Seed};
use nca_core::wire::{
    encode_frame, ControlAction, ControlResponse, CreateSession, FrameHeader, MetricsResponse, ModelInfo,
    PerturbRequest, PerturbResponse, SessionInfo, StateResponse, View,
};
use serde::Deserialize;
use tokio::sync::{broadcast, oneshot};

use crate::session::{self, Command, SessionInit, SessionShared, StreamMsg};
use crate::{ApiError, AppState, SessionHandle};

const MAX_GRID: usize = 512;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/models", get(list_models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/control", post(control))
        .route("/sessions/{id}/perturb", post(perturb))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

async fn healthz(State(app): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "models": app.0.models.len(),
        "sessions": app.session_count(),
    }))
}

async fn list_models(State(app): State<AppState>) -> Json<Vec<ModelInfo>> {
    Json(app.0.models.iter().map(|m| m.info.clone()).collect())
}

fn write_condition(state: &mut CellState<f32>, cond: &[f32]) {
    let l = state.layout.clone();
    let hw = state.height() * state.width();
    let data = state.grid.data_mut();
    for (k, &v) in cond.iter().enumerate() {
        let off = (l.condition_start() + k) * hw;
        data[off..off + hw].fill(v);
    }
}

fn hot_class(cond: &[f32]) -> Option<usize> {
    let ones: Vec<usize> = (0..cond.len()).filter(|&k| cond[k] == 1.0).collect();
    let zeros = cond.iter().filter(|&&v| v == 0.0).count();
    (ones.len() == 1 && zeros + 1 == cond.len()).then(|| ones[0])
}

fn random_seed() -> u64 {
    let b = uuid::Uuid::new_v4().into_bytes();
    u64::from_le_bytes(b[..8].try_into().expect("8 bytes"))
}

async fn create_session(
    State(app): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let m = app
        .0
        .models
        .iter()
        .find(|m| m.info.id == req.model_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown model {:?}", req.model_id)))?;
    let layout = m.info.layout.clone();
    let [h, w] = req.grid_size.unwrap_or([m.info.height, m.info.width]);
    if !(1..=MAX_GRID).contains(&h) || !(1..=MAX_GRID).contains(&w) {
        return Err(ApiError::bad_request(format!("grid_size must be within 1..={MAX_GRID}")));
    }
    if let Some(c) = &req.condition {
        if c.len() != layout.condition {
            return Err(ApiError::bad_request(format!(
                "condition has {} entries, d_condition is {}",
                c.len(),
                layout.condition
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(ApiError::bad_request("condition entries must be finite"));
        }
    }
    let sample = req.sample.unwrap_or(0);
    let native = (h, w) == (m.info.height, m.info.width);
    let class_targets: Vec<EvalTarget> = match (&m.data, native) {
        (Some(Dataset::ImageTargets(t)), true) if layout.condition > 0 => {
            t.targets.iter().cloned().map(EvalTarget::Image).collect()
        }
        _ => Vec::new(),
    };
    let (mut initial, mut target) = match (&m.data, native) {
        (Some(data), true) => {
            let (s, t) = eval_sample(&layout, data, m.test.as_ref(), sample)
                .map_err(|e| ApiError::internal(e.to_string()))?;
            (s, Some(t))
        }
        _ => {
            let cond = (layout.condition > 0).then(|| one_hot::<f32>(layout.condition, sample % layout.condition));
            let s = embed_seed(&layout, Seed::Pixel { height: h, width: w, color: None }, cond.as_deref())
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
            (s, None)
        }
    };
    if let Some(c) = &req.condition {
        write_condition(&mut initial, c);
        target = hot_class(c).and_then(|k| class_targets.get(k).cloned()).or(if class_targets.is_empty() {
            target
        } else {
            None
        });
    }
    let seed = req.seed.unwrap_or_else(random_seed);
    let (tx, shared) = session::spawn(SessionInit {
        model: m.model.clone(),
        initial,
        target,
        class_targets,
        seed,
        history: app.0.config.history,
    });
    let id = uuid::Uuid::new_v4().simple().to_string();
    let info = SessionInfo {
        session_id: id.clone(),
        model_id: m.info.id.clone(),
        layout,
        class_names: m.info.class_names.clone(),
        height: h,
        width: w,
        step_index: 0,
        epoch: 0,
        seed,
        metric_name: shared.metric_name.clone(),
    };
    app.0.sessions.write().expect("lock").insert(
        id,
        SessionHandle {
            model_id: m.info.id.clone(),
            tx,
            shared,
        },
    );
    Ok((StatusCode::CREATED, Json(info)))
}

fn session(app: &AppState, id: &str) -> Result<(std::sync::mpsc::Sender<Command>, Arc<SessionShared>), ApiError> {
    let s = app.0.sessions.read().expect("lock");
    let h = s
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))?;
    h.shared.touch();
    Ok((h.tx.clone(), h.shared.clone()))
}

async fn ask<T>(
    tx: std::sync::mpsc::Sender<Command>,
    make: impl FnOnce(oneshot::Sender<T>) -> Command,
) -> Result<T, ApiError> {
    let (reply, rx) = oneshot::channel();
    tx.send(make(reply))
        .map_err(|_| ApiError::not_found("session has ended"))?;
    rx.await.map_err(|_| ApiError::internal("session worker stopped"))
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    app.0
        .sessions
        .write()
        .expect("lock")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
}

async fn control(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(action): Json<ControlAction>,
) -> Result<Json<ControlResponse>, ApiError> {
    if let ControlAction::Run { rate } = action {
        let max = app.0.config.max_rate;
        if !(rate.is_finite() && rate > 0.0 && rate <= max) {
            return Err(ApiError::bad_request(format!("rate must be in (0, {max}]")));
        }
    }
    let (tx, _) = session(&app, &id)?;
    ask(tx, |r| Command::Control(action, r)).await?.map(Json)
}

async fn perturb(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PerturbRequest>,
) -> Result<Json<PerturbResponse>, ApiError> {
    let (tx, _) = session(&app, &id)?;
    ask(tx, |r| Command::Perturb(req, r)).await?.map(Json)
}

async fn get_state(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<StateResponse>, ApiError> {
    let (tx, _) = session(&app, &id)?;
    ask(tx, Command::State).await.map(Json)
}

#[derive(Deserialize)]
struct MetricsQuery {
    since: Option<u64>,
}

async fn get_metrics(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> Result<Json<MetricsResponse>, ApiError> {
    let (_, shared) = session(&app, &id)?;
    Ok(Json(shared.metrics(q.since)))
}

#[derive(Deserialize)]
struct StreamQuery {
    channel: Option<usize>,
}

async fn stream(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let (_, shared) = session(&app, &id)?;
    let total = app
        .0
        .sessions
        .read()
        .expect("lock")
        .get(&id)
        .and_then(|h| app.0.models.iter().find(|m| m.info.id == h.model_id))
        .map_or(0, |m| m.info.layout.total());
    let view = match q.channel {
        Some(c) if c >= total => {
            return Err(ApiError::bad_request(format!("channel {c} out of range, state has {total} channels")))
        }
        Some(channel) => View::Channel { channel },
        None => View::Rgba,
    };
    Ok(ws.on_upgrade(move |socket| run_stream(socket, shared, view, total)).into_response())
}

fn frame_bytes(shared: &SessionShared, snap: &session::Snapshot, view: View, after: Option<(u64, u64)>) -> Vec<u8> {
    let since = after.filter(|&(e, _)| e == snap.epoch).map(|(_, s)| s);
    let events = shared
        .entries_between(snap.epoch, since, snap.step_index)
        .into_iter()
        .flat_map(|e| e.events)
        .collect();
    let body = match view {
        View::Rgba => render_rgba(&snap.state, 0),
        View::Channel { channel } => render_channel(&snap.state, 0, channel),
    };
    let header = FrameHeader {
        step_index: snap.step_index,
        epoch: snap.epoch,
        metric: snap.metric,
        events,
        width: snap.state.width(),
        height: snap.state.height(),
        view,
    };
    encode_frame(&header, &body)
}

async fn run_stream(mut socket: WebSocket, shared: Arc<SessionShared>, mut view: View, total: usize) {
    shared.connections.fetch_add(1, Ordering::SeqCst);
    let mut rx = shared.frames.subscribe();
    let first = shared.latest.lock().expect("lock").clone();
    let mut last = Some((first.epoch, first.step_index));
    let ok = socket
        .send(Message::Binary(frame_bytes(&shared, &first, view, None).into()))
        .await
        .is_ok();
    if ok {
        loop {
            tokio::select! {
                msg = rx.recv() => match msg {
                    Ok(StreamMsg::Frame(snap)) => {
                        let newer = last.is_none_or(|(e, s)| snap.epoch > e || (snap.epoch == e && snap.step_index > s));
                        if !newer {
                            continue;
                        }
                        let bytes = frame_bytes(&shared, &snap, view, last);
                        last = Some((snap.epoch, snap.step_index));
                        if socket.send(Message::Binary(bytes.into())).await.is_err() {
                            break;
                        }
                    }
                    Ok(StreamMsg::Closed) | Err(broadcast::error::RecvError::Closed) => {
                        let _ = socket.send(Message::Close(None)).await;
                        break;
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                },
                incoming = socket.recv() => match incoming {
                    Some(Ok(Message::Text(t))) => {
                        if let Ok(v) = serde_json::from_str::<View>(&t) {
                            if !matches!(v, View::Channel { channel } if channel >= total) {
                                view = v;
                            }
                        }
                        shared.touch();
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => {}
                },
            }
        }
    }
    shared.touch();
    shared.connections.fetch_sub(1, Ordering::SeqCst);
}

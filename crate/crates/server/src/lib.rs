//! Live NCA sessions over HTTP and WebSocket.
//!
//! Each session owns its state on a dedicated worker thread; HTTP requests
//! become commands that the worker applies between steps, and every step is
//! published to stream subscribers (slow subscribers lose the oldest
//! frames, never the simulation's pace).

mod config;
mod models;
mod routes;
mod session;

use std::collections::HashMap;
use std::sync::{mpsc, Arc, RwLock};
use std::time::Duration;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use nca_core::wire::ErrorBody;
use thiserror::Error;

pub use config::{load_serve_config, ModelEntry, ServeConfig};
pub use models::LoadedModel;
pub use routes::router;
pub use session::{session_rng, Snapshot, FRAME_BUFFER};

use session::{Command, SessionShared};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("serve config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An HTTP error with a JSON `{ "error": ... }` body.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
    pub fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, m)
    }
    pub fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, m)
    }
    pub fn conflict(m: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, m)
    }
    pub fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, m)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

pub(crate) struct SessionHandle {
    pub model_id: String,
    pub tx: mpsc::Sender<Command>,
    pub shared: Arc<SessionShared>,
}

pub struct Inner {
    pub config: ServeConfig,
    pub models: Vec<LoadedModel>,
    pub(crate) sessions: RwLock<HashMap<String, SessionHandle>>,
}

/// Shared server state: loaded models and live sessions.
#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl AppState {
    /// Loads every configured checkpoint.
    pub fn load(config: ServeConfig) -> Result<Self, ServerError> {
        let mut models = Vec::new();
        for m in &config.models {
            if models.iter().any(|l: &LoadedModel| l.info.id == m.id) {
                return Err(ServerError::Config(format!("duplicate model id {}", m.id)));
            }
            models.push(LoadedModel::load(m)?);
        }
        Ok(Self::from_models(config, models))
    }

    pub fn from_models(config: ServeConfig, models: Vec<LoadedModel>) -> Self {
        Self(Arc::new(Inner {
            config,
            models,
            sessions: RwLock::new(HashMap::new()),
        }))
    }

    pub fn session_count(&self) -> usize {
        self.0.sessions.read().expect("lock").len()
    }

    /// Drops sessions idle for longer than the configured timeout.
    pub fn expire_idle(&self) -> usize {
        let limit = Duration::from_secs(self.0.config.idle_timeout_secs);
        let mut s = self.0.sessions.write().expect("lock");
        let before = s.len();
        s.retain(|_, h| h.shared.idle_for() <= limit);
        before - s.len()
    }
}

/// Serves until the listener fails; expires idle sessions in the
/// background.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    let reaper = state.clone();
    let every = Duration::from_secs((state.0.config.idle_timeout_secs / 4).clamp(1, 30));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let n = reaper.expire_idle();
            if n > 0 {
                tracing::info!(expired = n, "removed idle sessions");
            }
        }
    });
    axum::serve(listener, router(state)).await
}

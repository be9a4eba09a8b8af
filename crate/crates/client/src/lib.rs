//! Async client for the live-session server.

use futures::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio_tungstenite::tungstenite::Message;

pub use nca_core::wire::{
    decode_frame, ControlAction, ControlResponse, CreateSession, ErrorBody, Event, FrameHeader, MetricEntry,
    MetricsResponse, ModelInfo, PaintPixel, PerturbRequest, PerturbResponse, RunMode, SessionInfo, StateResponse, View,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("HTTP {status}: {message}")]
    Status { status: u16, message: String },
    #[error(transparent)]
    Http(#[from] reqwest::Error),
    #[error(transparent)]
    WebSocket(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("bad frame: {0}")]
    Frame(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            let message = serde_json::from_str::<ErrorBody>(&text).map_or(text, |b| b.error);
            return Err(ClientError::Status {
                status: status.as_u16(),
                message,
            });
        }
        Ok(resp.json().await?)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        self.get("/healthz").await
    }

    pub async fn models(&self) -> Result<Vec<ModelInfo>, ClientError> {
        self.get("/models").await
    }

    pub async fn create_session(&self, req: &CreateSession) -> Result<SessionInfo, ClientError> {
        self.post("/sessions", req).await
    }

    pub async fn delete_session(&self, id: &str) -> Result<(), ClientError> {
        let resp = self.http.delete(format!("{}/sessions/{id}", self.base)).send().await?;
        if resp.status().is_success() {
            return Ok(());
        }
        Self::decode::<serde_json::Value>(resp).await.map(|_| ())
    }

    pub async fn control(&self, id: &str, action: &ControlAction) -> Result<ControlResponse, ClientError> {
        self.post(&format!("/sessions/{id}/control"), action).await
    }

    pub async fn perturb(&self, id: &str, req: &PerturbRequest) -> Result<PerturbResponse, ClientError> {
        self.post(&format!("/sessions/{id}/perturb"), req).await
    }

    pub async fn state(&self, id: &str) -> Result<StateResponse, ClientError> {
        self.get(&format!("/sessions/{id}/state")).await
    }

    pub async fn metrics(&self, id: &str, since: Option<u64>) -> Result<MetricsResponse, ClientError> {
        match since {
            Some(s) => self.get(&format!("/sessions/{id}/metrics?since={s}")).await,
            None => self.get(&format!("/sessions/{id}/metrics")).await,
        }
    }

    /// Opens the frame stream; `channel` selects a single-channel view.
    pub async fn stream(&self, id: &str, channel: Option<usize>) -> Result<FrameStream, ClientError> {
        let ws_base = self.base.replacen("http", "ws", 1);
        let url = match channel {
            Some(c) => format!("{ws_base}/sessions/{id}/stream?channel={c}"),
            None => format!("{ws_base}/sessions/{id}/stream"),
        };
        let (socket, _) = tokio_tungstenite::connect_async(url).await?;
        Ok(FrameStream { socket })
    }
}

/// One decoded stream message.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub header: FrameHeader,
    pub rgba: Vec<u8>,
}

pub struct FrameStream {
    socket: tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>,
}

impl FrameStream {
    /// Next frame, or `None` once the server closes the stream.
    pub async fn next_frame(&mut self) -> Result<Option<Frame>, ClientError> {
        while let Some(msg) = self.socket.next().await {
            match msg? {
                Message::Binary(b) => {
                    let (header, body) = decode_frame(&b).map_err(ClientError::Frame)?;
                    return Ok(Some(Frame {
                        header,
                        rgba: body.to_vec(),
                    }));
                }
                Message::Close(_) => return Ok(None),
                _ => {}
            }
        }
        Ok(None)
    }

    /// Switches the view for subsequent frames.
    pub async fn set_view(&mut self, view: View) -> Result<(), ClientError> {
        let text = serde_json::to_string(&view).expect("view serializes");
        self.socket.send(Message::Text(text.into())).await?;
        Ok(())
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.socket.close(None).await?;
        Ok(())
    }
}

//! JSON and frame formats shared by the live-session server and its clients.
//!
//! A stream frame is one binary WebSocket message: a JSON [`FrameHeader`],
//! a newline, then `height · width · 4` RGBA bytes in row-major order.

use serde::{Deserialize, Serialize};

use crate::nca::ChannelLayout;
use crate::training::{Axis, Side};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    /// `generative`, `classification`, `video` or `unknown`.
    pub task: String,
    pub layout: ChannelLayout,
    pub class_names: Vec<String>,
    pub params: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub model_id: String,
    /// `[height, width]`; the model's training size when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<[usize; 2]>,
    /// Condition vector of length `d_condition`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Vec<f32>>,
    /// Dataset sample to start from (target, held-out image or sequence).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub model_id: String,
    pub layout: ChannelLayout,
    pub class_names: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub step_index: u64,
    pub epoch: u64,
    /// Seed of the session's update stream; replaying it offline with the
    /// same steps reproduces the session state.
    pub seed: u64,
    pub metric_name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ControlAction {
    /// Free-run at `rate` steps per second.
    Run { rate: f64 },
    Pause,
    /// Advance exactly `k` steps; only while paused.
    Step { k: u64 },
    /// Back to the initial state, step 0, and a fresh update stream.
    Reset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RunMode {
    Paused,
    Running { rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlResponse {
    pub step_index: u64,
    pub epoch: u64,
    pub mode: RunMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaintPixel {
    pub x: usize,
    pub y: usize,
    pub value: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbRequest {
    /// Zero evolving channels in the closed disc of radius `r` cells.
    Damage { cx: f64, cy: f64, r: f64 },
    Halfplane { axis: Axis, side: Side },
    /// Switch the condition to one-hot `class`.
    Mutate { class: usize },
    /// Write values into fixed-input `channel`.
    Paint { channel: usize, pixels: Vec<PaintPixel> },
}

/// A perturbation as recorded in the metric history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: String,
    /// Step after which it was applied.
    pub step_index: u64,
    pub description: String,
    pub no_op: bool,
    pub metric_before: Option<f64>,
    pub metric_after: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbResponse {
    pub step_index: u64,
    pub epoch: u64,
    pub no_op: bool,
    pub event: Event,
}

/// Metric after one step, with the perturbations applied just before it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub step_index: u64,
    pub metric: Option<f64>,
    /// Predicted class (classification models).
    pub prediction: Option<usize>,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub epoch: u64,
    pub metric_name: Option<String>,
    pub higher_is_better: bool,
    pub entries: Vec<MetricEntry>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
pub enum View {
    /// Visible channels composited to RGBA.
    #[default]
    Rgba,
    /// One channel in grey.
    Channel { channel: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub step_index: u64,
    pub epoch: u64,
    pub metric: Option<f64>,
    /// Events applied since the previous frame on this connection.
    pub events: Vec<Event>,
    pub width: usize,
    pub height: usize,
    pub view: View,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    pub step_index: u64,
    pub epoch: u64,
    pub shape: Vec<usize>,
    pub layout: ChannelLayout,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub fn encode_frame(header: &FrameHeader, body: &[u8]) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(body);
    out
}

/// Splits a stream message into header and pixel body.
pub fn decode_frame(bytes: &[u8]) -> Result<(FrameHeader, &[u8]), String> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("frame has no header line")?;
    let header: FrameHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| e.to_string())?;
    Ok((header, &bytes[nl + 1..]))
}

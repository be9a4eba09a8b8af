use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nca_core::metrics::{predict, EvalTarget};
use nca_core::nca::{CellState, NcaModel};
use nca_core::rng::{stream, NcaRng};
use nca_core::training::{perturb_damage, perturb_halfplane};
use nca_core::wire::{
    ControlAction, ControlResponse, Event, MetricEntry, MetricsResponse, PerturbRequest, PerturbResponse, RunMode,
    StateResponse,
};
use tokio::sync::{broadcast, oneshot};

use crate::ApiError;

/// Frames a slow stream consumer may fall behind before older ones are
/// dropped.
pub const FRAME_BUFFER: usize = 32;

/// Published state after a step (or reset).
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step_index: u64,
    pub epoch: u64,
    pub state: CellState<f32>,
    pub metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum StreamMsg {
    Frame(Arc<Snapshot>),
    Closed,
}

struct History {
    epoch: u64,
    cap: usize,
    entries: VecDeque<MetricEntry>,
}

/// Session data readable without going through the worker.
pub struct SessionShared {
    pub frames: broadcast::Sender<StreamMsg>,
    pub latest: Mutex<Arc<Snapshot>>,
    history: Mutex<History>,
    pub last_active: Mutex<Instant>,
    pub connections: AtomicUsize,
    pub metric_name: Option<String>,
    pub higher_is_better: bool,
}

impl SessionShared {
    pub fn touch(&self) {
        *self.last_active.lock().expect("lock") = Instant::now();
    }

    pub fn idle_for(&self) -> Duration {
        if self.connections.load(Ordering::SeqCst) > 0 {
            return Duration::ZERO;
        }
        self.last_active.lock().expect("lock").elapsed()
    }

    /// Entries of `epoch` with step in `(after, upto]`; everything up to
    /// `upto` when `after` is `None`.
    pub fn entries_between(&self, epoch: u64, after: Option<u64>, upto: u64) -> Vec<MetricEntry> {
        let h = self.history.lock().expect("lock");
        if h.epoch != epoch {
            return Vec::new();
        }
        h.entries
            .iter()
            .filter(|e| e.step_index <= upto && after.is_none_or(|a| e.step_index > a))
            .cloned()
            .collect()
    }

    pub fn metrics(&self, since: Option<u64>) -> MetricsResponse {
        let h = self.history.lock().expect("lock");
        MetricsResponse {
            epoch: h.epoch,
            metric_name: self.metric_name.clone(),
            higher_is_better: self.higher_is_better,
            entries: h
                .entries
                .iter()
                .filter(|e| since.is_none_or(|s| e.step_index > s))
                .cloned()
                .collect(),
        }
    }
}

pub enum Command {
    Control(ControlAction, oneshot::Sender<Result<ControlResponse, ApiError>>),
    Perturb(PerturbRequest, oneshot::Sender<Result<PerturbResponse, ApiError>>),
    State(oneshot::Sender<StateResponse>),
}

/// Everything the worker needs to (re)start a session.
pub struct SessionInit {
    pub model: Arc<NcaModel<f32>>,
    pub initial: CellState<f32>,
    pub target: Option<EvalTarget>,
    /// Metric targets per condition class, for mutations.
    pub class_targets: Vec<EvalTarget>,
    pub seed: u64,
    pub history: usize,
}

/// Update stream of a session with `seed`.
pub fn session_rng(seed: u64) -> NcaRng {
    stream(seed, "session")
}

struct Worker {
    init: SessionInit,
    state: CellState<f32>,
    target: Option<EvalTarget>,
    rng: NcaRng,
    epoch: u64,
    mode: RunMode,
    pending: Vec<Event>,
    shared: Arc<SessionShared>,
}

/// Starts the worker thread; it exits when the command sender is dropped.
pub fn spawn(init: SessionInit) -> (mpsc::Sender<Command>, Arc<SessionShared>) {
    let (tx, rx) = mpsc::channel();
    let (frames, _) = broadcast::channel(FRAME_BUFFER);
    let (metric_name, higher_is_better) = match &init.target {
        Some(EvalTarget::Image(_)) => (Some("mse".to_string()), false),
        Some(EvalTarget::Label(_)) => (Some("per_pixel_accuracy".to_string()), true),
        None => (None, false),
    };
    let metric = init.target.as_ref().map(|t| t.metric(&init.initial));
    let first = Arc::new(Snapshot {
        step_index: 0,
        epoch: 0,
        state: init.initial.clone(),
        metric,
    });
    let shared = Arc::new(SessionShared {
        frames,
        latest: Mutex::new(first),
        history: Mutex::new(History {
            epoch: 0,
            cap: init.history.max(1),
            entries: VecDeque::new(),
        }),
        last_active: Mutex::new(Instant::now()),
        connections: AtomicUsize::new(0),
        metric_name,
        higher_is_better,
    });
    let mut w = Worker {
        state: init.initial.clone(),
        target: init.target.clone(),
        rng: session_rng(init.seed),
        init,
        epoch: 0,
        mode: RunMode::Paused,
        pending: Vec::new(),
        shared: shared.clone(),
    };
    w.record(metric);
    std::thread::spawn(move || w.run(rx));
    (tx, shared)
}

impl Worker {
    fn metric(&self) -> Option<f64> {
        self.target.as_ref().map(|t| t.metric(&self.state))
    }

    fn record(&mut self, metric: Option<f64>) {
        let prediction = (self.state.layout.classes > 0).then(|| predict(&self.state.class_channels(), 0));
        let entry = MetricEntry {
            step_index: self.state.step_index,
            metric,
            prediction,
            events: std::mem::take(&mut self.pending),
        };
        let mut h = self.shared.history.lock().expect("lock");
        if h.epoch != self.epoch {
            h.epoch = self.epoch;
            h.entries.clear();
        }
        if h.entries.len() == h.cap {
            h.entries.pop_front();
        }
        h.entries.push_back(entry);
    }

    fn publish(&mut self, metric: Option<f64>) {
        let snap = Arc::new(Snapshot {
            step_index: self.state.step_index,
            epoch: self.epoch,
            state: self.state.clone(),
            metric,
        });
        *self.shared.latest.lock().expect("lock") = snap.clone();
        let _ = self.shared.frames.send(StreamMsg::Frame(snap));
    }

    fn step(&mut self) -> Result<(), ApiError> {
        let next = self
            .init
            .model
            .step(&self.state, &mut self.rng)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        self.state = next;
        let m = self.metric();
        self.record(m);
        self.publish(m);
        Ok(())
    }

    fn response(&self) -> ControlResponse {
        ControlResponse {
            step_index: self.state.step_index,
            epoch: self.epoch,
            mode: self.mode.clone(),
        }
    }

    fn control(&mut self, action: ControlAction) -> Result<ControlResponse, ApiError> {
        match action {
            ControlAction::Run { rate } => self.mode = RunMode::Running { rate },
            ControlAction::Pause => self.mode = RunMode::Paused,
            ControlAction::Step { k } => {
                if matches!(self.mode, RunMode::Running { .. }) {
                    return Err(ApiError::conflict("step is only allowed while paused"));
                }
                for _ in 0..k {
                    if let Err(e) = self.step() {
                        self.mode = RunMode::Paused;
                        return Err(e);
                    }
                }
            }
            ControlAction::Reset => {
                self.state = self.init.initial.clone();
                self.target = self.init.target.clone();
                self.rng = session_rng(self.init.seed);
                self.epoch += 1;
                self.pending.clear();
                let m = self.metric();
                self.record(m);
                self.publish(m);
            }
        }
        Ok(self.response())
    }

    fn perturb(&mut self, req: PerturbRequest) -> Result<PerturbResponse, ApiError> {
        let layout = self.state.layout.clone();
        let (h, w) = (self.state.height(), self.state.width());
        let before = self.metric();
        let mut no_op = false;
        let (kind, description) = match req {
            PerturbRequest::Damage { cx, cy, r } => {
                if !(cx.is_finite() && cy.is_finite() && r.is_finite() && r > 0.0) {
                    return Err(ApiError::bad_request("damage needs finite cx, cy and r > 0"));
                }
                let hit = perturb_damage(&mut self.state, 0, (cx, cy), r);
                no_op = hit == 0;
                ("damage", format!("damage(cx={cx}, cy={cy}, r={r}) hit {hit} cells"))
            }
            PerturbRequest::Halfplane { axis, side } => {
                let hit = perturb_halfplane(&mut self.state, 0, axis, side);
                ("halfplane", format!("halfplane({axis:?}, {side:?}) hit {hit} cells").to_lowercase())
            }
            PerturbRequest::Mutate { class } => {
                if layout.condition == 0 {
                    return Err(ApiError::bad_request("model has no condition channels"));
                }
                if class >= layout.condition {
                    return Err(ApiError::bad_request(format!(
                        "class {class} out of range, d_condition is {}",
                        layout.condition
                    )));
                }
                let current = self.state.condition_class(0);
                no_op = current == Some(class);
                if !no_op {
                    self.state
                        .set_condition(0, class)
                        .map_err(|e| ApiError::bad_request(e.to_string()))?;
                    if let Some(t) = self.init.class_targets.get(class) {
                        self.target = Some(t.clone());
                    }
                }
                ("mutate", format!("mutate(class={class})"))
            }
            PerturbRequest::Paint { channel, pixels } => {
                if layout.fixed_input == 0 {
                    return Err(ApiError::conflict("model has no fixed-input channels to paint"));
                }
                if channel >= layout.fixed_input {
                    return Err(ApiError::bad_request(format!(
                        "channel {channel} out of range, model has {} fixed-input channels",
                        layout.fixed_input
                    )));
                }
                if let Some(p) = pixels.iter().find(|p| p.x >= w || p.y >= h || !p.value.is_finite()) {
                    return Err(ApiError::bad_request(format!(
                        "pixel ({}, {}) = {} is outside the {w}x{h} grid or not finite",
                        p.x, p.y, p.value
                    )));
                }
                let hw = h * w;
                let data = self.state.grid.data_mut();
                for p in &pixels {
                    data[channel * hw + p.y * w + p.x] = p.value;
                }
                no_op = pixels.is_empty();
                ("paint", format!("paint(channel={channel}, pixels={})", pixels.len()))
            }
        };
        let event = Event {
            kind: kind.into(),
            step_index: self.state.step_index,
            description,
            no_op,
            metric_before: before,
            metric_after: self.metric(),
        };
        self.pending.push(event.clone());
        Ok(PerturbResponse {
            step_index: self.state.step_index,
            epoch: self.epoch,
            no_op,
            event,
        })
    }

    fn state_response(&self) -> StateResponse {
        StateResponse {
            step_index: self.state.step_index,
            epoch: self.epoch,
            shape: self.state.grid.shape().to_vec(),
            layout: self.state.layout.clone(),
            data: self.state.grid.data().to_vec(),
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Control(a, reply) => {
                let _ = reply.send(self.control(a));
            }
            Command::Perturb(p, reply) => {
                let _ = reply.send(self.perturb(p));
            }
            Command::State(reply) => {
                let _ = reply.send(self.state_response());
            }
        }
    }

    fn run(mut self, rx: mpsc::Receiver<Command>) {
        let mut next_tick = Instant::now();
        loop {
            match self.mode.clone() {
                RunMode::Paused => match rx.recv() {
                    Ok(cmd) => {
                        self.handle(cmd);
                        next_tick = Instant::now();
                    }
                    Err(_) => break,
                },
                RunMode::Running { rate } => {
                    let period = Duration::from_secs_f64(1.0 / rate);
                    let now = Instant::now();
                    match rx.recv_timeout(next_tick.saturating_duration_since(now)) {
                        Ok(cmd) => self.handle(cmd),
                        Err(RecvTimeoutError::Timeout) => {
                            if self.step().is_err() {
                                self.mode = RunMode::Paused;
                            }
                            next_tick += period;
                            let now = Instant::now();
                            if next_tick < now {
                                next_tick = now;
                            }
                        }
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            }
        }
        let _ = self.shared.frames.send(StreamMsg::Closed);
    }
}

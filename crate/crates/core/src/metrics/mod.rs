//! Recovery percentage, classification accuracy and the staged
//! regeneration protocol.

mod sample;
mod table;

pub use sample::eval_sample;
pub use table::{ablation_table, AblationRow, Table};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::EvalProtocol;
use crate::nca::{CellState, NcaError, NcaModel};
use crate::training::{mse, perturb_damage, perturb_halfplane, Axis, Side};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("recovery is undefined when m_pre equals m_d ({0})")]
    Degenerate(f64),
    #[error("{0}")]
    Protocol(String),
    #[error(transparent)]
    Nca(#[from] NcaError),
}

/// `100·(m_final − m_d)/(m_pre − m_d)`.
pub fn recovery_percent(m_pre: f64, m_d: f64, m_final: f64) -> Result<f64, MetricsError> {
    let den = m_pre - m_d;
    if den == 0.0 || !den.is_finite() {
        return Err(MetricsError::Degenerate(m_pre));
    }
    // `+ 0.0` turns a negative zero into zero.
    Ok(100.0 * (m_final - m_d) / den + 0.0)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Spatial mean of every class channel of batch item `item`
/// (`class_channels` is `[N, K, H, W]`).
pub fn class_means(class_channels: &Tensor<f32>, item: usize) -> Vec<f64> {
    let s = class_channels.shape();
    let (k, hw) = (s[1], s[2] * s[3]);
    let d = class_channels.data();
    (0..k)
        .map(|c| {
            let off = (item * k + c) * hw;
            d[off..off + hw].iter().map(|&v| v as f64).sum::<f64>() / hw as f64
        })
        .collect()
}

/// Spatial-mean argmax prediction.
pub fn predict(class_channels: &Tensor<f32>, item: usize) -> usize {
    argmax(&class_means(class_channels, item))
}

/// Fraction of cells whose channel argmax equals `label`. With `foreground`
/// (`[H, W]`, nonzero = counted), only those cells count.
pub fn per_pixel_accuracy(
    class_channels: &Tensor<f32>,
    item: usize,
    label: usize,
    foreground: Option<&[f32]>,
) -> f64 {
    let s = class_channels.shape();
    let (k, hw) = (s[1], s[2] * s[3]);
    let d = class_channels.data();
    let (mut hit, mut total) = (0usize, 0usize);
    let mut v = vec![0f64; k];
    for p in 0..hw {
        if foreground.is_some_and(|f| f[p] == 0.0) {
            continue;
        }
        for (c, slot) in v.iter_mut().enumerate() {
            *slot = d[(item * k + c) * hw + p] as f64;
        }
        total += 1;
        hit += (argmax(&v) == label) as usize;
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// 1 when the spatial-mean argmax equals `label`, else 0.
pub fn image_accuracy(class_channels: &Tensor<f32>, item: usize, label: usize) -> f64 {
    (predict(class_channels, item) == label) as u8 as f64
}

/// What the task metric is measured against.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalTarget {
    /// Visible-channel target `[C_v, H, W]`; metric is MSE (lower is better).
    Image(Tensor<f32>),
    /// Class label; metric is per-pixel accuracy (higher is better).
    Label(usize),
}

impl EvalTarget {
    pub fn metric(&self, state: &CellState<f32>) -> f64 {
        match self {
            EvalTarget::Image(t) => {
                let v = state.visible();
                let s = v.shape().to_vec();
                let v = v.reshape(&[s[1], s[2], s[3]]).expect("single item");
                mse(&v, t)
            }
            EvalTarget::Label(l) => per_pixel_accuracy(&state.class_channels(), 0, *l, None),
        }
    }
}

/// A perturbation applied once during staged evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum Perturbation {
    None,
    Damage { center: (f64, f64), radius: f64 },
    HalfPlane { axis: Axis, side: Side },
    /// Switch the condition to `class`, measuring against `target` afterwards.
    Mutate { class: usize, target: EvalTarget },
    /// Replace the fixed input with `image` whose label is `label`.
    ReplaceInput { image: Tensor<f32>, label: usize },
}

impl Perturbation {
    pub fn describe(&self) -> String {
        match self {
            Perturbation::None => "none".into(),
            Perturbation::Damage { center, radius } => {
                format!("damage(cx={:.1}, cy={:.1}, r={radius:.2})", center.0, center.1)
            }
            Perturbation::HalfPlane { axis, side } => format!("halfplane({axis:?}, {side:?})").to_lowercase(),
            Perturbation::Mutate { class, .. } => format!("mutate(class={class})"),
            Perturbation::ReplaceInput { label, .. } => format!("replace_input(label={label})"),
        }
    }

    /// Applies to item 0 and returns the target that is active afterwards.
    pub fn apply(&self, state: &mut CellState<f32>, active: &EvalTarget) -> Result<EvalTarget, MetricsError> {
        match self {
            Perturbation::None => {}
            Perturbation::Damage { center, radius } => {
                perturb_damage(state, 0, *center, *radius);
            }
            Perturbation::HalfPlane { axis, side } => {
                perturb_halfplane(state, 0, *axis, *side);
            }
            Perturbation::Mutate { class, target } => {
                state.set_condition(0, *class)?;
                return Ok(target.clone());
            }
            Perturbation::ReplaceInput { image, label } => {
                let f = state.layout.fixed_input;
                if f == 0 || image.shape()[0] != f || image.len() != f * state.height() * state.width() {
                    return Err(MetricsError::Protocol("replacement image does not fit the fixed input".into()));
                }
                state.grid.data_mut()[..image.len()].copy_from_slice(image.data());
                return Ok(EvalTarget::Label(*label));
            }
        }
        Ok(active.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageValue {
    pub name: String,
    pub value: f64,
}

/// Outcome of one staged evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegenReport {
    /// Mean over the training window.
    pub m_pre: f64,
    pub m_d: f64,
    pub m_final: f64,
    /// `None` when the perturbation left the metric unchanged or
    /// `m_pre == m_d`.
    pub recovery_percent: Option<f64>,
    pub stages: Vec<StageValue>,
    pub perturbation: String,
    pub no_op: bool,
    /// Metric after every step `0..=final_step`; the entry at the perturbation
    /// step is the value before perturbing.
    pub trajectory: Vec<f64>,
}

impl RegenReport {
    /// Rebuilds a report from a recorded trajectory and `m_d`.
    pub fn from_trajectory(
        protocol: &EvalProtocol,
        trajectory: Vec<f64>,
        m_d: f64,
        perturbation: String,
    ) -> Result<Self, MetricsError> {
        let (pre, fin) = (protocol.pre_perturb_step, protocol.final_step);
        if trajectory.len() != fin + 1 {
            return Err(MetricsError::Protocol(format!(
                "trajectory has {} entries, protocol needs {}",
                trajectory.len(),
                fin + 1
            )));
        }
        let [a, b] = protocol.train_window;
        let b = b.min(fin);
        let window = &trajectory[a.min(b)..=b];
        let window_mean = window.iter().sum::<f64>() / window.len() as f64;
        // The settled pattern over the training window is the pre-perturbation
        // level; a single step can already sit on a drifting trajectory.
        let (m_pre, m_final) = (window_mean, trajectory[fin]);
        let no_op = m_d == trajectory[pre];
        let recovery = if no_op { None } else { recovery_percent(m_pre, m_d, m_final).ok() };
        Ok(Self {
            m_pre,
            m_d,
            m_final,
            recovery_percent: recovery,
            stages: vec![
                StageValue {
                    name: format!("steps {a}-{b}"),
                    value: window_mean,
                },
                StageValue {
                    name: format!("step {pre}"),
                    value: trajectory[pre],
                },
                StageValue {
                    name: format!("step {fin}"),
                    value: m_final,
                },
            ],
            perturbation,
            no_op,
            trajectory,
        })
    }
}

/// Rolls `initial` (one item) forward to `final_step`, perturbing after
/// `pre_perturb_step` steps, and summarizes the metric trajectory.
pub fn staged_eval(
    model: &NcaModel<f32>,
    initial: &CellState<f32>,
    target: &EvalTarget,
    protocol: &EvalProtocol,
    perturbation: &Perturbation,
    rng: &mut impl Rng,
) -> Result<RegenReport, MetricsError> {
    if protocol.final_step <= protocol.pre_perturb_step {
        return Err(MetricsError::Protocol("final_step must exceed pre_perturb_step".into()));
    }
    if initial.batch() != 1 {
        return Err(MetricsError::Protocol("staged evaluation takes a single sample".into()));
    }
    let mut state = initial.clone();
    let mut active = target.clone();
    let mut traj = Vec::with_capacity(protocol.final_step + 1);
    traj.push(active.metric(&state));
    let mut m_d = f64::NAN;
    for t in 1..=protocol.final_step {
        state = model.step(&state, rng)?;
        traj.push(active.metric(&state));
        if t == protocol.pre_perturb_step {
            active = perturbation.apply(&mut state, &active)?;
            m_d = active.metric(&state);
        }
    }
    RegenReport::from_trajectory(protocol, traj, m_d, perturbation.describe())
}

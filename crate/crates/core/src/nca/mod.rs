//! The cellular automaton: state layout, perception, update and stepping.

mod layout;
mod model;
mod render;
mod state;
mod step;

pub use layout::ChannelLayout;
pub use model::{
    sobel_kernel, Activation, AliveNeighborhood, BoundModel, ModelSpec, NcaModel, OutputInit,
    PerceptionSpec, UpdateSpec,
};
pub use render::{render_channel, render_rgba, rgba_tensor, PALETTE};
pub use state::{embed_seed, one_hot, CellState, Seed};
pub use step::{alive_mask, sample_fire_mask, step_on_graph, Record};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NcaError {
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("layout has no alpha channel")]
    NoAlpha,
    #[error("condition has {got} entries, layout expects {expected}")]
    Condition { expected: usize, got: usize },
    #[error("state became non-finite at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

//! Neural cellular automata: a small autodiff engine, the CA model, its
//! trainers, data formats and the regeneration evaluation harness.

pub mod autodiff;
pub mod data;
pub mod metrics;
pub mod nca;
pub mod rng;
pub mod training;
pub mod verify;
pub mod wire;

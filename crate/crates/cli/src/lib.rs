//! The `nca` command-line tool: training, evaluation, benchmarks,
//! verification, demo data, frame export and the live service.

pub mod args;
pub mod bench;
pub mod demo;
pub mod error;
pub mod evaluate;
pub mod export;
pub mod gradcheck;
pub mod run;

pub use args::{dispatch, Cli};
pub use error::{CliError, ExitCode};

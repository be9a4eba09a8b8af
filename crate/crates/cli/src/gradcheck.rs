//! Finite-difference verification of every differentiable operation.

use nca_core::autodiff::OpKind;
use nca_core::verify::{gradcheck_suite, OpCheck};

use crate::error::CliError;

pub const THRESHOLD: f64 = 1e-4;
pub const INSTANCES: usize = 20;
pub const EPS: f64 = 1e-5;

/// Runs the suite, returning the per-op report lines and the checks.
/// Fails naming every op whose worst relative error reaches the threshold.
pub fn run(seed: u64, fault: Option<OpKind>) -> Result<(Vec<String>, Vec<OpCheck>), CliError> {
    let checks = gradcheck_suite(INSTANCES, seed, EPS, fault).map_err(|e| CliError::Failed(e.to_string()))?;
    let lines = checks
        .iter()
        .map(|c| {
            let verdict = if c.worst < THRESHOLD { "ok" } else { "FAIL" };
            format!("{:<16} {:>3} instances  worst rel err {:.3e}  {verdict}", c.name, c.instances, c.worst)
        })
        .collect();
    Ok((lines, checks))
}

pub fn failures(checks: &[OpCheck]) -> Vec<&'static str> {
    checks.iter().filter(|c| c.worst >= THRESHOLD || !c.worst.is_finite()).map(|c| c.name).collect()
}

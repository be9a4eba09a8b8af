use std::fmt::Write as _;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub loss_task: f64,
    pub loss_overflow: f64,
    pub grad_norm: f64,
    pub rollout_steps: usize,
    pub pool_size: usize,
    /// Batch items in this iteration that started from a pooled state.
    pub pool_draws: usize,
    pub wall_ms: f64,
}

/// Column names of the tab-separated metrics log, in order.
pub const LOG_COLUMNS: [&str; 10] = [
    "iteration",
    "lr",
    "loss",
    "loss_task",
    "loss_overflow",
    "grad_norm",
    "rollout_steps",
    "pool_size",
    "pool_draws",
    "wall_ms",
];

pub fn log_header() -> String {
    LOG_COLUMNS.join("\t")
}

impl IterationRecord {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{}\t{:.6e}\t{:.8e}\t{:.8e}\t{:.8e}\t{:.6e}\t{}\t{}\t{}\t{:.1}",
            self.iteration,
            self.lr,
            self.loss,
            self.loss_task,
            self.loss_overflow,
            self.grad_norm,
            self.rollout_steps,
            self.pool_size,
            self.pool_draws,
            self.wall_ms
        );
        s
    }

    /// Parses a line written by [`IterationRecord::to_tsv`].
    pub fn from_tsv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        if f.len() != LOG_COLUMNS.len() {
            return None;
        }
        Some(Self {
            iteration: f[0].parse().ok()?,
            lr: f[1].parse().ok()?,
            loss: f[2].parse().ok()?,
            loss_task: f[3].parse().ok()?,
            loss_overflow: f[4].parse().ok()?,
            grad_norm: f[5].parse().ok()?,
            rollout_steps: f[6].parse().ok()?,
            pool_size: f[7].parse().ok()?,
            pool_draws: f[8].parse().ok()?,
            wall_ms: f[9].parse().ok()?,
        })
    }
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

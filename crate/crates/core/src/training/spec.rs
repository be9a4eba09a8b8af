use serde::{Deserialize, Serialize};

use super::{AdamWConfig, LossKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Cosine annealing from the optimizer learning rate to `lr_min` over
    /// `total_steps` (defaults to the iteration count).
    Cosine {
        #[serde(default)]
        lr_min: f64,
        #[serde(default)]
        total_steps: Option<usize>,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Cosine {
            lr_min: 0.0,
            total_steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    /// Probability of starting a batch item from a pooled state.
    #[serde(default = "default_reseed")]
    pub reseed_ratio: f64,
    /// Probability of damaging a reused state.
    #[serde(default = "default_damage_prob")]
    pub damage_prob: f64,
    /// Damage radius range as fractions of the grid height.
    #[serde(default = "default_damage_radius")]
    pub damage_radius: [f64; 2],
    /// Probability of switching the condition (or input image) of a reused
    /// state.
    #[serde(default)]
    pub mutate_prob: f64,
}

fn yes() -> bool {
    true
}
fn default_capacity() -> usize {
    1024
}
fn default_reseed() -> f64 {
    0.5
}
fn default_damage_prob() -> f64 {
    0.25
}
fn default_damage_radius() -> [f64; 2] {
    [0.125, 0.25]
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            capacity: default_capacity(),
            reseed_ratio: default_reseed(),
            damage_prob: default_damage_prob(),
            damage_radius: default_damage_radius(),
            mutate_prob: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_t_min")]
    pub t_min: usize,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default)]
    pub loss: LossKind,
    /// Weight of the overflow penalty; 0 disables it.
    #[serde(default)]
    pub overflow_weight: f64,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_clip")]
    pub grad_clip_norm: f64,
    #[serde(default)]
    pub pool: PoolSpec,
    /// Write a checkpoint every this many iterations; 0 only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_iterations() -> usize {
    1000
}
fn default_batch() -> usize {
    4
}
fn default_t_min() -> usize {
    64
}
fn default_t_max() -> usize {
    96
}
fn default_clip() -> f64 {
    1.0
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            batch_size: default_batch(),
            t_min: default_t_min(),
            t_max: default_t_max(),
            loss: LossKind::default(),
            overflow_weight: 0.0,
            optimizer: AdamWConfig::default(),
            schedule: Schedule::default(),
            grad_clip_norm: default_clip(),
            pool: PoolSpec::default(),
            checkpoint_every: 0,
        }
    }
}

fn unit(name: &str, v: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} must lie in [0, 1], got {v}"))
    }
}

impl TrainSpec {
    /// Checks the invariants; the error names the offending key.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let fail = |k: &str, m: String| Err((k.to_string(), m));
        if self.t_min == 0 {
            return fail("t_min", "must be positive".into());
        }
        if self.t_min > self.t_max {
            return fail("t_max", format!("t_max {} is below t_min {}", self.t_max, self.t_min));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive".into());
        }
        if !(self.grad_clip_norm > 0.0) {
            return fail("grad_clip_norm", "must be positive".into());
        }
        if !(self.optimizer.lr >= 0.0) {
            return fail("optimizer.lr", "must be non-negative".into());
        }
        if self.overflow_weight < 0.0 {
            return fail("overflow_weight", "must be non-negative".into());
        }
        if self.pool.capacity == 0 {
            return fail("pool.capacity", "must be positive".into());
        }
        for (k, v) in [
            ("pool.reseed_ratio", self.pool.reseed_ratio),
            ("pool.damage_prob", self.pool.damage_prob),
            ("pool.mutate_prob", self.pool.mutate_prob),
        ] {
            unit(k, v).or_else(|m| fail(k, m))?;
        }
        let [lo, hi] = self.pool.damage_radius;
        if !(lo >= 0.0 && lo <= hi) {
            return fail("pool.damage_radius", format!("need 0 <= lo <= hi, got [{lo}, {hi}]"));
        }
        Ok(())
    }

    /// Learning rate at iteration `it`.
    pub fn lr_at(&self, it: usize) -> f64 {
        match &self.schedule {
            Schedule::Constant => self.optimizer.lr,
            Schedule::Cosine { lr_min, total_steps } => super::cosine_lr(
                it,
                total_steps.unwrap_or(self.iterations),
                self.optimizer.lr,
                *lr_min,
            ),
        }
    }
}

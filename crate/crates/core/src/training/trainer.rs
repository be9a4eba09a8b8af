use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use super::{
    adamw_step, clip_global_norm, l1_loss, mse_loss, overflow_loss, perturb_mutate, pixel_ce_loss, pixel_mse_loss,
    random_damage, AdamWState, IterationRecord, LossKind, PoolEntry, SamplePool, TargetRef, TrainSpec,
};
use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::data::{Checkpoint, Dataset};
use crate::nca::{embed_seed, one_hot, CellState, ChannelLayout, NcaError, NcaModel, Seed};
use crate::rng::NcaRng;

/// State captured when training produces a non-finite value.
#[derive(Clone, Debug)]
pub struct DivergenceDump {
    pub iteration: u64,
    pub message: String,
    pub params: Vec<Tensor<f32>>,
    pub grads: Option<Vec<Tensor<f32>>>,
    /// Initial grids of the failing batch.
    pub batch: Tensor<f32>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nca(#[from] NcaError),
    #[error("dataset does not fit the model: {0}")]
    Data(String),
    #[error("training diverged at iteration {}: {}", .0.iteration, .0.message)]
    Diverged(Box<DivergenceDump>),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Nca(e.into())
    }
}

/// Initial state for a dataset sample.
pub(crate) fn initial_state(
    layout: &ChannelLayout,
    data: &Dataset,
    target: TargetRef,
) -> Result<CellState<f32>, NcaError> {
    match (data, target) {
        (Dataset::ImageTargets(t), TargetRef::Image { index }) => {
            let (h, w) = t.size();
            let color = t.seed_colors.as_ref().map(|c| c[index].as_slice());
            let cond = (layout.condition > 0).then(|| one_hot::<f32>(layout.condition, index));
            embed_seed(
                layout,
                Seed::Pixel {
                    height: h,
                    width: w,
                    color,
                },
                cond.as_deref(),
            )
        }
        (Dataset::LabeledImages(l), TargetRef::Label { image, .. }) => {
            embed_seed(layout, Seed::Image(&l.images[image]), None)
        }
        (Dataset::VideoSequences(v), TargetRef::Video { sequence, offset }) => {
            embed_seed(layout, Seed::Image(&v.window(sequence, offset)), None)
        }
        _ => Err(NcaError::Layout("target reference does not match the dataset".into())),
    }
}

/// Uniformly drawn fresh sample reference.
pub(crate) fn draw_target(data: &Dataset, rng: &mut impl Rng) -> TargetRef {
    match data {
        Dataset::ImageTargets(t) => TargetRef::Image {
            index: rng.random_range(0..t.targets.len()),
        },
        Dataset::LabeledImages(l) => {
            let image = rng.random_range(0..l.len());
            TargetRef::Label {
                image,
                label: l.labels[image],
            }
        }
        Dataset::VideoSequences(v) => {
            let sequence = rng.random_range(0..v.sequences.len());
            let last = v.sequences[sequence].len() - v.frames - 1;
            TargetRef::Video {
                sequence,
                offset: rng.random_range(0..=last),
            }
        }
    }
}

fn check_fit(model: &NcaModel<f32>, spec: &TrainSpec, data: &Dataset) -> Result<(), TrainError> {
    let l = &model.spec.layout;
    let bad = |m: String| Err(TrainError::Data(m));
    match data {
        Dataset::ImageTargets(t) => {
            let c = t.targets[0].shape()[0];
            if c != l.visible {
                return bad(format!("targets have {c} channels, layout has {} visible", l.visible));
            }
            if t.targets.len() > 1 && l.condition != t.targets.len() {
                return bad(format!(
                    "{} targets need {} condition channels, layout has {}",
                    t.targets.len(),
                    t.targets.len(),
                    l.condition
                ));
            }
            if !matches!(spec.loss, LossKind::Mse | LossKind::L1) {
                return bad("image targets need an mse or l1 loss".into());
            }
        }
        Dataset::LabeledImages(d) => {
            if d.is_empty() {
                return bad("no training images".into());
            }
            let c = d.images[0].shape()[0];
            if c != l.fixed_input || d.classes != l.classes {
                return bad(format!(
                    "{c}-channel images with {} classes need fixed_input={c}, classes={}",
                    d.classes, d.classes
                ));
            }
            if !matches!(spec.loss, LossKind::PixelCe | LossKind::PixelMse) {
                return bad("labelled images need a pixel_ce or pixel_mse loss".into());
            }
        }
        Dataset::VideoSequences(v) => {
            if v.frames != l.visible {
                return bad(format!("{} frames per state need {} visible channels", v.frames, v.frames));
            }
            if !matches!(spec.loss, LossKind::Mse | LossKind::L1) {
                return bad("video needs an mse or l1 loss".into());
            }
        }
    }
    Ok(())
}

/// Owns the model, optimizer, pool and RNG of one training run. Every random
/// choice is drawn from `rng` in a fixed order, so a run is a pure function of
/// its inputs and can be resumed from a [`Checkpoint`].
pub struct Trainer {
    pub spec: TrainSpec,
    pub model: NcaModel<f32>,
    pub opt: AdamWState<f32>,
    pub pool: SamplePool,
    pub rng: NcaRng,
    pub iteration: u64,
    /// Batch items drawn from the pool over the whole run.
    pub pool_draws_total: u64,
    data: Dataset,
}

impl Trainer {
    pub fn new(spec: TrainSpec, model: NcaModel<f32>, data: Dataset, rng: NcaRng) -> Result<Self, TrainError> {
        model.spec.validate()?;
        check_fit(&model, &spec, &data)?;
        Ok(Self {
            opt: AdamWState::new(&model.params),
            pool: SamplePool::new(spec.pool.capacity),
            spec,
            model,
            rng,
            iteration: 0,
            pool_draws_total: 0,
            data,
        })
    }

    /// Restores optimizer, pool, RNG and counters from a trainer checkpoint.
    pub fn resume(spec: TrainSpec, data: Dataset, ck: Checkpoint) -> Result<Self, TrainError> {
        let rng = ck
            .rng
            .ok_or_else(|| TrainError::Data("checkpoint has no RNG state to resume from".into()))?;
        let mut t = Self::new(spec, ck.model, data, rng)?;
        if let Some(o) = ck.optimizer {
            t.opt = o;
        }
        if let Some(p) = ck.pool {
            t.pool = p;
        }
        t.iteration = ck.iteration;
        t.pool_draws_total = ck
            .extra
            .as_ref()
            .and_then(|e| e.get("pool_draws_total"))
            .and_then(|v| v.as_u64())
            .unwrap_or(0);
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            iteration: self.iteration,
            optimizer: Some(self.opt.clone()),
            rng: Some(self.rng.clone()),
            pool: Some(self.pool.clone()),
            config: None,
            extra: Some(serde_json::json!({ "pool_draws_total": self.pool_draws_total })),
            class_names: Vec::new(),
        }
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    fn draw_item(&mut self, pool_ready: bool) -> Result<(CellState<f32>, TargetRef, bool), TrainError> {
        let p = &self.spec.pool;
        let layout = self.model.spec.layout.clone();
        if p.enabled && pool_ready && self.rng.random::<f64>() < p.reseed_ratio {
            let mut entry = self.pool.sample(&mut self.rng).expect("pool is non-empty");
            let h = entry.state.height() as f64;
            if self.rng.random::<f64>() < p.damage_prob {
                let r = (p.damage_radius[0] * h, p.damage_radius[1] * h);
                random_damage(&mut entry.state, 0, r, &mut self.rng);
            }
            if p.mutate_prob > 0.0 && self.rng.random::<f64>() < p.mutate_prob {
                self.mutate(&mut entry)?;
            }
            return Ok((entry.state, entry.target, true));
        }
        let target = draw_target(&self.data, &mut self.rng);
        Ok((initial_state(&layout, &self.data, target)?, target, false))
    }

    fn mutate(&mut self, entry: &mut PoolEntry) -> Result<(), TrainError> {
        match (&self.data, entry.target) {
            (Dataset::ImageTargets(_), TargetRef::Image { .. }) if entry.state.layout.condition > 1 => {
                let (_, new) = perturb_mutate(&mut entry.state, 0, &mut self.rng)?;
                entry.target = TargetRef::Image { index: new };
            }
            (Dataset::LabeledImages(l), TargetRef::Label { .. }) => {
                let image = self.rng.random_range(0..l.len());
                let img = &l.images[image];
                let hw = img.len() / img.shape()[0];
                entry.state.grid.data_mut()[..img.len()].copy_from_slice(img.data());
                debug_assert_eq!(hw, entry.state.height() * entry.state.width());
                entry.target = TargetRef::Label {
                    image,
                    label: l.labels[image],
                };
            }
            _ => {}
        }
        Ok(())
    }

    fn task_loss(&self, g: &mut Graph<f32>, fin: Var, targets: &[TargetRef]) -> Result<Var, AutodiffError> {
        let l = &self.model.spec.layout;
        match &self.data {
            Dataset::LabeledImages(_) => {
                let labels: Vec<usize> = targets
                    .iter()
                    .map(|t| match t {
                        TargetRef::Label { label, .. } => *label,
                        _ => 0,
                    })
                    .collect();
                let cls = g.slice_channels(fin, l.class_start(), l.classes)?;
                match self.spec.loss {
                    LossKind::PixelCe => pixel_ce_loss(g, cls, &labels),
                    _ => pixel_mse_loss(g, cls, &labels),
                }
            }
            data => {
                let imgs = targets
                    .iter()
                    .map(|t| target_image(data, *t))
                    .collect::<Vec<_>>();
                let tgt = g.constant(Tensor::stack(&imgs)?);
                let vis = g.slice_channels(fin, l.visible_start(), l.visible)?;
                match self.spec.loss {
                    LossKind::L1 => l1_loss(g, vis, tgt),
                    _ => mse_loss(g, vis, tgt),
                }
            }
        }
    }

    fn diverged(&self, message: String, grads: Option<Vec<Tensor<f32>>>, batch: &CellState<f32>) -> TrainError {
        TrainError::Diverged(Box::new(DivergenceDump {
            iteration: self.iteration,
            message,
            params: self.model.params.clone(),
            grads,
            batch: batch.grid.clone(),
        }))
    }

    /// One optimisation iteration.
    pub fn step(&mut self) -> Result<IterationRecord, TrainError> {
        let start = Instant::now();
        let b = self.spec.batch_size;
        let pool_ready = self.pool.len() >= b;
        let mut states = Vec::with_capacity(b);
        let mut targets = Vec::with_capacity(b);
        let mut draws = 0;
        for _ in 0..b {
            let (s, t, from_pool) = self.draw_item(pool_ready)?;
            draws += from_pool as usize;
            states.push(s);
            targets.push(t);
        }
        let steps = self.rng.random_range(self.spec.t_min..=self.spec.t_max);
        let batch = CellState::stack(&states)?;

        let mut g = Graph::new();
        let bound = self.model.bind(&mut g, true);
        let s0 = g.constant(batch.grid.clone());
        let built = (|| -> Result<(Var, Var, Option<Var>, Var), NcaError> {
            let fin = self.model.rollout_on_graph(&mut g, &bound, s0, steps, &mut self.rng)?;
            let task = self.task_loss(&mut g, fin, &targets)?;
            let w = self.spec.overflow_weight;
            if w > 0.0 {
                let ov = overflow_loss(&mut g, fin, &self.model.spec.layout)?;
                let scaled = g.scale(ov, w)?;
                let total = g.add(task, scaled)?;
                Ok((fin, task, Some(ov), total))
            } else {
                Ok((fin, task, None, task))
            }
        })();
        let (fin, task, ov, loss) = match built {
            Ok(v) => v,
            Err(NcaError::Autodiff(AutodiffError::NonFinite(op))) => {
                return Err(self.diverged(format!("non-finite output of {op} in the forward pass"), None, &batch))
            }
            Err(e) => return Err(e.into()),
        };
        let loss_value = g.value(loss).item() as f64;
        if let Err(e) = g.backward(loss) {
            return Err(match e {
                AutodiffError::NonFinite(op) => {
                    self.diverged(format!("non-finite gradient through {op}"), None, &batch)
                }
                e => e.into(),
            });
        }
        let mut grads: Vec<Tensor<f32>> = bound
            .params
            .iter()
            .zip(&self.model.params)
            .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        if !loss_value.is_finite() || grads.iter().any(|t| !t.all_finite()) {
            return Err(self.diverged("non-finite loss or gradient".into(), Some(grads), &batch));
        }
        let grad_norm = clip_global_norm(&mut grads, self.spec.grad_clip_norm);
        let lr = self.spec.lr_at(self.iteration as usize);
        adamw_step(&mut self.model.params, &grads, &mut self.opt, &self.spec.optimizer, lr);

        let loss_task = g.value(task).item() as f64;
        let loss_overflow = ov.map_or(0.0, |v| g.value(v).item() as f64);
        let final_grid = g.value(fin).clone();
        drop(g);

        if self.spec.pool.enabled {
            for (i, (s, t)) in states.iter().zip(&targets).enumerate() {
                let Some(target) = self.commit_target(*t) else { continue };
                let mut state = CellState::new(s.layout.clone(), final_grid.batch_item(i)?)?;
                state.step_index = s.step_index + steps as u64;
                self.pool.commit(PoolEntry { state, target });
            }
        }
        self.pool_draws_total += draws as u64;
        self.iteration += 1;
        Ok(IterationRecord {
            iteration: self.iteration,
            lr,
            loss: loss_value,
            loss_task,
            loss_overflow,
            grad_norm,
            rollout_steps: steps,
            pool_size: self.pool.len(),
            pool_draws: draws,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Where a committed final state points: video states advance one frame
    /// and are dropped once no shifted target remains.
    fn commit_target(&self, t: TargetRef) -> Option<TargetRef> {
        match (t, &self.data) {
            (TargetRef::Video { sequence, offset }, Dataset::VideoSequences(v)) => {
                let next = offset + 1;
                (next + v.frames < v.sequences[sequence].len()).then_some(TargetRef::Video { sequence, offset: next })
            }
            _ => Some(t),
        }
    }

    /// Runs until `iteration == until`, calling `on_iter` after each step.
    pub fn run_until(
        &mut self,
        until: u64,
        mut on_iter: impl FnMut(&IterationRecord, &Trainer),
    ) -> Result<(), TrainError> {
        while self.iteration < until {
            let rec = self.step()?;
            on_iter(&rec, self);
        }
        Ok(())
    }
}

/// The visible-channel target of a sample.
pub(crate) fn target_image(data: &Dataset, t: TargetRef) -> Tensor<f32> {
    match (data, t) {
        (Dataset::ImageTargets(d), TargetRef::Image { index }) => d.targets[index].clone(),
        (Dataset::VideoSequences(v), TargetRef::Video { sequence, offset }) => v.window(sequence, offset + 1),
        _ => panic!("no image target for {t:?}"),
    }
}

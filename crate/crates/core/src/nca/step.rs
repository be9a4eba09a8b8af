use rand::Rng;

use super::model::{AliveNeighborhood, BoundModel, ModelSpec, NcaModel};
use super::{CellState, NcaError};
use crate::autodiff::{AutodiffError, Graph, Padding, Real, Tensor, Var};

/// One Bernoulli(`rate`) draw per batch item and cell, `[N, 1, H, W]`.
pub fn sample_fire_mask<T: Real>(
    n: usize,
    h: usize,
    w: usize,
    rate: f64,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let data = (0..n * h * w)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::new(&[n, 1, h, w], data).expect("mask shape")
}

/// Alive cells `[N, 1, H, W]` from the alpha channel of `grid`: alpha (or,
/// for the 3×3 rule, the neighborhood max of alpha) strictly above `tau`.
pub fn alive_mask<T: Real>(
    grid: &Tensor<T>,
    alpha_channel: usize,
    tau: f64,
    neighborhood: AliveNeighborhood,
    padding: Padding,
) -> Result<Tensor<T>, NcaError> {
    let (n, c, h, w) = grid.dims4()?;
    if alpha_channel >= c {
        return Err(NcaError::NoAlpha);
    }
    let tau = T::from_f64_lossy(tau);
    let hw = h * w;
    let mut out = vec![T::zero(); n * hw];
    for b in 0..n {
        let alpha = &grid.data()[(b * c + alpha_channel) * hw..(b * c + alpha_channel + 1) * hw];
        for y in 0..h {
            for x in 0..w {
                let alive = match neighborhood {
                    AliveNeighborhood::SelfOnly => alpha[y * w + x] > tau,
                    AliveNeighborhood::Moore => {
                        let mut any = false;
                        for dy in -1isize..=1 {
                            for dx in -1isize..=1 {
                                let (sy, sx) = (y as isize + dy, x as isize + dx);
                                let idx = match padding {
                                    Padding::Zeros => {
                                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                            continue;
                                        }
                                        sy as usize * w + sx as usize
                                    }
                                    Padding::Circular => {
                                        sy.rem_euclid(h as isize) as usize * w
                                            + sx.rem_euclid(w as isize) as usize
                                    }
                                };
                                any |= alpha[idx] > tau;
                            }
                        }
                        any
                    }
                };
                if alive {
                    out[b * hw + y * w + x] = T::one();
                }
            }
        }
    }
    Ok(Tensor::new(&[n, 1, h, w], out)?)
}

/// Repeats a `[N, 1, H, W]` mask over `channels`.
fn expand_mask<T: Real>(mask: &Tensor<T>, channels: usize) -> Tensor<T> {
    let (n, _, h, w) = mask.dims4().expect("mask is 4-D");
    let hw = h * w;
    let mut data = Vec::with_capacity(n * channels * hw);
    for b in 0..n {
        let plane = &mask.data()[b * hw..(b + 1) * hw];
        for _ in 0..channels {
            data.extend_from_slice(plane);
        }
    }
    Tensor::new(&[n, channels, h, w], data).expect("expanded mask")
}

/// Records one CA update on `g`.
///
/// `s' = s + m ⊙ Δs` on the evolving block, then the living mask (if
/// enabled) zeroes evolving channels of cells not alive both before and
/// after; fixed-input and condition channels are copied through unchanged.
/// Both masks are constants for differentiation.
pub fn step_on_graph<T: Real>(
    g: &mut Graph<T>,
    spec: &ModelSpec,
    model: &BoundModel,
    state: Var,
    fire_mask: &Tensor<T>,
) -> Result<Var, NcaError> {
    let layout = &spec.layout;
    let (_, c, _, _) = g.value(state).dims4()?;
    if c != layout.total() {
        return Err(NcaError::Layout(format!(
            "state has {c} channels, model expects {}",
            layout.total()
        )));
    }
    let features = model.perceive(g, spec, state)?;
    let delta = model.update(g, spec, features)?;
    let evo = g.slice_channels(state, layout.evolving_start(), layout.evolving())?;
    let fire = g.constant(expand_mask(fire_mask, layout.evolving()));
    let masked = g.mul(delta, fire)?;
    let mut next = g.add(evo, masked)?;
    if spec.living_mask {
        let alpha = layout.alpha_channel().ok_or(NcaError::NoAlpha)?;
        let pre = alive_mask(
            g.value(state),
            alpha,
            spec.alpha_threshold,
            spec.alive_neighborhood,
            spec.padding,
        )?;
        let post = alive_mask(
            g.value(next),
            alpha - layout.evolving_start(),
            spec.alpha_threshold,
            spec.alive_neighborhood,
            spec.padding,
        )?;
        let both: Vec<T> = pre
            .data()
            .iter()
            .zip(post.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let both = Tensor::new(pre.shape(), both)?;
        let m = g.constant(expand_mask(&both, layout.evolving()));
        next = g.mul(next, m)?;
    }
    let mut parts = Vec::with_capacity(3);
    if layout.fixed_input > 0 {
        let fixed = g.value(state).channels(0, layout.fixed_input)?;
        parts.push(g.constant(fixed));
    }
    parts.push(next);
    if layout.condition > 0 {
        let cond = g
            .value(state)
            .channels(layout.condition_start(), layout.condition)?;
        parts.push(g.constant(cond));
    }
    Ok(g.concat_channels(&parts)?)
}

/// Which intermediate states a detached rollout keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Record {
    None,
    /// Visible channels at t = 0, k, 2k, ... (and the final step).
    VisibleEvery(usize),
}

impl<T: Real> NcaModel<T> {
    pub fn perceive(&self, state: &CellState<T>) -> Result<Tensor<T>, NcaError> {
        self.check_layout(state)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let s = g.constant(state.grid.clone());
        let f = bound.perceive(&mut g, &self.spec, s)?;
        Ok(g.value(f).clone())
    }

    /// Δs for the evolving channels given perceived `features`.
    pub fn update_delta(&self, features: &Tensor<T>) -> Result<Tensor<T>, NcaError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let f = g.constant(features.clone());
        let d = bound.update(&mut g, &self.spec, f)?;
        Ok(g.value(d).clone())
    }

    fn check_layout(&self, state: &CellState<T>) -> Result<(), NcaError> {
        if state.layout != self.spec.layout {
            return Err(NcaError::Layout(
                "state layout differs from model layout".into(),
            ));
        }
        Ok(())
    }

    /// One stochastic update without gradient tracking.
    pub fn step(&self, state: &CellState<T>, rng: &mut impl Rng) -> Result<CellState<T>, NcaError> {
        let (n, _, h, w) = state.grid.dims4()?;
        let mask = sample_fire_mask(n, h, w, self.spec.fire_rate, rng);
        self.step_with_mask(state, &mask)
    }

    /// [`NcaModel::step`] with an explicit `[N, 1, H, W]` fire mask.
    pub fn step_with_mask(&self, state: &CellState<T>, mask: &Tensor<T>) -> Result<CellState<T>, NcaError> {
        self.check_layout(state)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let s = g.constant(state.grid.clone());
        let diverged = NcaError::Diverged {
            step: state.step_index + 1,
        };
        let next = match step_on_graph(&mut g, &self.spec, &bound, s, mask) {
            Err(NcaError::Autodiff(AutodiffError::NonFinite(_))) => return Err(diverged),
            r => r?,
        };
        let grid = g.value(next).clone();
        if !grid.all_finite() {
            return Err(diverged);
        }
        Ok(CellState {
            layout: state.layout.clone(),
            grid,
            step_index: state.step_index + 1,
        })
    }

    /// `steps` detached updates, optionally recording visible snapshots.
    pub fn rollout(
        &self,
        state: &CellState<T>,
        steps: usize,
        rng: &mut impl Rng,
        record: Record,
    ) -> Result<(CellState<T>, Option<Vec<Tensor<T>>>), NcaError> {
        let mut cur = state.clone();
        let mut frames = match record {
            Record::None => None,
            Record::VisibleEvery(k) => {
                if k == 0 {
                    return Err(NcaError::Spec("recording interval must be positive".into()));
                }
                Some(vec![cur.visible()])
            }
        };
        for t in 1..=steps {
            cur = self.step(&cur, rng)?;
            if let (Some(f), Record::VisibleEvery(k)) = (frames.as_mut(), record) {
                if t % k == 0 || t == steps {
                    f.push(cur.visible());
                }
            }
        }
        Ok((cur, frames))
    }

    /// Records a `steps`-long rollout on `g` for backpropagation through time.
    pub fn rollout_on_graph(
        &self,
        g: &mut Graph<T>,
        bound: &BoundModel,
        state: Var,
        steps: usize,
        rng: &mut impl Rng,
    ) -> Result<Var, NcaError> {
        let (n, _, h, w) = g.value(state).dims4()?;
        let mut cur = state;
        for _ in 0..steps {
            let mask = sample_fire_mask(n, h, w, self.spec.fire_rate, rng);
            cur = step_on_graph(g, &self.spec, bound, cur, &mask)?;
        }
        Ok(cur)
    }
}

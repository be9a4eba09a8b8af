use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::nca::{CellState, NcaError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    First,
    Second,
}

fn zero_evolving_where<T: Real>(
    state: &mut CellState<T>,
    item: usize,
    pred: impl Fn(usize, usize) -> bool,
) -> usize {
    let (h, w) = (state.height(), state.width());
    let l = state.layout.clone();
    let c = l.total();
    let hw = h * w;
    let data = state.grid.data_mut();
    let mut zeroed = 0;
    for y in 0..h {
        for x in 0..w {
            if !pred(x, y) {
                continue;
            }
            zeroed += 1;
            for ch in l.evolving_start()..l.evolving_start() + l.evolving() {
                data[(item * c + ch) * hw + y * w + x] = T::zero();
            }
        }
    }
    zeroed
}

/// Zeroes the evolving channels of every cell whose centre `(x, y)` lies in
/// the closed disc around `(cx, cy)`. Returns the number of cells hit.
pub fn perturb_damage<T: Real>(
    state: &mut CellState<T>,
    item: usize,
    center: (f64, f64),
    radius: f64,
) -> usize {
    let r2 = radius * radius;
    zero_evolving_where(state, item, |x, y| {
        let (dx, dy) = (x as f64 - center.0, y as f64 - center.1);
        dx * dx + dy * dy <= r2
    })
}

/// Zeroes the evolving channels of one half of the grid: `Horizontal` cuts
/// along a horizontal line (top or bottom half), `Vertical` along a vertical
/// one (left or right half).
pub fn perturb_halfplane<T: Real>(state: &mut CellState<T>, item: usize, axis: Axis, side: Side) -> usize {
    let (h, w) = (state.height(), state.width());
    zero_evolving_where(state, item, |x, y| match (axis, side) {
        (Axis::Horizontal, Side::First) => y < h / 2,
        (Axis::Horizontal, Side::Second) => y >= h / 2,
        (Axis::Vertical, Side::First) => x < w / 2,
        (Axis::Vertical, Side::Second) => x >= w / 2,
    })
}

/// Damage at a random centre with radius uniform in `[lo, hi]`.
pub fn random_damage<T: Real>(state: &mut CellState<T>, item: usize, radius: (f64, f64), rng: &mut impl Rng) {
    let (h, w) = (state.height() as f64, state.width() as f64);
    let cx = rng.random_range(0.0..w);
    let cy = rng.random_range(0.0..h);
    let r = if radius.1 > radius.0 {
        rng.random_range(radius.0..radius.1)
    } else {
        radius.0
    };
    perturb_damage(state, item, (cx, cy), r);
}

/// Replaces the condition of `item` with a uniformly drawn different class.
/// Returns `(old, new)`.
pub fn perturb_mutate<T: Real>(
    state: &mut CellState<T>,
    item: usize,
    rng: &mut impl Rng,
) -> Result<(usize, usize), NcaError> {
    let d = state.layout.condition;
    if d == 0 {
        return Err(NcaError::Layout("model is unconditional".into()));
    }
    if d == 1 {
        return Err(NcaError::Layout("a single condition class cannot mutate".into()));
    }
    let old = state.condition_class(item).unwrap_or(0);
    let mut new = rng.random_range(0..d - 1);
    if new >= old {
        new += 1;
    }
    state.set_condition(item, new)?;
    Ok((old, new))
}

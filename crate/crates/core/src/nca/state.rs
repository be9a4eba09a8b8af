use super::{ChannelLayout, NcaError};
use crate::autodiff::{Real, Tensor};

/// Evolving CA grid `[N, C, H, W]` with its channel layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<T: Real = f32> {
    pub layout: ChannelLayout,
    pub grid: Tensor<T>,
    pub step_index: u64,
}

/// What to place into a fresh state.
#[derive(Clone, Debug, PartialEq)]
pub enum Seed<'a, T: Real = f32> {
    /// One live cell in the centre. `color`, when given, fills the visible
    /// channels other than alpha at that cell.
    Pixel {
        height: usize,
        width: usize,
        color: Option<&'a [T]>,
    },
    /// `[C, H, W]` image written into the fixed-input channels when the
    /// layout has them, otherwise into the leading visible channels.
    Image(&'a Tensor<T>),
}

impl<T: Real> CellState<T> {
    pub fn new(layout: ChannelLayout, grid: Tensor<T>) -> Result<Self, NcaError> {
        let (_, c, _, _) = grid.dims4()?;
        if c != layout.total() {
            return Err(NcaError::Layout(format!(
                "grid has {c} channels, layout needs {}",
                layout.total()
            )));
        }
        Ok(Self {
            layout,
            grid,
            step_index: 0,
        })
    }

    pub fn batch(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.grid.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.grid.shape()[3]
    }

    pub fn visible(&self) -> Tensor<T> {
        self.grid
            .channels(self.layout.visible_start(), self.layout.visible)
            .expect("layout-consistent grid")
    }

    pub fn class_channels(&self) -> Tensor<T> {
        self.grid
            .channels(self.layout.class_start(), self.layout.classes)
            .expect("layout-consistent grid")
    }

    pub fn channel(&self, c: usize) -> Tensor<T> {
        self.grid.channels(c, 1).expect("channel in range")
    }

    /// Index of the hot entry of the condition vector of batch item `b`.
    pub fn condition_class(&self, b: usize) -> Option<usize> {
        let l = &self.layout;
        if l.condition == 0 {
            return None;
        }
        let hw = self.height() * self.width();
        let c = l.total();
        (0..l.condition).find(|&k| {
            self.grid.data()[(b * c + l.condition_start() + k) * hw] > T::from_f64_lossy(0.5)
        })
    }

    /// Writes a one-hot condition for batch item `b` at every cell.
    pub fn set_condition(&mut self, b: usize, class: usize) -> Result<(), NcaError> {
        let l = self.layout.clone();
        if class >= l.condition {
            return Err(NcaError::Condition {
                expected: l.condition,
                got: class,
            });
        }
        let hw = self.height() * self.width();
        let c = l.total();
        let data = self.grid.data_mut();
        for k in 0..l.condition {
            let v = if k == class { T::one() } else { T::zero() };
            let off = (b * c + l.condition_start() + k) * hw;
            data[off..off + hw].fill(v);
        }
        Ok(())
    }

    pub fn item(&self, b: usize) -> Result<Self, NcaError> {
        Ok(Self {
            layout: self.layout.clone(),
            grid: self.grid.batch_item(b)?,
            step_index: self.step_index,
        })
    }

    /// Batches single-item states; the step index of the first is kept.
    pub fn stack(items: &[Self]) -> Result<Self, NcaError> {
        let first = items
            .first()
            .ok_or_else(|| NcaError::Layout("empty batch".into()))?;
        let grids: Vec<Tensor<T>> = items.iter().map(|s| s.grid.clone()).collect();
        Ok(Self {
            layout: first.layout.clone(),
            grid: Tensor::stack(&grids)?,
            step_index: first.step_index,
        })
    }
}

/// Builds the initial state: seed in the visible (or fixed-input) channels,
/// hidden and classification channels zero, condition broadcast everywhere.
pub fn embed_seed<T: Real>(
    layout: &ChannelLayout,
    seed: Seed<'_, T>,
    condition: Option<&[T]>,
) -> Result<CellState<T>, NcaError> {
    layout.validate()?;
    let (h, w) = match seed {
        Seed::Pixel { height, width, .. } => (height, width),
        Seed::Image(img) => match img.shape() {
            [_, h, w] => (*h, *w),
            s => return Err(NcaError::Layout(format!("seed image must be [C,H,W], got {s:?}"))),
        },
    };
    let cond_len = condition.map_or(0, <[T]>::len);
    if cond_len != layout.condition {
        return Err(NcaError::Condition {
            expected: layout.condition,
            got: cond_len,
        });
    }
    let c = layout.total();
    let hw = h * w;
    let mut data = vec![T::zero(); c * hw];
    match seed {
        Seed::Pixel { color, .. } => {
            let center = (h / 2) * w + w / 2;
            if let Some(color) = color {
                let slots: Vec<usize> = (0..layout.visible)
                    .filter(|&v| Some(v) != layout.alpha_index)
                    .collect();
                if color.len() != slots.len() {
                    return Err(NcaError::Layout(format!(
                        "seed colour has {} entries for {} colour channels",
                        color.len(),
                        slots.len()
                    )));
                }
                for (&v, &value) in slots.iter().zip(color) {
                    data[(layout.visible_start() + v) * hw + center] = value;
                }
            }
            match layout.alpha_channel() {
                Some(a) => data[a * hw + center] = T::one(),
                None if layout.visible > 0 => {
                    data[layout.visible_start() * hw + center] = T::one()
                }
                None => {}
            }
        }
        Seed::Image(img) => {
            let ic = img.shape()[0];
            let start = if layout.fixed_input > 0 {
                if ic != layout.fixed_input {
                    return Err(NcaError::Layout(format!(
                        "image has {ic} channels, layout has {} fixed-input channels",
                        layout.fixed_input
                    )));
                }
                0
            } else {
                if ic > layout.visible {
                    return Err(NcaError::Layout(format!(
                        "image has {ic} channels, layout has {} visible channels",
                        layout.visible
                    )));
                }
                layout.visible_start()
            };
            data[start * hw..(start + ic) * hw].copy_from_slice(img.data());
        }
    }
    if let Some(cond) = condition {
        for (k, &v) in cond.iter().enumerate() {
            let off = (layout.condition_start() + k) * hw;
            data[off..off + hw].fill(v);
        }
    }
    CellState::new(layout.clone(), Tensor::new(&[1, c, h, w], data)?)
}

/// One-hot vector of length `n` with `class` set.
pub fn one_hot<T: Real>(n: usize, class: usize) -> Vec<T> {
    (0..n)
        .map(|k| if k == class { T::one() } else { T::zero() })
        .collect()
}

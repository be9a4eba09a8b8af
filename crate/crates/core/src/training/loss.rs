use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, Real, Tensor, Var};
use crate::nca::ChannelLayout;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    L1,
    /// Cross-entropy of the class channels at every cell.
    PixelCe,
    /// Squared error of the class channels against the broadcast one-hot.
    PixelMse,
}

fn check_same<T: Real>(g: &Graph<T>, a: Var, b: Var) -> Result<(), AutodiffError> {
    let (sa, sb) = (g.value(a).shape(), g.value(b).shape());
    if sa != sb {
        return Err(AutodiffError::Shape(format!(
            "prediction {sa:?} and target {sb:?} differ"
        )));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, AutodiffError> {
    check_same(g, pred, target)?;
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    g.mean_all(sq)
}

/// Mean absolute error over all elements.
pub fn l1_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var, AutodiffError> {
    check_same(g, pred, target)?;
    let d = g.sub(pred, target)?;
    let a = g.abs(d)?;
    g.mean_all(a)
}

/// Spatially broadcast one-hot targets `[N, K, H, W]`.
pub fn one_hot_field<T: Real>(labels: &[usize], k: usize, h: usize, w: usize) -> Result<Tensor<T>, AutodiffError> {
    let hw = h * w;
    let mut data = vec![T::zero(); labels.len() * k * hw];
    for (b, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(AutodiffError::Shape(format!(
                "label {y} out of range for {k} classes"
            )));
        }
        let off = (b * k + y) * hw;
        data[off..off + hw].fill(T::one());
    }
    Tensor::new(&[labels.len(), k, h, w], data)
}

/// `-1/(N·H·W) Σ log softmax(c)[label]` over every cell of every item.
pub fn pixel_ce_loss<T: Real>(
    g: &mut Graph<T>,
    class_channels: Var,
    labels: &[usize],
) -> Result<Var, AutodiffError> {
    let (n, k, h, w) = g.value(class_channels).dims4()?;
    if k < 2 {
        return Err(AutodiffError::Shape(format!("need at least 2 classes, got {k}")));
    }
    if labels.len() != n {
        return Err(AutodiffError::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let oh = g.constant(one_hot_field(labels, k, h, w)?);
    let ls = g.log_softmax(class_channels, 1)?;
    let picked = g.mul(ls, oh)?;
    let total = g.sum_all(picked)?;
    g.scale(total, -1.0 / (n * h * w) as f64)
}

/// `1/(N·H·W·K) Σ (c − onehot)²`.
pub fn pixel_mse_loss<T: Real>(
    g: &mut Graph<T>,
    class_channels: Var,
    labels: &[usize],
) -> Result<Var, AutodiffError> {
    let (n, k, h, w) = g.value(class_channels).dims4()?;
    if labels.len() != n {
        return Err(AutodiffError::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let oh = g.constant(one_hot_field(labels, k, h, w)?);
    mse_loss(g, class_channels, oh)
}

/// `mean(relu(v − 1) + relu(−v))` over visible channels plus
/// `mean(relu(|h| − 1))` over hidden channels.
pub fn overflow_loss<T: Real>(
    g: &mut Graph<T>,
    state: Var,
    layout: &ChannelLayout,
) -> Result<Var, AutodiffError> {
    let mut terms = Vec::new();
    if layout.visible > 0 {
        let v = g.slice_channels(state, layout.visible_start(), layout.visible)?;
        let hi = g.affine(v, 1.0, -1.0)?;
        let hi = g.relu(hi)?;
        let lo = g.scale(v, -1.0)?;
        let lo = g.relu(lo)?;
        let both = g.add(hi, lo)?;
        terms.push(g.mean_all(both)?);
    }
    if layout.hidden > 0 {
        let hd = g.slice_channels(state, layout.hidden_start(), layout.hidden)?;
        let a = g.abs(hd)?;
        let over = g.affine(a, 1.0, -1.0)?;
        let over = g.relu(over)?;
        terms.push(g.mean_all(over)?);
    }
    match terms[..] {
        [] => {
            let zero = g.constant(Tensor::scalar(T::zero()));
            Ok(zero)
        }
        [t] => Ok(t),
        [a, b, ..] => g.add(a, b),
    }
}

/// Mean squared difference of two equally shaped tensors, in `f64`.
pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse of mismatched tensors");
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    s / a.len().max(1) as f64
}

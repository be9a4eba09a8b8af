use super::EvalTarget;
use crate::data::{Dataset, LabeledImages};
use crate::nca::{embed_seed, one_hot, CellState, ChannelLayout, NcaError, Seed};

/// Initial state and metric target of evaluation sample `index`.
///
/// Generative tasks seed target `index` (with its condition, if any);
/// classification embeds held-out image `index` (training images when
/// `test` is empty); video seeds sequence `index` at offset 0 and targets
/// the following window.
pub fn eval_sample(
    layout: &ChannelLayout,
    data: &Dataset,
    test: Option<&LabeledImages>,
    index: usize,
) -> Result<(CellState<f32>, EvalTarget), NcaError> {
    match data {
        Dataset::ImageTargets(t) => {
            let i = index % t.targets.len();
            let (h, w) = t.size();
            let cond = (layout.condition > 0).then(|| one_hot::<f32>(layout.condition, i));
            let color = t.seed_colors.as_ref().map(|c| c[i].as_slice());
            let s = embed_seed(layout, Seed::Pixel { height: h, width: w, color }, cond.as_deref())?;
            Ok((s, EvalTarget::Image(t.targets[i].clone())))
        }
        Dataset::LabeledImages(train) => {
            let set = test.filter(|t| !t.is_empty()).unwrap_or(train);
            let i = index % set.len();
            let s = embed_seed(layout, Seed::Image(&set.images[i]), None)?;
            Ok((s, EvalTarget::Label(set.labels[i])))
        }
        Dataset::VideoSequences(v) => {
            let seq = index % v.sequences.len();
            let s = embed_seed(layout, Seed::Image(&v.window(seq, 0)), None)?;
            Ok((s, EvalTarget::Image(v.window(seq, 1))))
        }
    }
}

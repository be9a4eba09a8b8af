//! Evaluation helpers shared by `eval`, `regen-bench` and the service.

use nca_core::autodiff::Tensor;
use nca_core::data::{Dataset, EvalProtocol, LabeledImages, RunConfig};
use nca_core::metrics::{self,
    image_accuracy, per_pixel_accuracy, staged_eval, EvalTarget, Perturbation, RegenReport,
};
use nca_core::nca::{embed_seed, CellState, NcaModel, Record, Seed};
use nca_core::rng::stream;
use nca_core::training::mse;
use serde_json::json;

use crate::error::CliError;

/// Initial state and metric target of evaluation sample `index`.
pub fn eval_sample(
    model: &NcaModel<f32>,
    data: &Dataset,
    test: Option<&LabeledImages>,
    index: usize,
) -> Result<(CellState<f32>, EvalTarget), CliError> {
    Ok(metrics::eval_sample(&model.spec.layout, data, test, index)?)
}

/// Damage at the configured centre and radius.
pub fn damage_for(protocol: &EvalProtocol, state: &CellState<f32>) -> Perturbation {
    let (h, w) = (state.height() as f64, state.width() as f64);
    let center = protocol
        .damage_center
        .map_or(((w - 1.0) / 2.0, (h - 1.0) / 2.0), |c| (c[0], c[1]));
    Perturbation::Damage {
        center,
        radius: protocol.damage_radius * h,
    }
}

/// Condition switch (conditional generation) or input replacement
/// (classification); `None` when the task has neither.
pub fn mutation_for(
    model: &NcaModel<f32>,
    data: &Dataset,
    test: Option<&LabeledImages>,
    index: usize,
) -> Option<Perturbation> {
    match data {
        Dataset::ImageTargets(t) if model.spec.layout.condition > 1 => {
            let from = index % t.targets.len();
            let class = (from + 1) % t.targets.len();
            Some(Perturbation::Mutate {
                class,
                target: EvalTarget::Image(t.targets[class].clone()),
            })
        }
        Dataset::LabeledImages(train) => {
            let set = test.filter(|t| !t.is_empty()).unwrap_or(train);
            let i = index % set.len();
            let label = set.labels[i];
            (1..set.len())
                .map(|k| (i + k) % set.len())
                .find(|&j| set.labels[j] != label)
                .map(|j| Perturbation::ReplaceInput {
                    image: set.images[j].clone(),
                    label: set.labels[j],
                })
        }
        _ => None,
    }
}

/// Damage and (when applicable) mutation reports for one model.
pub fn regen_reports(
    cfg: &RunConfig,
    name: &str,
    model: &NcaModel<f32>,
    data: &Dataset,
    test: Option<&LabeledImages>,
) -> Result<(RegenReport, Option<RegenReport>), CliError> {
    let p = &cfg.eval;
    let (s0, target) = eval_sample(model, data, test, p.sample)?;
    let mut rng = stream(cfg.seed, &format!("eval/{name}/{}/damage", p.sample));
    let damage = staged_eval(model, &s0, &target, p, &damage_for(p, &s0), &mut rng)?;
    let mutation = match mutation_for(model, data, test, p.sample) {
        Some(m) => {
            let mut rng = stream(cfg.seed, &format!("eval/{name}/{}/mutation", p.sample));
            Some(staged_eval(model, &s0, &target, p, &m, &mut rng)?)
        }
        None => None,
    };
    Ok((damage, mutation))
}

/// Mean image and per-pixel accuracy over `set`, averaged over steps in
/// `window` (inclusive).
pub fn classification_accuracy(
    model: &NcaModel<f32>,
    set: &LabeledImages,
    window: [usize; 2],
    seed: u64,
) -> Result<(f64, f64), CliError> {
    let layout = &model.spec.layout;
    let mut rng = stream(seed, "eval/classification");
    let (mut img, mut pix, mut n) = (0.0, 0.0, 0usize);
    for chunk in set.images.chunks(50).zip(set.labels.chunks(50)) {
        let states = chunk
            .0
            .iter()
            .map(|im| embed_seed(layout, Seed::Image(im), None))
            .collect::<Result<Vec<_>, _>>()?;
        let mut s = CellState::stack(&states)?;
        for t in 1..=window[1] {
            s = model.step(&s, &mut rng)?;
            if t >= window[0] {
                let cls = s.class_channels();
                for (b, &label) in chunk.1.iter().enumerate() {
                    img += image_accuracy(&cls, b, label);
                    pix += per_pixel_accuracy(&cls, b, label, None);
                    n += 1;
                }
            }
        }
    }
    let n = n.max(1) as f64;
    Ok((img / n, pix / n))
}

/// Mean next-sequence MSE after each step `0..=steps`, over every sequence
/// starting at offset 0.
pub fn video_curve(model: &NcaModel<f32>, data: &Dataset, steps: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    let Dataset::VideoSequences(v) = data else {
        return Err(CliError::Usage("video evaluation needs a video task".into()));
    };
    let layout = &model.spec.layout;
    let mut rng = stream(seed, "eval/video");
    let mut curve = vec![0.0; steps + 1];
    for seq in 0..v.sequences.len() {
        let mut s = embed_seed(layout, Seed::Image(&v.window(seq, 0)), None)?;
        let target = v.window(seq, 1);
        let err = |s: &CellState<f32>| {
            let vis = s.visible();
            let sh = vis.shape().to_vec();
            mse(&vis.reshape(&[sh[1], sh[2], sh[3]]).expect("one item"), &target)
        };
        curve[0] += err(&s);
        for c in curve.iter_mut().skip(1) {
            s = model.step(&s, &mut rng)?;
            *c += err(&s);
        }
    }
    let n = v.sequences.len() as f64;
    Ok(curve.into_iter().map(|c| c / n).collect())
}

/// Mean visible-channel MSE against each target after `steps` steps from
/// the seed, over `repeats` stochastic rollouts per target.
pub fn generative_mse(
    model: &NcaModel<f32>,
    data: &Dataset,
    steps: usize,
    repeats: usize,
    seed: u64,
) -> Result<f64, CliError> {
    let Dataset::ImageTargets(t) = data else {
        return Err(CliError::Usage("generative evaluation needs image targets".into()));
    };
    let mut rng = stream(seed, "eval/generative");
    let mut total = 0.0;
    for i in 0..t.targets.len() {
        let (s0, target) = eval_sample(model, data, None, i)?;
        for _ in 0..repeats {
            let (s, _) = model.rollout(&s0, steps, &mut rng, Record::None)?;
            total += target.metric(&s);
        }
    }
    Ok(total / (t.targets.len() * repeats.max(1)) as f64)
}

/// Task-appropriate summary metrics as JSON.
pub fn evaluate(
    cfg: &RunConfig,
    model: &NcaModel<f32>,
    data: &Dataset,
    test: Option<&LabeledImages>,
) -> Result<serde_json::Value, CliError> {
    let t_eval = cfg.eval.train_window[1];
    Ok(match data {
        Dataset::ImageTargets(_) => {
            let m = generative_mse(model, data, t_eval, 8, cfg.seed)?;
            json!({ "task": "generative", "steps": t_eval, "mse": m })
        }
        Dataset::LabeledImages(train) => {
            let set = test.filter(|t| !t.is_empty()).unwrap_or(train);
            let (img, pix) = classification_accuracy(model, set, cfg.eval.train_window, cfg.seed)?;
            json!({ "task": "classification", "window": cfg.eval.train_window, "samples": set.len(),
                    "image_accuracy": img, "per_pixel_accuracy": pix })
        }
        Dataset::VideoSequences(_) => {
            let curve = video_curve(model, data, t_eval, cfg.seed)?;
            json!({ "task": "video", "steps": t_eval, "mse_step0": curve[0], "mse_final": curve[t_eval] })
        }
    })
}

/// Visible channels of item 0 as an image `[C, H, W]` suitable for PNG.
pub fn visible_image(state: &CellState<f32>) -> Tensor<f32> {
    let v = state.visible();
    let s = v.shape().to_vec();
    v.batch_item(0)
        .and_then(|t| t.reshape(&[s[1], s[2], s[3]]))
        .expect("visible channels")
}

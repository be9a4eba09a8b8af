//! Rollout frame export.

use std::fs;
use std::path::{Path, PathBuf};

use nca_core::autodiff::Tensor;
use nca_core::data::{load_checkpoint, save_png, Checkpoint, RunConfig};
use nca_core::metrics::EvalTarget;
use nca_core::nca::{render_rgba, rgba_tensor, CellState, ChannelLayout};
use nca_core::rng::stream;

use crate::error::{io_err, CliError};
use crate::evaluate::eval_sample;

pub struct ExportSpec {
    pub steps: usize,
    pub every: usize,
    pub sample: usize,
    /// Place the target to the right of each frame.
    pub with_target: bool,
    pub seed: u64,
}

/// Run configuration stored in a trainer checkpoint.
pub fn checkpoint_config(ck: &Checkpoint, path: &Path) -> Result<RunConfig, CliError> {
    let v = ck.config.clone().ok_or_else(|| {
        CliError::Usage(format!("{}: checkpoint carries no run configuration", path.display()))
    })?;
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn image_rgba(img: &Tensor<f32>, alpha: Option<usize>) -> Result<Vec<u8>, CliError> {
    let s = img.shape().to_vec();
    let layout = ChannelLayout {
        visible: s[0],
        alpha_index: alpha,
        ..Default::default()
    };
    let grid = img.clone().reshape(&[1, s[0], s[1], s[2]]).map_err(|e| CliError::Failed(e.to_string()))?;
    let state = CellState::new(layout, grid)?;
    Ok(render_rgba(&state, 0))
}

fn side_by_side(left: &[u8], right: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(left.len() * 2);
    for y in 0..h {
        out.extend_from_slice(&left[y * w * 4..(y + 1) * w * 4]);
        out.extend_from_slice(&right[y * w * 4..(y + 1) * w * 4]);
    }
    out
}

/// Writes `frame_<step>.png` for t = 0, k, 2k, ... up to `steps`, so a run
/// of T steps yields ⌊T/k⌋ + 1 frames. Returns the written paths.
pub fn export(ck_path: &Path, out: &Path, spec: &ExportSpec) -> Result<Vec<PathBuf>, CliError> {
    if spec.every == 0 {
        return Err(CliError::Usage("--every must be positive".into()));
    }
    let ck = load_checkpoint(ck_path)?;
    let cfg = checkpoint_config(&ck, ck_path)?;
    let (data, test) = cfg.build_dataset()?;
    let model = ck.model;
    let (mut state, target) = eval_sample(&model, &data, test.as_ref(), spec.sample)?;
    let target_px = match (&target, spec.with_target) {
        (EvalTarget::Image(t), true) => Some(image_rgba(t, model.spec.layout.alpha_index)?),
        _ => None,
    };
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let (h, w) = (state.height(), state.width());
    let mut rng = stream(spec.seed, "export");
    let mut paths = Vec::new();
    for t in 0..=spec.steps {
        if t > 0 {
            state = model.step(&state, &mut rng)?;
        }
        if t % spec.every != 0 {
            continue;
        }
        let px = render_rgba(&state, 0);
        let (img, width) = match &target_px {
            Some(tp) => (side_by_side(&px, tp, h, w), 2 * w),
            None => (px, w),
        };
        let path = out.join(format!("frame_{t:05}.png"));
        save_png(&rgba_tensor(&img, h, width), &path)?;
        paths.push(path);
    }
    Ok(paths)
}

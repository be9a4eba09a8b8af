//! Demo data: built-in glyphs as PNG, a digit corpus as IDX, and
//! ready-to-run configs.

use std::fs;
use std::path::{Path, PathBuf};

use nca_core::data::{builtin_glyph, digit_corpus, encode_idx_images, encode_idx_labels, save_png, DigitCorpusSpec, GLYPH_NAMES};
use nca_core::rng::stream;

use crate::error::{io_err, CliError};

pub const IDX_IMAGES: &str = "digits-images.idx3-ubyte";
pub const IDX_LABELS: &str = "digits-labels.idx1-ubyte";

const GROW: &str = "\
seed: 1
task: {kind: generative, targets: [heart], size: 24}
model:
  hidden_channels: 8
  update: {hidden: [64]}
train:
  iterations: 1000
  batch_size: 4
  t_min: 48
  t_max: 64
  pool: {enabled: true}
eval:
  train_window: [48, 64]
";

const REGEN: &str = "\
seed: 1
task: {kind: generative, targets: [heart], size: 24}
model:
  hidden_channels: 8
  update: {hidden: [64]}
train:
  iterations: 1000
  batch_size: 4
  t_min: 48
  t_max: 64
eval:
  train_window: [48, 64]
bench:
  variants:
    - name: pool
      set: {train.pool.enabled: true}
    - name: no_pool
      set: {train.pool.enabled: false}
";

const CONDITIONAL: &str = "\
seed: 1
task: {kind: generative, targets: [heart, ring, diamond], size: 24, conditional: true}
model:
  hidden_channels: 8
  update: {hidden: [64]}
train:
  iterations: 1500
  batch_size: 6
  t_min: 48
  t_max: 64
  pool: {enabled: true, capacity: 128, reseed_ratio: 0.8, mutate_prob: 0.25}
eval:
  train_window: [48, 64]
";

const VIDEO: &str = "\
seed: 1
task: {kind: video, frames: 4, sequences: 64, canvas: 20, digits: 2}
model:
  hidden_channels: 8
  update: {hidden: [64]}
train:
  iterations: 600
  batch_size: 4
  t_min: 8
  t_max: 12
  pool: {enabled: false}
eval:
  train_window: [8, 12]
";

fn classify(images: &Path, labels: &Path) -> String {
    format!(
        "\
seed: 1
task:
  kind: classification
  images: {}
  labels: {}
  classes: 10
  holdout: 200
model:
  hidden_channels: 8
  update: {{hidden: [64]}}
train:
  iterations: 10000
  batch_size: 8
  loss: pixel_mse
  t_min: 20
  t_max: 30
  pool: {{enabled: true, damage_prob: 0, mutate_prob: 0.25}}
eval:
  train_window: [20, 30]
",
        images.display(),
        labels.display()
    )
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Writes the demo tree under `out` and returns the written files.
pub fn demo_data(out: &Path, seed: u64) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    let glyphs = out.join("glyphs");
    let configs = out.join("configs");
    for d in [&glyphs, &configs] {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    for name in GLYPH_NAMES {
        let img = builtin_glyph(name, 24).expect("built-in glyph");
        let p = glyphs.join(format!("{name}.png"));
        save_png(&img, &p)?;
        written.push(p);
    }
    let (imgs, labels) = digit_corpus(&DigitCorpusSpec { scale: 2, ..DigitCorpusSpec::default() }, &mut stream(seed, "demo-data"));
    let img_path = out.join(IDX_IMAGES);
    let lbl_path = out.join(IDX_LABELS);
    write(&img_path, &encode_idx_images(&imgs)?)?;
    write(&lbl_path, &encode_idx_labels(&labels)?)?;
    written.extend([img_path.clone(), lbl_path.clone()]);
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let classify = classify(&abs(&img_path), &abs(&lbl_path));
    for (name, text) in [
        ("grow.yaml", GROW),
        ("regen.yaml", REGEN),
        ("conditional.yaml", CONDITIONAL),
        ("classify.yaml", classify.as_str()),
        ("video.yaml", VIDEO),
    ] {
        let p = configs.join(name);
        write(&p, text.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

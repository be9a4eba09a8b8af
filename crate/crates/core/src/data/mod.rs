//! Datasets, image and IDX files, checkpoints and run configuration.

mod checkpoint;
mod config;
mod digits;
mod glyphs;
mod idx;
mod png_io;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use config::{
    apply_override, config_reference, parse_config, parse_config_file, BenchSpec, ClassificationSource, EvalProtocol,
    ModelConfig, RunConfig, TaskSpec, Variant,
};
pub use digits::{
    bounce_step, digit_corpus, digit_sprite, gen_moving_digits, render_moving, DigitCorpusSpec, MovingDigitsSpec,
    Sprite, GLYPH_H, GLYPH_W,
};
pub use glyphs::{builtin_glyph, GLYPH_NAMES};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
pub use png_io::{load_png, quantize, save_png, to_interleaved_u8};

use std::path::Path;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Tensor(#[from] AutodiffError),
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

fn image_hw(t: &Tensor<f32>) -> Result<(usize, usize), DataError> {
    match t.shape() {
        &[_, h, w] => Ok((h, w)),
        s => Err(DataError::Format(format!("image must be [C,H,W], got {s:?}"))),
    }
}

fn check_same_size(images: &[Tensor<f32>]) -> Result<(usize, usize), DataError> {
    let first = images
        .first()
        .map(image_hw)
        .transpose()?
        .unwrap_or((0, 0));
    for t in images {
        if image_hw(t)? != first {
            return Err(DataError::Format("all samples must share spatial dimensions".into()));
        }
    }
    Ok(first)
}

/// Target images for growing patterns, one per condition class.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTargets {
    /// `[C_v, H, W]` each.
    pub targets: Vec<Tensor<f32>>,
    pub names: Vec<String>,
    /// Optional seed colours (colour channels only), one per target.
    pub seed_colors: Option<Vec<Vec<f32>>>,
}

impl ImageTargets {
    pub fn new(targets: Vec<Tensor<f32>>, names: Vec<String>) -> Result<Self, DataError> {
        if targets.is_empty() || targets.len() != names.len() {
            return Err(DataError::Format("need one name per target and at least one target".into()));
        }
        check_same_size(&targets)?;
        Ok(Self {
            targets,
            names,
            seed_colors: None,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        image_hw(&self.targets[0]).unwrap_or((0, 0))
    }

    /// Built-in glyphs by name (see [`GLYPH_NAMES`]) or PNG paths.
    pub fn load(sources: &[String], size: usize) -> Result<Self, DataError> {
        let mut targets = Vec::new();
        for s in sources {
            let t = match builtin_glyph(s, size) {
                Some(t) => t,
                None if s.ends_with(".png") => load_png(Path::new(s))?,
                None => {
                    return Err(DataError::Format(format!(
                        "unknown target `{s}`: not a built-in glyph ({}) or a .png path",
                        GLYPH_NAMES.join(", ")
                    )))
                }
            };
            targets.push(t);
        }
        Self::new(targets, sources.to_vec())
    }
}

/// Images with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImages {
    /// `[C, H, W]` each.
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledImages {
    pub fn new(images: Vec<Tensor<f32>>, labels: Vec<usize>, classes: usize) -> Result<Self, DataError> {
        if images.len() != labels.len() {
            return Err(DataError::Format(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Format(format!("label {bad} out of range for {classes} classes")));
        }
        check_same_size(&images)?;
        Ok(Self { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Splits off the last `n` samples.
    pub fn split_tail(mut self, n: usize) -> (Self, Self) {
        let at = self.images.len().saturating_sub(n);
        let images = self.images.split_off(at);
        let labels = self.labels.split_off(at);
        let classes = self.classes;
        (self, Self { images, labels, classes })
    }
}

/// Frame sequences (`[1, H, W]` frames) for next-sequence prediction with
/// `frames` frames stacked into the visible channels.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequences {
    pub sequences: Vec<Vec<Tensor<f32>>>,
    pub frames: usize,
}

impl VideoSequences {
    pub fn new(sequences: Vec<Vec<Tensor<f32>>>, frames: usize) -> Result<Self, DataError> {
        if frames == 0 {
            return Err(DataError::Format("need at least one frame per state".into()));
        }
        if sequences.is_empty() {
            return Err(DataError::Format("no sequences".into()));
        }
        for s in &sequences {
            if s.len() < frames + 1 {
                return Err(DataError::Format(format!(
                    "sequence of length {} is shorter than frames + 1 = {}",
                    s.len(),
                    frames + 1
                )));
            }
        }
        let all: Vec<Tensor<f32>> = sequences.iter().flatten().cloned().collect();
        check_same_size(&all)?;
        Ok(Self { sequences, frames })
    }

    /// Frames `offset..offset + frames` of `seq` stacked as `[frames, H, W]`.
    pub fn window(&self, seq: usize, offset: usize) -> Tensor<f32> {
        let s = &self.sequences[seq];
        let (h, w) = image_hw(&s[0]).unwrap_or((0, 0));
        let mut data = Vec::with_capacity(self.frames * h * w);
        for f in &s[offset..offset + self.frames] {
            data.extend_from_slice(f.data());
        }
        Tensor::new(&[self.frames, h, w], data).expect("window shape")
    }

    pub fn size(&self) -> (usize, usize) {
        image_hw(&self.sequences[0][0]).unwrap_or((0, 0))
    }
}

/// Any of the task datasets.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    ImageTargets(ImageTargets),
    LabeledImages(LabeledImages),
    VideoSequences(VideoSequences),
}

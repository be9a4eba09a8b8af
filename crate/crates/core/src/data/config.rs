use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};

use super::{
    digit_corpus, gen_moving_digits, load_idx, DataError, Dataset, DigitCorpusSpec, ImageTargets, LabeledImages,
    MovingDigitsSpec, VideoSequences,
};
use crate::autodiff::Padding;
use crate::nca::{
    Activation, AliveNeighborhood, ChannelLayout, ModelSpec, PerceptionSpec, UpdateSpec,
};
use crate::rng::stream;
use crate::training::{LossKind, TrainSpec};

fn default_size() -> usize {
    24
}
fn default_targets() -> Vec<String> {
    vec!["heart".into()]
}
fn default_count() -> usize {
    2000
}
fn default_digit_size() -> usize {
    16
}
fn default_classes() -> usize {
    10
}
fn default_holdout() -> usize {
    200
}
fn default_jitter() -> usize {
    2
}
fn default_noise() -> f64 {
    0.1
}
fn default_scale() -> usize {
    1
}
fn default_frames() -> usize {
    4
}
fn default_sequences() -> usize {
    64
}
fn default_length() -> usize {
    12
}
fn default_canvas() -> usize {
    20
}
fn default_digits() -> usize {
    2
}
fn default_speed() -> i64 {
    1
}

/// What is trained and on which data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Grow target images from a single seed cell.
    Generative {
        /// Built-in glyph names or `.png` paths.
        #[serde(default = "default_targets")]
        targets: Vec<String>,
        /// Canvas size for built-in glyphs.
        #[serde(default = "default_size")]
        size: usize,
        /// One condition channel per target (one-hot).
        #[serde(default)]
        conditional: bool,
    },
    /// Classify the image held in the fixed input channels.
    Classification {
        /// IDX image file; the built-in digit corpus is used when absent.
        #[serde(default)]
        images: Option<String>,
        #[serde(default)]
        labels: Option<String>,
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default = "default_digit_size")]
        size: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_jitter")]
        jitter: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_scale")]
        scale: usize,
        /// Trailing samples held out for evaluation.
        #[serde(default = "default_holdout")]
        holdout: usize,
    },
    /// Predict the next `frames` frames of moving digits.
    Video {
        #[serde(default = "default_frames")]
        frames: usize,
        #[serde(default = "default_sequences")]
        sequences: usize,
        #[serde(default = "default_length")]
        length: usize,
        #[serde(default = "default_canvas")]
        canvas: usize,
        #[serde(default = "default_digits")]
        digits: usize,
        #[serde(default = "default_speed")]
        max_speed: i64,
        #[serde(default = "default_scale")]
        scale: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassificationSource {
    Builtin,
    Idx,
}

fn default_hidden_channels() -> usize {
    12
}
fn default_fire_rate() -> f64 {
    0.5
}
fn default_tau() -> f64 {
    0.1
}
fn default_perception() -> PerceptionSpec {
    PerceptionSpec::conv3x3()
}

/// Model architecture; the channel layout follows from the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden_channels")]
    pub hidden_channels: usize,
    #[serde(default = "default_perception")]
    pub perception: PerceptionSpec,
    #[serde(default)]
    pub update: UpdateSpec,
    #[serde(default = "default_fire_rate")]
    pub fire_rate: f64,
    #[serde(default)]
    pub living_mask: bool,
    #[serde(default = "default_tau")]
    pub alpha_threshold: f64,
    #[serde(default)]
    pub alive_neighborhood: AliveNeighborhood,
    #[serde(default)]
    pub padding: Padding,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_channels: default_hidden_channels(),
            perception: default_perception(),
            update: UpdateSpec {
                hidden: vec![128],
                activation: Activation::Relu,
            },
            fire_rate: default_fire_rate(),
            living_mask: false,
            alpha_threshold: default_tau(),
            alive_neighborhood: AliveNeighborhood::default(),
            padding: Padding::Zeros,
        }
    }
}

fn default_window() -> [usize; 2] {
    [64, 96]
}
fn default_pre() -> usize {
    149
}
fn default_final() -> usize {
    449
}
fn default_radius() -> f64 {
    0.25
}

/// Staged regeneration protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    /// Inclusive step range averaged into the first stage metric.
    #[serde(default = "default_window")]
    pub train_window: [usize; 2],
    /// Step at which the perturbation is applied.
    #[serde(default = "default_pre")]
    pub pre_perturb_step: usize,
    #[serde(default = "default_final")]
    pub final_step: usize,
    /// Damage centre `[x, y]` in cells; the grid centre when absent.
    #[serde(default)]
    pub damage_center: Option<[f64; 2]>,
    /// Damage radius as a fraction of the grid height.
    #[serde(default = "default_radius")]
    pub damage_radius: f64,
    /// Dataset sample evaluated (target index or held-out image index).
    #[serde(default)]
    pub sample: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            train_window: default_window(),
            pre_perturb_step: default_pre(),
            final_step: default_final(),
            damage_center: None,
            damage_radius: default_radius(),
            sample: 0,
        }
    }
}

/// A named model variant for the regeneration benchmark: dotted overrides
/// applied on top of the base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub set: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub variants: Vec<Variant>,
}

/// A complete run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub task: TaskSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub eval: EvalProtocol,
    #[serde(default)]
    pub bench: Option<BenchSpec>,
}

fn config_err(path: &str, message: impl Into<String>) -> DataError {
    DataError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Sets `key` (dotted path) to `raw` parsed as a YAML scalar or flow value.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<(), DataError> {
    let value: Value = serde_yaml::from_str(raw).map_err(|e| config_err(key, format!("bad override value: {e}")))?;
    apply_value(doc, key, value)
}

fn apply_value(doc: &mut Value, key: &str, value: Value) -> Result<(), DataError> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_err(key, "empty key segment"));
    }
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if cur.is_null() {
            *cur = Value::Mapping(Mapping::new());
        }
        let map = cur
            .as_mapping_mut()
            .ok_or_else(|| config_err(&parts[..i].join("."), "not a mapping, cannot set a nested key"))?;
        let k = Value::String(part.to_string());
        if i + 1 == parts.len() {
            map.insert(k, value);
            return Ok(());
        }
        cur = map.entry(k).or_insert(Value::Null);
    }
    Ok(())
}

/// Parses YAML text, applies `key=value` overrides, then validates.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<RunConfig, DataError> {
    let mut doc: Value = serde_yaml::from_str(text).map_err(|e| config_err("<document>", e.to_string()))?;
    if doc.is_null() {
        doc = Value::Mapping(Mapping::new());
    }
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    from_value(doc)
}

fn from_value(doc: Value) -> Result<RunConfig, DataError> {
    let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let mut path = e.path().to_string();
        let message = e.inner().to_string();
        if path == "." && message.contains("`task`") {
            path = "task".into();
        }
        config_err(&path, message)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_file(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_config(&text, overrides)
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Mapping(m) if !m.is_empty() => {
            for (k, val) in m {
                let k = k.as_str().unwrap_or_default();
                let key = if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
                flatten(&key, val, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        _ => {
            let s = serde_json::to_string(v).unwrap_or_default();
            out.push((prefix.to_string(), s));
        }
    }
}

/// Every config key with its default value, derived from the schema.
pub fn config_reference() -> Vec<(String, String)> {
    let mut out = vec![("seed".to_string(), "0".to_string())];
    for kind in ["generative", "classification", "video"] {
        let mut m = Mapping::new();
        m.insert("kind".into(), kind.into());
        let task: TaskSpec = serde_yaml::from_value(Value::Mapping(m)).expect("task defaults");
        let v = serde_yaml::to_value(&task).expect("serializable");
        flatten("task", &v, &mut out);
    }
    for (name, v) in [
        ("model", serde_yaml::to_value(ModelConfig::default())),
        ("train", serde_yaml::to_value(TrainSpec::default())),
        ("eval", serde_yaml::to_value(EvalProtocol::default())),
    ] {
        flatten(name, &v.expect("serializable"), &mut out);
    }
    out.push(("bench.variants".into(), "[]  (list of {name, set: {dotted.key: value}})".into()));
    out
}

impl RunConfig {
    pub fn new(task: TaskSpec) -> Self {
        Self {
            seed: 0,
            task,
            model: ModelConfig::default(),
            train: TrainSpec::default(),
            eval: EvalProtocol::default(),
            bench: None,
        }
    }

    /// YAML with every default spelled out.
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    /// Re-parses after dotted overrides, as `parse_config` would.
    pub fn with_overrides(&self, set: &BTreeMap<String, Value>) -> Result<Self, DataError> {
        let mut doc = serde_yaml::to_value(self).map_err(|e| config_err("<document>", e.to_string()))?;
        for (k, v) in set {
            apply_value(&mut doc, k, v.clone())?;
        }
        from_value(doc)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.train
            .validate()
            .map_err(|(k, m)| config_err(&format!("train.{k}"), m))?;
        if !(self.model.fire_rate > 0.0 && self.model.fire_rate <= 1.0) {
            return Err(config_err("model.fire_rate", "must lie in (0, 1]"));
        }
        let loss = self.train.loss;
        match &self.task {
            TaskSpec::Generative { targets, size, .. } => {
                if targets.is_empty() {
                    return Err(config_err("task.targets", "need at least one target"));
                }
                if *size < 3 {
                    return Err(config_err("task.size", "must be at least 3"));
                }
                if !matches!(loss, LossKind::Mse | LossKind::L1) {
                    return Err(config_err("train.loss", "generative tasks use mse or l1"));
                }
            }
            TaskSpec::Classification {
                images,
                labels,
                classes,
                count,
                holdout,
                ..
            } => {
                if images.is_some() != labels.is_some() {
                    return Err(config_err("task.labels", "IDX corpora need both `images` and `labels`"));
                }
                if *classes < 2 || *classes > 10 {
                    return Err(config_err("task.classes", "must lie in [2, 10]"));
                }
                if images.is_none() && holdout >= count {
                    return Err(config_err("task.holdout", "must be smaller than `count`"));
                }
                if !matches!(loss, LossKind::PixelMse | LossKind::PixelCe) {
                    return Err(config_err("train.loss", "classification uses pixel_mse or pixel_ce"));
                }
            }
            TaskSpec::Video { frames, length, .. } => {
                if *frames == 0 {
                    return Err(config_err("task.frames", "must be positive"));
                }
                if *length < frames + 1 {
                    return Err(config_err("task.length", "sequences need at least frames + 1 frames"));
                }
                if !matches!(loss, LossKind::Mse | LossKind::L1) {
                    return Err(config_err("train.loss", "video tasks use mse or l1"));
                }
            }
        }
        if self.eval.final_step <= self.eval.pre_perturb_step {
            return Err(config_err("eval.final_step", "must exceed pre_perturb_step"));
        }
        if self.eval.train_window[0] > self.eval.train_window[1] {
            return Err(config_err("eval.train_window", "start exceeds end"));
        }
        Ok(())
    }

    /// Training data plus held-out samples (classification only).
    pub fn build_dataset(&self) -> Result<(Dataset, Option<LabeledImages>), DataError> {
        let mut rng = stream(self.seed, "data");
        match &self.task {
            TaskSpec::Generative { targets, size, .. } => {
                Ok((Dataset::ImageTargets(ImageTargets::load(targets, *size)?), None))
            }
            TaskSpec::Classification {
                images,
                labels,
                count,
                size,
                classes,
                jitter,
                noise,
                scale,
                holdout,
            } => {
                let all = match (images, labels) {
                    (Some(i), Some(l)) => load_idx(Path::new(i), Path::new(l))?,
                    _ => {
                        let spec = DigitCorpusSpec {
                            count: *count,
                            size: *size,
                            classes: *classes,
                            scale: *scale,
                            jitter: *jitter,
                            noise: *noise as f32,
                        };
                        let (imgs, ls) = digit_corpus(&spec, &mut rng);
                        LabeledImages::new(imgs, ls, *classes)?
                    }
                };
                let classes = all.classes.max(*classes);
                let all = LabeledImages { classes, ..all };
                let (train, test) = all.split_tail(*holdout);
                if train.is_empty() {
                    return Err(config_err("task.holdout", "no training images left"));
                }
                Ok((Dataset::LabeledImages(train), Some(test)))
            }
            TaskSpec::Video {
                frames,
                sequences,
                length,
                canvas,
                digits,
                max_speed,
                scale,
            } => {
                let spec = MovingDigitsSpec {
                    sequences: *sequences,
                    length: *length,
                    canvas: *canvas,
                    digits: *digits,
                    max_speed: *max_speed,
                    scale: *scale,
                };
                let seqs = gen_moving_digits(&spec, &mut rng);
                Ok((Dataset::VideoSequences(VideoSequences::new(seqs, *frames)?), None))
            }
        }
    }

    /// Channel layout implied by the task and dataset.
    pub fn layout(&self, data: &Dataset) -> ChannelLayout {
        let hidden = self.model.hidden_channels;
        match data {
            Dataset::ImageTargets(t) => {
                let vis = t.targets[0].shape()[0];
                let conditional = matches!(self.task, TaskSpec::Generative { conditional: true, .. });
                ChannelLayout {
                    visible: vis,
                    hidden,
                    condition: if conditional { t.targets.len() } else { 0 },
                    alpha_index: (vis == 4).then_some(3),
                    ..ChannelLayout::default()
                }
            }
            Dataset::LabeledImages(l) => ChannelLayout {
                fixed_input: l.images.first().map_or(1, |i| i.shape()[0]),
                visible: 0,
                hidden,
                classes: l.classes,
                condition: 0,
                alpha_index: None,
            },
            Dataset::VideoSequences(v) => ChannelLayout {
                visible: v.frames,
                hidden,
                alpha_index: None,
                ..ChannelLayout::default()
            },
        }
    }

    pub fn model_spec(&self, layout: ChannelLayout) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            layout,
            perception: m.perception.clone(),
            update: m.update.clone(),
            fire_rate: m.fire_rate,
            living_mask: m.living_mask,
            alpha_threshold: m.alpha_threshold,
            alive_neighborhood: m.alive_neighborhood,
            padding: m.padding,
        }
    }

    pub fn classification_source(&self) -> Option<ClassificationSource> {
        match &self.task {
            TaskSpec::Classification { images: Some(_), .. } => Some(ClassificationSource::Idx),
            TaskSpec::Classification { .. } => Some(ClassificationSource::Builtin),
            _ => None,
        }
    }
}

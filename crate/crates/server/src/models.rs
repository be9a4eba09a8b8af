use std::sync::Arc;

use nca_core::data::{load_checkpoint, Dataset, LabeledImages, RunConfig, TaskSpec};
use nca_core::nca::NcaModel;
use nca_core::wire::ModelInfo;

use crate::config::ModelEntry;
use crate::ServerError;

/// A frozen model with the dataset it was trained on (for seeds and
/// metric targets).
pub struct LoadedModel {
    pub info: ModelInfo,
    pub model: Arc<NcaModel<f32>>,
    pub data: Option<Dataset>,
    pub test: Option<LabeledImages>,
}

impl LoadedModel {
    pub fn load(entry: &ModelEntry) -> Result<Self, ServerError> {
        let ck = load_checkpoint(&entry.checkpoint)
            .map_err(|e| ServerError::Config(format!("model {}: {e}", entry.id)))?;
        let cfg: Option<RunConfig> = ck.config.clone().and_then(|v| serde_json::from_value(v).ok());
        let (data, test) = match &cfg {
            Some(c) => {
                let (d, t) = c
                    .build_dataset()
                    .map_err(|e| ServerError::Config(format!("model {}: {e}", entry.id)))?;
                (Some(d), t)
            }
            None => (None, None),
        };
        let task = match cfg.as_ref().map(|c| &c.task) {
            Some(TaskSpec::Generative { .. }) => "generative",
            Some(TaskSpec::Classification { .. }) => "classification",
            Some(TaskSpec::Video { .. }) => "video",
            None => "unknown",
        };
        let (height, width) = match &data {
            Some(Dataset::ImageTargets(t)) => t.size(),
            Some(Dataset::LabeledImages(l)) => {
                let s = l.images[0].shape();
                (s[1], s[2])
            }
            Some(Dataset::VideoSequences(v)) => v.size(),
            None => (32, 32),
        };
        Ok(Self {
            info: ModelInfo {
                id: entry.id.clone(),
                task: task.into(),
                layout: ck.model.spec.layout.clone(),
                class_names: ck.class_names.clone(),
                params: ck.model.parameter_count(),
                height,
                width,
            },
            model: Arc::new(ck.model),
            data,
            test,
        })
    }
}

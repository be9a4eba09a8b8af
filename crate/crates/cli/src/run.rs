//! Training runs: outputs, checkpoints and resume.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use nca_core::data::{load_checkpoint, save_checkpoint, Checkpoint, Dataset, LabeledImages, RunConfig};
use nca_core::nca::NcaModel;
use nca_core::rng::stream;
use nca_core::training::{log_header, IterationRecord, TrainError, Trainer};

use crate::error::{io_err, CliError};

pub const MODEL_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "metrics.tsv";
pub const CONFIG_FILE: &str = "config.yaml";

/// Dataset, held-out samples and a freshly initialised model for `cfg`.
pub fn prepare(cfg: &RunConfig) -> Result<(Dataset, Option<LabeledImages>, NcaModel<f32>), CliError> {
    let (data, test) = cfg.build_dataset()?;
    let spec = cfg.model_spec(cfg.layout(&data));
    let model = NcaModel::init(spec, &mut stream(cfg.seed, "init")).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((data, test, model))
}

pub fn class_names(data: &Dataset) -> Vec<String> {
    match data {
        Dataset::ImageTargets(t) => t.names.clone(),
        Dataset::LabeledImages(l) => (0..l.classes).map(|c| c.to_string()).collect(),
        Dataset::VideoSequences(_) => Vec::new(),
    }
}

pub struct TrainOutcome {
    pub model: NcaModel<f32>,
    pub records: Vec<IterationRecord>,
    pub checkpoint: PathBuf,
    pub data: Dataset,
    pub test: Option<LabeledImages>,
}

fn snapshot(trainer: &Trainer, cfg: &RunConfig, names: &[String]) -> Checkpoint {
    let mut ck = trainer.checkpoint();
    ck.config = serde_json::to_value(cfg).ok();
    ck.class_names = names.to_vec();
    ck
}

fn write_dump(out: &Path, err: &TrainError) -> Result<(), CliError> {
    let TrainError::Diverged(d) = err else { return Ok(()) };
    let grads = d.grads.as_ref().map(|gs| {
        gs.iter()
            .map(|g| serde_json::json!({ "shape": g.shape(), "values": g.data() }))
            .collect::<Vec<_>>()
    });
    let dump = serde_json::json!({
        "iteration": d.iteration,
        "message": d.message,
        "params": d.params.iter().map(|p| serde_json::json!({ "shape": p.shape(), "values": p.data() })).collect::<Vec<_>>(),
        "grads": grads,
        "batch": { "shape": d.batch.shape(), "values": d.batch.data() },
    });
    let path = out.join("divergence.json");
    let text = serde_json::to_string(&dump).map_err(|e| CliError::Failed(e.to_string()))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

/// Trains per `cfg` into `out` (resolved config, metrics log, periodic and
/// final checkpoints). With `resume`, continues from a trainer checkpoint.
pub fn train(
    cfg: &RunConfig,
    out: &Path,
    resume: Option<&Path>,
    mut on_record: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome, CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_yaml()).map_err(|e| io_err(&cfg_path, e))?;
    let (data, test, model) = prepare(cfg)?;
    let names = class_names(&data);
    let mut trainer = match resume {
        Some(p) => {
            let ck = load_checkpoint(p).map_err(|e| CliError::Usage(e.to_string()))?;
            if ck.model.spec != model.spec {
                return Err(CliError::Usage(format!(
                    "{}: checkpoint model does not match the configured model",
                    p.display()
                )));
            }
            Trainer::resume(cfg.train.clone(), data.clone(), ck)?
        }
        None => Trainer::new(cfg.train.clone(), model, data.clone(), stream(cfg.seed, "train"))?,
    };
    let log_path = out.join(LOG_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    if resume.is_none() {
        writeln!(log, "{}", log_header()).map_err(|e| io_err(&log_path, e))?;
    }
    let mut records = Vec::new();
    let every = cfg.train.checkpoint_every as u64;
    let total = cfg.train.iterations as u64;
    let mut failure: Option<CliError> = None;
    let result = trainer.run_until(total, |rec, t| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = writeln!(log, "{}", rec.to_tsv()) {
            failure = Some(io_err(&log_path, e));
        }
        if every > 0 && rec.iteration % every == 0 && rec.iteration < total {
            let p = out.join(format!("checkpoint-{:06}.ckpt", rec.iteration));
            if let Err(e) = save_checkpoint(&snapshot(t, cfg, &names), &p) {
                failure = Some(e.into());
            }
        }
        on_record(rec);
        records.push(rec.clone());
    });
    if let Err(e) = result {
        write_dump(out, &e)?;
        let dump_ck = out.join("divergence.ckpt");
        save_checkpoint(&snapshot(&trainer, cfg, &names), &dump_ck)?;
        return Err(e.into());
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let path = out.join(MODEL_FILE);
    save_checkpoint(&snapshot(&trainer, cfg, &names), &path)?;
    Ok(TrainOutcome {
        model: trainer.model,
        records,
        checkpoint: path,
        data,
        test,
    })
}

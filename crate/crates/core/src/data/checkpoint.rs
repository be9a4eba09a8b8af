//! Binary checkpoints: 8-byte magic, little-endian `u32` header length, a
//! JSON header, then every array as little-endian `f32`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::autodiff::Tensor;
use crate::nca::{CellState, ModelSpec, NcaModel};
use crate::rng::NcaRng;
use crate::training::{AdamWState, PoolEntry, SamplePool, TargetRef};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"NCAF\0\0\0\x01";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to serve a model or resume its training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: NcaModel<f32>,
    pub iteration: u64,
    pub optimizer: Option<AdamWState<f32>>,
    pub rng: Option<NcaRng>,
    pub pool: Option<SamplePool>,
    /// Resolved run configuration, when written by a trainer.
    pub config: Option<serde_json::Value>,
    /// Trainer bookkeeping that must survive a resume.
    pub extra: Option<serde_json::Value>,
    pub class_names: Vec<String>,
}

impl Checkpoint {
    pub fn from_model(model: NcaModel<f32>) -> Self {
        Self {
            model,
            iteration: 0,
            optimizer: None,
            rng: None,
            pool: None,
            config: None,
            extra: None,
            class_names: Vec::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PoolEntryHeader {
    target: TargetRef,
    step_index: u64,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PoolHeader {
    capacity: usize,
    entries: Vec<PoolEntryHeader>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelSpec,
    params: Vec<ParamHeader>,
    iteration: u64,
    /// Adam step counter; moment buffers follow the parameters when present.
    optimizer_step: Option<u64>,
    rng: Option<NcaRng>,
    pool: Option<PoolHeader>,
    config: Option<serde_json::Value>,
    extra: Option<serde_json::Value>,
    class_names: Vec<String>,
    payload_floats: usize,
}

fn push(payload: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), DataError> {
    let mut payload = Vec::new();
    let names = ck.model.spec.param_shapes();
    for p in &ck.model.params {
        push(&mut payload, p);
    }
    if let Some(opt) = &ck.optimizer {
        for t in opt.m.iter().chain(&opt.v) {
            push(&mut payload, t);
        }
    }
    let pool = ck.pool.as_ref().map(|pool| PoolHeader {
        capacity: pool.capacity(),
        entries: pool
            .entries()
            .map(|e| {
                push(&mut payload, &e.state.grid);
                PoolEntryHeader {
                    target: e.target,
                    step_index: e.state.step_index,
                    shape: e.state.grid.shape().to_vec(),
                }
            })
            .collect(),
    });
    let header = Header {
        format_version: FORMAT_VERSION,
        model: ck.model.spec.clone(),
        params: names
            .into_iter()
            .map(|(name, shape)| ParamHeader { name, shape })
            .collect(),
        iteration: ck.iteration,
        optimizer_step: ck.optimizer.as_ref().map(|o| o.t),
        rng: ck.rng.clone(),
        pool,
        config: ck.config.clone(),
        extra: ck.extra.clone(),
        class_names: ck.class_names.clone(),
        payload_floats: payload.len() / 4,
    };
    let json = serde_json::to_vec(&header).map_err(|e| DataError::Format(e.to_string()))?;
    let mut bytes = Vec::with_capacity(12 + json.len() + payload.len());
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&payload);

    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        DataError::io(path, e)
    })
}

struct Floats<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Floats<'_> {
    fn take(&mut self, shape: &[usize]) -> Result<Tensor<f32>, DataError> {
        let n: usize = shape.iter().product();
        let end = self.at + 4 * n;
        let chunk = self
            .bytes
            .get(self.at..end)
            .ok_or_else(|| DataError::Corrupt("payload shorter than header declares".into()))?;
        self.at = end;
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Tensor::new(shape, data)?)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 12 || bytes[..4] != CHECKPOINT_MAGIC[..4] {
        return Err(DataError::Format(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != FORMAT_VERSION {
        return Err(DataError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let hjson = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| DataError::Corrupt("header truncated".into()))?;
    let header: Header =
        serde_json::from_slice(hjson).map_err(|e| DataError::Corrupt(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(DataError::Version {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let payload = &bytes[12 + hlen..];
    if payload.len() != header.payload_floats * 4 {
        return Err(DataError::Corrupt(format!(
            "payload has {} bytes, header declares {}",
            payload.len(),
            header.payload_floats * 4
        )));
    }
    let mut r = Floats { bytes: payload, at: 0 };
    let spec = header.model;
    let expected = spec.param_shapes();
    if expected.len() != header.params.len()
        || expected
            .iter()
            .zip(&header.params)
            .any(|((n, s), p)| *n != p.name || *s != p.shape)
    {
        return Err(DataError::Corrupt("parameter table does not match the model spec".into()));
    }
    let params = header
        .params
        .iter()
        .map(|p| r.take(&p.shape))
        .collect::<Result<Vec<_>, _>>()?;
    let optimizer = match header.optimizer_step {
        Some(t) => {
            let m = header.params.iter().map(|p| r.take(&p.shape)).collect::<Result<Vec<_>, _>>()?;
            let v = header.params.iter().map(|p| r.take(&p.shape)).collect::<Result<Vec<_>, _>>()?;
            Some(AdamWState { m, v, t })
        }
        None => None,
    };
    let layout = spec.layout.clone();
    let pool = match header.pool {
        Some(ph) => {
            let mut pool = SamplePool::new(ph.capacity);
            for e in ph.entries {
                let grid = r.take(&e.shape)?;
                let mut state = CellState::new(layout.clone(), grid).map_err(|e| DataError::Corrupt(e.to_string()))?;
                state.step_index = e.step_index;
                pool.commit(PoolEntry { state, target: e.target });
            }
            Some(pool)
        }
        None => None,
    };
    let model = NcaModel::from_params(spec, params).map_err(|e| DataError::Corrupt(e.to_string()))?;
    Ok(Checkpoint {
        model,
        iteration: header.iteration,
        optimizer,
        rng: header.rng,
        pool,
        config: header.config,
        extra: header.extra,
        class_names: header.class_names,
    })
}

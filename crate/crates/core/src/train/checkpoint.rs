//! Single-file safetensors checkpoints.
//!
//! Tensors are stored under `param/<key>.<name>`, `opt_g/{m,v}/<key>.<name>`
//! and `opt_d/{m,v}/<key>.<name>`. A JSON [`CheckpointMeta`] lives in the
//! archive metadata under [`META_KEY`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{StepRecord, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::nn::Duncan;

pub const CHECKPOINT_FORMAT: &str = "duncan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_KEY: &str = "duncan";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub config: TrainConfig,
    pub step: u64,
    pub opt_g_steps: u64,
    pub opt_d_steps: u64,
    pub loss_tail: Vec<StepRecord>,
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Checkpoint(format!("unsupported parameter dtype {other:?}"))),
    }
}

fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Checkpoint(format!("unsupported parameter dtype {other}"))),
    }
}

fn model_tensors(model: &Duncan) -> Result<BTreeMap<String, Tensor>> {
    let mut out = BTreeMap::new();
    for (key, store) in model.stores() {
        for (name, t) in store.tensors()? {
            out.insert(format!("param/{key}.{name}"), t);
        }
    }
    Ok(out)
}

/// Write `state` atomically to `path`.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let (opt_g, opt_d) = state.optimizers();
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dtype: dtype_name(state.model.dtype())?.into(),
        config: state.config.clone(),
        step: state.step,
        opt_g_steps: opt_g.steps(),
        opt_d_steps: opt_d.steps(),
        loss_tail: state.history.clone(),
    };
    let mut tensors = model_tensors(&state.model)?;
    for (prefix, opt) in [("opt_g", opt_g), ("opt_d", opt_d)] {
        for (name, t) in opt.moments()? {
            tensors.insert(format!("{prefix}/{name}"), t);
        }
    }
    let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&meta)?)]);
    let bytes = safetensors::serialize(tensors, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    crate::io_util::write_atomic(path, &bytes)
}

struct Archive {
    meta: CheckpointMeta,
    tensors: HashMap<String, Tensor>,
}

fn read_archive(path: &Path) -> Result<Archive> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let raw = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| corrupt("no checkpoint metadata".into()))?;
    let meta: CheckpointMeta = serde_json::from_str(raw).map_err(|e| corrupt(format!("bad metadata: {e}")))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(corrupt(format!("unknown format {}", meta.format)));
    }
    if meta.version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "version {} is not the supported version {CHECKPOINT_VERSION}",
            meta.version
        )));
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu).map_err(|e| corrupt(e.to_string()))?;
    Ok(Archive { meta, tensors })
}

fn section<'a>(tensors: impl IntoIterator<Item = (&'a String, &'a Tensor)>, prefix: &str) -> BTreeMap<String, Tensor> {
    tensors
        .into_iter()
        .filter_map(|(k, t)| k.strip_prefix(prefix).map(|rest| (rest.to_string(), t.clone())))
        .collect()
}

fn assign_model(model: &Duncan, tensors: &HashMap<String, Tensor>) -> Result<()> {
    let params = section(tensors, "param/");
    let mut seen = 0;
    for (key, store) in model.stores() {
        let mine = section(&params, &format!("{key}."));
        seen += mine.len();
        store.assign(&mine)?;
    }
    if seen != params.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameter tensors belong to no sub-network",
            params.len() - seen
        )));
    }
    Ok(())
}

/// Restore a full training state. When `expected` is given, its network,
/// extractor and seed must match the snapshot; its remaining fields (step
/// budget, checkpoint cadence) replace the stored ones.
pub fn load_checkpoint(path: &Path, expected: Option<&TrainConfig>) -> Result<TrainState> {
    let Archive { meta, tensors } = read_archive(path)?;
    let mut config = meta.config.clone();
    if let Some(want) = expected {
        if want.effective_network() != config.effective_network() {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different network configuration",
                path.display()
            )));
        }
        if want.extractor != config.extractor || want.seed != config.seed {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different extractor or seed",
                path.display()
            )));
        }
        config = want.clone();
    }
    let mut state = TrainState::with_dtype(&config, parse_dtype(&meta.dtype)?)?;
    assign_model(&state.model, &tensors)?;
    let (opt_g, opt_d) = state.optimizers_mut();
    opt_g.restore(meta.opt_g_steps, &section(&tensors, "opt_g/"))?;
    opt_d.restore(meta.opt_d_steps, &section(&tensors, "opt_d/"))?;
    state.step = meta.step;
    state.history = meta.loss_tail;
    Ok(state)
}

/// Networks only, for inference.
pub fn load_model(path: &Path) -> Result<(Duncan, CheckpointMeta)> {
    let Archive { meta, tensors } = read_archive(path)?;
    let model = Duncan::new(
        &meta.config.effective_network(),
        crate::motion::derive_seed(meta.config.seed, "model", 0),
        parse_dtype(&meta.dtype)?,
        &Device::Cpu,
    )?;
    assign_model(&model, &tensors)?;
    Ok((model, meta))
}

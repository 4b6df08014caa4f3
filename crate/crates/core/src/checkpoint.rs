//! Safetensors checkpoints: parameters, batch-norm statistics, Adam moments,
//! and a JSON header with the config and metric history.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{LogclError, Result};
use crate::model::LogCl;
use crate::train::{restore_snapshot, Adam, EpochRecord, TrainState};

const FORMAT: &str = "logcl-checkpoint-1";
const META_KEY: &str = "logcl";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: TrainConfig,
    num_entities: usize,
    num_relations: usize,
    epoch: usize,
    best_mrr: Option<f64>,
    adam_step: u64,
    history: Vec<EpochRecord>,
}

fn bytes_of(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|x| x.to_le_bytes()).collect()),
        _ => (
            Dtype::F32,
            flat.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().flat_map(|x| x.to_le_bytes()).collect(),
        ),
    })
}

fn tensor_of(view: &TensorView<'_>) -> Result<Tensor> {
    let data = view.data();
    let shape = view.shape().to_vec();
    let t = match view.dtype() {
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => return Err(LogclError::Checkpoint(format!("unsupported dtype {other:?}"))),
    };
    Ok(t)
}

/// Serialized checkpoint bytes. Identical states give identical bytes.
pub fn to_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let model = &state.model;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, var) in model.store.params() {
        tensors.insert(format!("param.{name}"), var.as_tensor().clone());
    }
    for (name, t) in model.decoder.buffers("decoder") {
        tensors.insert(format!("buffer.{name}"), t);
    }
    for (name, t) in &state.adam.m {
        tensors.insert(format!("adam.m.{name}"), t.clone());
    }
    for (name, t) in &state.adam.v {
        tensors.insert(format!("adam.v.{name}"), t.clone());
    }
    let raw: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, t)| {
            let (dtype, bytes) = bytes_of(t)?;
            Ok((k.clone(), dtype, t.dims().to_vec(), bytes))
        })
        .collect::<Result<_>>()?;
    let views = raw
        .iter()
        .map(|(k, dtype, shape, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (k.clone(), v))
                .map_err(|e| LogclError::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let header = Header {
        format: FORMAT.into(),
        config: model.config.clone(),
        num_entities: model.num_entities(),
        num_relations: model.num_relations(),
        epoch: state.epoch,
        best_mrr: state.best_mrr,
        adam_step: state.adam.step,
        history: state.history.clone(),
    };
    // a single metadata entry keeps the header byte order deterministic
    let meta = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&header).expect("header serializes"))]);
    safetensors::serialize(views, Some(meta)).map_err(|e| LogclError::Checkpoint(e.to_string()))
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = to_bytes(state)?;
    std::fs::write(path, bytes).map_err(|e| LogclError::io(path, e))
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
    let bad = |e: safetensors::SafeTensorError| LogclError::Checkpoint(e.to_string());
    let (_, metadata) = SafeTensors::read_metadata(bytes).map_err(bad)?;
    let header_json = metadata
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| LogclError::Checkpoint("missing header".into()))?;
    let header: Header =
        serde_json::from_str(header_json).map_err(|e| LogclError::Checkpoint(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(LogclError::Checkpoint(format!("unknown format `{}`", header.format)));
    }
    let model = LogCl::new(&header.config, header.num_entities, header.num_relations)?;
    let archive = SafeTensors::deserialize(bytes).map_err(bad)?;
    let mut snapshot = Vec::new();
    let mut adam = Adam::new(header.config.lr);
    adam.step = header.adam_step;
    for (name, view) in archive.tensors() {
        let t = tensor_of(&view)?.to_dtype(model.dtype())?;
        if let Some(p) = name.strip_prefix("param.").or_else(|| name.strip_prefix("buffer.")) {
            snapshot.push((p.to_string(), t));
        } else if let Some(p) = name.strip_prefix("adam.m.") {
            adam.m.insert(p.to_string(), t);
        } else if let Some(p) = name.strip_prefix("adam.v.") {
            adam.v.insert(p.to_string(), t);
        } else {
            return Err(LogclError::Checkpoint(format!("unexpected tensor `{name}`")));
        }
    }
    let expected = model.store.params().len();
    let found = snapshot.iter().filter(|(n, _)| model.store.get(n).is_some()).count();
    if found != expected {
        return Err(LogclError::Checkpoint(format!("{found} of {expected} parameters present")));
    }
    restore_snapshot(&model, &snapshot)?;
    Ok(TrainState {
        model,
        adam,
        epoch: header.epoch,
        best_mrr: header.best_mrr,
        history: header.history,
    })
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| LogclError::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Precision;
    use crate::dataset::{Quadruple, Split, Splits, TemporalKg};
    use crate::train::{evaluate, train, TrainOptions};

    fn kg() -> TemporalKg {
        let q = Quadruple::new;
        let train = vec![q(0, 0, 1, 0), q(1, 0, 2, 1), q(2, 0, 0, 2), q(0, 0, 1, 3)];
        let test = vec![q(1, 0, 2, 4)];
        TemporalKg::new(3, 1, Splits { train, test, ..Default::default() }, 1).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let kg = kg();
        for precision in [Precision::F32, Precision::F64] {
            let c = TrainConfig {
                dim: 6,
                kernels: 3,
                window: 2,
                epochs: 2,
                precision,
                ..TrainConfig::default()
            };
            let state = train(&kg, &c, &TrainOptions::default()).unwrap();
            let bytes = to_bytes(&state).unwrap();
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(to_bytes(&back).unwrap(), bytes);
            assert_eq!(back.history, state.history);
            assert_eq!(back.adam.step, state.adam.step);
            assert_eq!(
                evaluate(&back.model, &kg, Split::Test).unwrap(),
                evaluate(&state.model, &kg, Split::Test).unwrap()
            );
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(from_bytes(b"not a checkpoint").is_err());
    }
}

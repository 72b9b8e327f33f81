//! Single-file checkpoints: `EGCK`, version, JSON metadata (config echo,
//! center prior), then named arrays in the f32 container format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{EcnModel, ModelConfig};
use crate::container::{read_u32, F32Array};
use crate::error::{Error, Result};
use crate::gaze_maps::{CenterPrior, CenterPriorParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub prior: CenterPriorParams,
    pub calibrated: bool,
    /// Free-form training provenance (seed, epochs, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn all_vars(model: &EcnModel) -> BTreeMap<String, Var> {
    let mut out = BTreeMap::new();
    for (name, v) in model.trainable_store().names() {
        out.insert(format!("model.{name}"), v.clone());
    }
    if let Some(store) = model.backbone_store() {
        for (name, v) in store.names() {
            out.insert(format!("backbone.{name}"), v.clone());
        }
    }
    out
}

fn to_array(t: &Tensor) -> Result<F32Array> {
    let data = t.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?;
    F32Array::new(t.dims().to_vec(), data)
}

pub fn save_checkpoint(model: &EcnModel, extra: serde_json::Value, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        config: model.config().clone(),
        prior: model.prior().params(),
        calibrated: model.is_calibrated(),
        extra,
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let vars = all_vars(model);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(CHECKPOINT_MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(&(json.len() as u32).to_le_bytes())?;
    write(&json)?;
    write(&(vars.len() as u32).to_le_bytes())?;
    for (name, var) in &vars {
        write(&(name.len() as u32).to_le_bytes())?;
        write(name.as_bytes())?;
        let mut buf = Vec::new();
        to_array(var.as_tensor())?
            .write_to(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        write(&buf)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn next_u32<R: Read>(input: &mut R) -> Result<u32> {
    read_u32(input).map_err(|_| corrupt("truncated checkpoint"))
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "checkpoint".into(),
        reason: reason.into(),
    }
}

/// Rebuilds the model from its config echo and restores every parameter
/// and buffer. Missing, extra or misshapen arrays are errors.
pub fn load_checkpoint(path: &Path) -> Result<(EcnModel, CheckpointMeta)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| corrupt("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = next_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "checkpoint",
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let json_len = next_u32(&mut input)? as usize;
    let mut json = vec![0u8; json_len];
    input
        .read_exact(&mut json)
        .map_err(|_| corrupt("truncated metadata"))?;
    let meta: CheckpointMeta = serde_json::from_slice(&json).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;

    let mut model = EcnModel::new(meta.config.clone(), 0)?;
    model.set_prior(&CenterPrior::from_params(&meta.prior)?)?;
    let vars = all_vars(&model);
    let count = next_u32(&mut input)? as usize;
    if count != vars.len() {
        return Err(Error::LengthMismatch {
            what: "checkpoint arrays".into(),
            expected: vars.len(),
            actual: count,
        });
    }
    for _ in 0..count {
        let len = next_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        input
            .read_exact(&mut name)
            .map_err(|_| corrupt("truncated array name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("array name is not UTF-8"))?;
        let array = F32Array::read_from(&mut input, &name)?;
        let var = vars
            .get(&name)
            .ok_or_else(|| corrupt(format!("unexpected array {name}")))?;
        if array.dims() != var.dims() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: stored {:?}, model {:?}",
                array.dims(),
                var.dims()
            )));
        }
        let t = Tensor::from_vec(array.into_data(), var.dims(), model.device())?.to_dtype(var.dtype())?;
        var.set(&t)?;
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(corrupt("trailing bytes"));
    }
    model.set_calibrated(meta.calibrated);
    Ok((model, meta))
}

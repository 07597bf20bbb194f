//! Binary checkpoint:
//!
//! ```text
//! "PIFCKPT1\n"
//! u64 LE  header length in bytes
//! header  UTF-8 JSON (CheckpointHeader)
//! u64 LE  parameter count
//! f64 LE  parameters
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layout::{layout, ParamBlock};
use super::{Architecture, Family, NeuralError, NeuralModel, SizeTier};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"PIFCKPT1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub family: Family,
    pub architecture: Architecture,
    pub lookback: usize,
    pub tier: Option<SizeTier>,
    pub seed: u64,
    pub frozen_body: bool,
    pub blocks: Vec<ParamBlock>,
}

pub fn write_checkpoint(model: &NeuralModel, mut out: impl Write) -> Result<(), NeuralError> {
    let header = CheckpointHeader {
        family: model.family(),
        architecture: model.arch.clone(),
        lookback: model.lookback,
        tier: model.tier,
        seed: model.seed,
        frozen_body: model.frozen_body,
        blocks: model.blocks.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(&(model.params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(model.params.len() * 8);
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_u64(input: &mut impl Read) -> Result<u64, NeuralError> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(mut input: impl Read) -> Result<NeuralModel, NeuralError> {
    let mut magic = [0u8; 9];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NeuralError::Checkpoint("bad magic".into()));
    }
    let len = read_u64(&mut input)? as usize;
    if len > 1 << 26 {
        return Err(NeuralError::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.architecture.family() != header.family {
        return Err(NeuralError::Checkpoint("family does not match architecture".into()));
    }
    header.architecture.validate().map_err(NeuralError::Checkpoint)?;
    let expected = layout(&header.architecture, header.lookback);
    if expected != header.blocks {
        return Err(NeuralError::Checkpoint("block layout does not match architecture".into()));
    }
    let count = read_u64(&mut input)? as usize;
    let need = header.architecture.parameter_count(header.lookback);
    if count != need {
        return Err(NeuralError::Checkpoint(format!(
            "{count} parameters stored, architecture needs {need}"
        )));
    }
    let mut raw = vec![0u8; count * 8];
    input.read_exact(&mut raw)?;
    let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(NeuralModel::assemble(
        header.architecture,
        header.lookback,
        params,
        header.blocks,
        header.frozen_body,
        header.tier,
        header.seed,
    ))
}

pub fn save_checkpoint(model: &NeuralModel, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NeuralModel, NeuralError> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

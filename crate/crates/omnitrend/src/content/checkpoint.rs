//! Versioned binary checkpoint for the trained content model: a JSON header
//! with the training configuration and label statistics, followed by raw
//! little-endian f64 parameter blocks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContentModelParams, TrainConfig, PARAM_BLOCK_NAMES};
use crate::corpus::{BinWeights, LabelScaler};
use crate::error::{OmniError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"OTCP";
const VERSION: u16 = 1;

/// Everything needed to reuse a trained content model: the parameters plus
/// the train-split statistics that standardized its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ContentModelParams,
    pub config: TrainConfig,
    pub scaler: LabelScaler,
    pub bins: BinWeights,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    scaler: LabelScaler,
    bins: BinWeights,
    input_dim: usize,
    dim: usize,
    hidden: usize,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let header = Header {
        config: ckpt.config.clone(),
        scaler: ckpt.scaler.clone(),
        bins: ckpt.bins.clone(),
        input_dim: ckpt.params.input_dim,
        dim: ckpt.params.dim,
        hidden: ckpt.params.hidden,
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| OmniError::Format(format!("checkpoint header encode: {e}")))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let blocks = ckpt.params.blocks();
    w.write_all(&[blocks.len() as u8])?;
    for (name, t) in blocks {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows as u32).to_le_bytes())?;
        w.write_all(&(t.cols as u32).to_le_bytes())?;
        for &x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_vec(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact_vec(&mut r, 4)?;
    if magic != MAGIC {
        return Err(OmniError::Format("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes(read_exact_vec(&mut r, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(OmniError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let json_len = u32::from_le_bytes(read_exact_vec(&mut r, 4)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(&read_exact_vec(&mut r, json_len)?)
        .map_err(|e| OmniError::Format(format!("checkpoint header decode: {e}")))?;
    let n_blocks = read_exact_vec(&mut r, 1)?[0] as usize;
    if n_blocks != PARAM_BLOCK_NAMES.len() {
        return Err(OmniError::Format(format!(
            "checkpoint has {n_blocks} blocks, expected {}",
            PARAM_BLOCK_NAMES.len()
        )));
    }

    let mut params = ContentModelParams::init(header.input_dim, header.dim, header.hidden, 0);
    for expected in PARAM_BLOCK_NAMES {
        let name_len = u16::from_le_bytes(read_exact_vec(&mut r, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(read_exact_vec(&mut r, name_len)?)
            .map_err(|_| OmniError::Format("checkpoint block name is not utf-8".into()))?;
        if name != expected {
            return Err(OmniError::Format(format!(
                "checkpoint block order mismatch: got {name}, expected {expected}"
            )));
        }
        let rows = u32::from_le_bytes(read_exact_vec(&mut r, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(read_exact_vec(&mut r, 4)?.try_into().unwrap()) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let bytes = read_exact_vec(&mut r, rows * cols * 8)?;
        for chunk in bytes.chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let target = params
            .blocks_mut()
            .into_iter()
            .find(|(n, _)| *n == expected)
            .unwrap()
            .1;
        if target.rows != rows || target.cols != cols {
            return Err(OmniError::Format(format!(
                "checkpoint block {name}: shape {rows}x{cols} does not match header dims"
            )));
        }
        *target = Tensor::from_vec(rows, cols, data);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(OmniError::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint {
        params,
        config: header.config,
        scaler: header.scaler,
        bins: header.bins,
    })
}

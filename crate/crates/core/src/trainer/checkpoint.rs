//! Checkpoint container: magic, version, JSON header, raw little-endian
//! tensor payload. Identical state serializes to identical bytes, and writes
//! go through a temp file + rename so a crash never leaves partial state.

use super::AdamW;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};
use crate::tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PJCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    t: u64,
    m_offset: usize,
    v_offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    step: u64,
    vocab_sha256: String,
    model_config: ModelConfig,
    params: Vec<ParamEntry>,
    optimizer: Option<OptimizerEntry>,
}

pub struct Checkpoint<T: Element> {
    pub params: Parameters<T>,
    pub optimizer: Option<AdamW<T>>,
    pub step: u64,
    pub vocab_sha256: String,
}

pub fn save_checkpoint<T: Element>(
    path: &Path,
    params: &Parameters<T>,
    optimizer: Option<&AdamW<T>>,
    step: u64,
    vocab_sha256: &str,
) -> Result<()> {
    let mut entries = Vec::with_capacity(params.tensors().len());
    let mut offset = 0usize;
    for (name, tensor) in params.tensors() {
        entries.push(ParamEntry { name: name.clone(), shape: tensor.shape().to_vec(), offset });
        offset += tensor.numel() * T::BYTES;
    }
    let param_bytes = offset;
    let header = Header {
        dtype: T::DTYPE.to_string(),
        step,
        vocab_sha256: vocab_sha256.to_string(),
        model_config: params.config.clone(),
        params: entries,
        optimizer: optimizer.map(|opt| OptimizerEntry {
            t: opt.t,
            m_offset: param_bytes,
            v_offset: param_bytes * 2,
        }),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut bytes = Vec::with_capacity(16 + header_json.len() + param_bytes * 3);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, tensor) in params.tensors() {
        for &v in tensor.data() {
            v.write_le(&mut bytes);
        }
    }
    if let Some(opt) = optimizer {
        let (m, v) = opt.moments();
        for block in [m, v] {
            for tensor in block {
                for &x in tensor.data() {
                    x.write_le(&mut bytes);
                }
            }
        }
    }

    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path)?;
    let corrupt = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 {
        return Err(corrupt("file too short for a checkpoint header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(corrupt("bad magic; not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}, expected {VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16 + header_len;
    if bytes.len() < payload_start {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| corrupt(&format!("unreadable header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(corrupt(&format!(
            "holds {} parameters but {} was requested",
            header.dtype,
            T::DTYPE
        )));
    }
    let payload = &bytes[payload_start..];

    let read_block = |base: usize| -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::with_capacity(header.params.len());
        for entry in &header.params {
            let numel: usize = entry.shape.iter().product();
            let start = base + entry.offset;
            let end = start + numel * T::BYTES;
            let slice = payload
                .get(start..end)
                .ok_or_else(|| corrupt(&format!("payload truncated at {}", entry.name)))?;
            let data: Vec<T> = slice.chunks_exact(T::BYTES).map(T::read_le).collect();
            out.push(Tensor::new(entry.shape.clone(), data)?);
        }
        Ok(out)
    };

    let tensors = read_block(0)?
        .into_iter()
        .zip(&header.params)
        .map(|(t, e)| (e.name.clone(), t))
        .collect();
    let params = Parameters::from_tensors(header.model_config.clone(), tensors)?;

    let optimizer = match &header.optimizer {
        Some(opt) => {
            let m = read_block(opt.m_offset)?;
            let v = read_block(opt.v_offset)?;
            Some(AdamW::from_state(opt.t, m, v))
        }
        None => None,
    };

    Ok(Checkpoint { params, optimizer, step: header.step, vocab_sha256: header.vocab_sha256 })
}

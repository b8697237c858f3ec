use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{is_encoder_param, EncoderKind, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RGABCKPT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub params: Vec<ParamEntry>,
}

pub fn checkpoint_file_name(attribute: &str, encoder: &EncoderKind) -> String {
    format!("{attribute}.{}.ckpt", encoder.name())
}

/// Layout: magic, version (u32 LE), header length (u32 LE), JSON header, then
/// every parameter as little-endian f32 in header order.
pub fn encode_checkpoint(model: &Model<f32>) -> Vec<u8> {
    encode_filtered(model, |_| true)
}

/// Same layout restricted to the token-encoder parameters.
pub fn encode_encoder_checkpoint(model: &Model<f32>) -> Vec<u8> {
    encode_filtered(model, is_encoder_param)
}

fn encode_filtered(model: &Model<f32>, keep: impl Fn(&str) -> bool) -> Vec<u8> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocab_hash: model.vocab_hash.clone(),
        params: model
            .params
            .iter()
            .filter(|(_, name, _)| keep(name))
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in model.params.iter().filter(|(_, name, _)| keep(name)) {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    let b = take(bytes, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn decode_header(mut bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if take(&mut bytes, MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut bytes)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = read_u32(&mut bytes)? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(take(&mut bytes, len)?).map_err(|e| Error::json("checkpoint header", e))?;
    Ok((header, bytes))
}

/// Header and parameter table, refusing files built for another vocabulary.
pub fn decode_params(bytes: &[u8], expected_vocab_hash: &str) -> Result<(CheckpointHeader, ParamStore<f32>)> {
    let (header, mut payload) = decode_header(bytes)?;
    if header.vocab_hash != expected_vocab_hash {
        return Err(Error::Checkpoint(format!(
            "vocabulary hash {} does not match the supplied vocabulary {expected_vocab_hash}",
            header.vocab_hash
        )));
    }
    let mut store = ParamStore::new();
    for entry in &header.params {
        let n: usize = entry.shape.iter().product();
        let raw = take(&mut payload, 4 * n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    if !payload.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after parameters", payload.len())));
    }
    Ok((header, store))
}

/// Rebuilds a full model, refusing files built for another vocabulary.
pub fn decode_checkpoint(bytes: &[u8], expected_vocab_hash: &str) -> Result<Model<f32>> {
    let (header, store) = decode_params(bytes, expected_vocab_hash)?;
    Model::from_params(header.config, header.vocab_hash, store)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected_vocab_hash: &str) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected_vocab_hash)
}

pub fn save_encoder_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_encoder_checkpoint(model)).map_err(|e| Error::io(path, e))
}

/// Encoder weights written by [`save_encoder_checkpoint`].
pub fn load_encoder_checkpoint(path: &Path, expected_vocab_hash: &str) -> Result<(CheckpointHeader, ParamStore<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, expected_vocab_hash)
}

/// Header only, without checking the vocabulary.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_header(&bytes).map(|(h, _)| h)
}

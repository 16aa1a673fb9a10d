//! Export of preference pairs as training-ready vectors.
//!
//! File layout (`dpo_batches.jsonl`): one header object on the first line,
//! then one object per pair. Vectors are base64 strings of consecutive
//! little-endian IEEE-754 `f64` values, so a read-back is bit-exact.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::imageops::{self, FilterType};
use serde::{Deserialize, Serialize};

use super::loss::{DpoConfig, DpoPair};
use super::schedule::NoiseSchedule;
use crate::backend::Embedding;
use crate::jsonl::write_atomic;
use crate::model::{ImageRef, PreferencePair};
use crate::store::BlobStore;

pub const EXPORT_FORMAT: &str = "agfsync-dpo-batch";
pub const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: String,
    pub width: u32,
    pub height: u32,
}

/// Maps an encoded image to the vector a trainer sees as `x0`.
pub trait ImageEncoder: Sync {
    fn spec(&self) -> EncoderSpec;
    fn encode(&self, image: &[u8]) -> Result<Vec<f64>, String>;
}

/// Decode, convert to 8-bit luma, resize to `width x height` and scale to
/// `[0, 1]`, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LumaFlatten {
    pub width: u32,
    pub height: u32,
}

impl Default for LumaFlatten {
    fn default() -> Self {
        LumaFlatten { width: 16, height: 16 }
    }
}

impl ImageEncoder for LumaFlatten {
    fn spec(&self) -> EncoderSpec {
        EncoderSpec { kind: "luma-flatten".into(), width: self.width, height: self.height }
    }

    fn encode(&self, image: &[u8]) -> Result<Vec<f64>, String> {
        let decoded = image::load_from_memory(image).map_err(|e| format!("decode: {e}"))?;
        let luma = decoded.to_luma8();
        let luma = if luma.dimensions() == (self.width, self.height) {
            luma
        } else {
            imageops::resize(&luma, self.width, self.height, FilterType::Triangle)
        };
        Ok(luma.into_raw().into_iter().map(|p| p as f64 / 255.0).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub d: usize,
    pub cond_dim: usize,
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub beta: f64,
    pub encoder: EncoderSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoExport {
    pub header: ExportHeader,
    pub pairs: Vec<DpoPair>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemFailure {
    pub prompt_id: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("no preference pairs to export")]
    NoPairs,
    #[error("{} pair(s) could not be exported: {}", .0.len(), .0.iter().map(|f| format!("{}: {}", f.prompt_id, f.message)).collect::<Vec<_>>().join("; "))]
    Items(Vec<ItemFailure>),
    #[error("malformed batch file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Encode every pair's winner and loser image and attach the caption
/// embedding as the condition.
///
/// `images` maps candidate ids to blobs; `conds` maps prompt ids to caption
/// embeddings. All failures are collected before returning.
pub fn export_dpo_batches(
    pairs: &[PreferencePair],
    images: &HashMap<String, ImageRef>,
    conds: &HashMap<String, Embedding>,
    store: &BlobStore,
    sched: &NoiseSchedule,
    cfg: &DpoConfig,
    encoder: &dyn ImageEncoder,
) -> Result<DpoExport, ExportError> {
    if pairs.is_empty() {
        return Err(ExportError::NoPairs);
    }
    cfg.validate().map_err(|e| ExportError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(pairs.len());
    let mut failures = Vec::new();
    let encode = |candidate_id: &str| -> Result<Vec<f64>, String> {
        let image_ref = images.get(candidate_id).ok_or_else(|| format!("unknown candidate {candidate_id}"))?;
        let bytes = store.get(image_ref).map_err(|e| format!("{candidate_id}: {e}"))?;
        encoder.encode(&bytes).map_err(|e| format!("{candidate_id}: {e}"))
    };
    for pair in pairs {
        let item = (|| {
            let cond = conds.get(&pair.prompt_id).ok_or("no caption embedding")?.clone();
            Ok::<_, String>(DpoPair {
                prompt_id: pair.prompt_id.clone(),
                winner: pair.winner.clone(),
                loser: pair.loser.clone(),
                cond,
                x0_w: encode(&pair.winner)?,
                x0_l: encode(&pair.loser)?,
            })
        })();
        match item {
            Ok(p) => out.push(p),
            Err(message) => failures.push(ItemFailure { prompt_id: pair.prompt_id.clone(), message }),
        }
    }
    if !failures.is_empty() {
        return Err(ExportError::Items(failures));
    }
    let d = out[0].x0_w.len();
    let cond_dim = out[0].cond.dim();
    for p in &out {
        if p.x0_w.len() != d || p.x0_l.len() != d || p.cond.dim() != cond_dim {
            return Err(ExportError::Format(format!("{}: inconsistent dimensions", p.prompt_id)));
        }
    }
    Ok(DpoExport {
        header: ExportHeader {
            format: EXPORT_FORMAT.into(),
            version: EXPORT_VERSION,
            count: out.len(),
            d,
            cond_dim,
            timesteps: sched.timesteps(),
            beta: cfg.beta,
            encoder: encoder.spec(),
        },
        pairs: out,
    })
}

#[derive(Serialize, Deserialize)]
struct Record {
    prompt_id: String,
    winner: String,
    loser: String,
    cond: String,
    x0_w: String,
    x0_l: String,
}

fn encode_vec(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_vec(s: &str, expected: usize, what: &str) -> Result<Vec<f64>, ExportError> {
    let bytes = B64.decode(s).map_err(|e| ExportError::Format(format!("{what}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(ExportError::Format(format!("{what}: {} bytes, expected {}", bytes.len(), expected * 8)));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn to_bytes(export: &DpoExport) -> Result<Vec<u8>, ExportError> {
    let mut buf = serde_json::to_vec(&export.header)?;
    buf.push(b'\n');
    for p in &export.pairs {
        let rec = Record {
            prompt_id: p.prompt_id.clone(),
            winner: p.winner.clone(),
            loser: p.loser.clone(),
            cond: encode_vec(p.cond.values()),
            x0_w: encode_vec(&p.x0_w),
            x0_l: encode_vec(&p.x0_l),
        };
        serde_json::to_writer(&mut buf, &rec)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_dpo_batches(path: &Path, export: &DpoExport) -> Result<(), ExportError> {
    write_atomic(path, &to_bytes(export)?)?;
    Ok(())
}

pub fn read_dpo_batches(path: &Path) -> Result<DpoExport, ExportError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: ExportHeader = serde_json::from_str(lines.next().ok_or_else(|| ExportError::Format("empty file".into()))?)?;
    if header.format != EXPORT_FORMAT || header.version != EXPORT_VERSION {
        return Err(ExportError::Format(format!("unsupported {} v{}", header.format, header.version)));
    }
    let mut pairs = Vec::with_capacity(header.count);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let rec: Record = serde_json::from_str(line)?;
        let cond = Embedding::new(decode_vec(&rec.cond, header.cond_dim, "cond")?)
            .map_err(|e| ExportError::Format(format!("cond: {e}")))?;
        pairs.push(DpoPair {
            x0_w: decode_vec(&rec.x0_w, header.d, "x0_w")?,
            x0_l: decode_vec(&rec.x0_l, header.d, "x0_l")?,
            prompt_id: rec.prompt_id,
            winner: rec.winner,
            loser: rec.loser,
            cond,
        });
    }
    if pairs.len() != header.count {
        return Err(ExportError::Format(format!("header says {} items, found {}", header.count, pairs.len())));
    }
    Ok(DpoExport { header, pairs })
}

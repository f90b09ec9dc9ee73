//! Self-describing binary checkpoint container.
//!
//! Layout: the 8-byte magic `APEQECKP`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! tensor's elements as little-endian `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Seq2Seq;
use super::params::{average_params, ModelConfig, Seq2SeqParams};
use super::tensor::Tensor;
use super::{NmtError, Result};
use crate::corpus::Vocabulary;

const MAGIC: &[u8; 8] = b"APEQECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Seq2Seq,
    pub step: u64,
    /// Dev BLEU at save time, when a dev set was given.
    pub dev_metric: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    step: u64,
    dev_metric: Option<f64>,
    input_vocabs: Vec<Vec<String>>,
    target_vocab: Vec<String>,
    input_vocab_hashes: Vec<String>,
    target_vocab_hash: String,
    tensors: Vec<TensorEntry>,
}

fn vocab_from_symbols(symbols: &[String]) -> Result<Vocabulary> {
    let mut text = symbols.join("\n");
    text.push('\n');
    Vocabulary::from_text(&text).map_err(|e| NmtError::Checkpoint(e.to_string()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let named = m.params.named_tensors();
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            config: m.config.clone(),
            step: self.step,
            dev_metric: self.dev_metric,
            input_vocabs: m.input_vocabs.iter().map(|v| v.symbols().to_vec()).collect(),
            target_vocab: m.target_vocab.symbols().to_vec(),
            input_vocab_hashes: m.input_vocabs.iter().map(Vocabulary::content_hash).collect(),
            target_vocab_hash: m.target_vocab.content_hash(),
            tensors: named
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * m.params.num_parameters());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in named {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| NmtError::Checkpoint(msg.to_owned());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(NmtError::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + header_len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| NmtError::Checkpoint(e.to_string()))?;

        let input_vocabs = header
            .input_vocabs
            .iter()
            .map(|s| vocab_from_symbols(s))
            .collect::<Result<Vec<_>>>()?;
        let target_vocab = vocab_from_symbols(&header.target_vocab)?;
        let hashes_ok = target_vocab.content_hash() == header.target_vocab_hash
            && input_vocabs
                .iter()
                .map(Vocabulary::content_hash)
                .eq(header.input_vocab_hashes.iter().cloned());
        if !hashes_ok {
            return Err(bad("vocabulary hash mismatch"));
        }

        let mut offset = 20 + header_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| NmtError::Checkpoint(format!("truncated tensor {}", entry.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += 8 * n;
            tensors.push((entry.name, Tensor { shape: entry.shape, data }));
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let sizes: Vec<usize> = input_vocabs.iter().map(Vocabulary::len).collect();
        let template = Seq2SeqParams::init(&header.config, &sizes, target_vocab.len(), 0);
        let params = Seq2SeqParams::from_named(&template, tensors)?;
        Ok(Self {
            model: Seq2Seq {
                config: header.config,
                params,
                input_vocabs,
                target_vocab,
            },
            step: header.step,
            dev_metric: header.dev_metric,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| NmtError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| NmtError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// The `k` checkpoints with the highest dev metric; later steps win ties.
/// Checkpoints without a metric rank last.
pub fn select_best(checkpoints: &[Checkpoint], k: usize) -> Vec<&Checkpoint> {
    let mut ranked: Vec<&Checkpoint> = checkpoints.iter().collect();
    ranked.sort_by(|a, b| {
        let key = |c: &Checkpoint| c.dev_metric.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then(b.step.cmp(&a.step))
    });
    ranked.truncate(k);
    ranked
}

/// Averages the parameters of compatible checkpoints into one model.
pub fn average_checkpoints(checkpoints: &[&Checkpoint]) -> Result<Seq2Seq> {
    let first = checkpoints.first().ok_or(NmtError::EmptyCheckpointList)?;
    for c in checkpoints {
        if c.model.config != first.model.config
            || c.model.target_vocab != first.model.target_vocab
            || c.model.input_vocabs != first.model.input_vocabs
        {
            return Err(NmtError::Checkpoint(
                "checkpoints differ in configuration or vocabulary".into(),
            ));
        }
    }
    let params: Vec<&Seq2SeqParams> = checkpoints.iter().map(|c| &c.model.params).collect();
    Ok(Seq2Seq {
        params: average_params(&params)?,
        ..first.model.clone()
    })
}

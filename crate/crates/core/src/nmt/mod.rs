//! Small attention-based encoder–decoder over factored inputs.
//!
//! Everything runs in `f64` on the CPU. Training is single-threaded and fully
//! determined by its seed; decoding is read-only and can be shared across
//! threads.

mod beam;
mod checkpoint;
mod model;
mod params;
pub mod tensor;
mod train;

pub use beam::{
    beam_search, beam_search_encoded, extract_alignments, ModelTranslator, greedy_decode, sample_sequence, BeamConfig, Hypothesis,
    OutputMask,
};
pub use checkpoint::{average_checkpoints, select_best, Checkpoint, CHECKPOINT_VERSION};
pub use model::{embed_factored, EncodedPair, Encoded, Seq2Seq, StepCache};
pub use params::{average_params, GruParams, ModelConfig, Seq2SeqParams};
pub use train::{
    clip_grad_norm, dev_bleu, train_min_risk, train_xent, Adam, MinRiskConfig, MinRiskRun, TrainConfig,
    TrainRun,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NmtError {
    #[error("empty input sentence")]
    EmptyInput,
    #[error("token {token} has {found} factors, model expects {expected}")]
    Arity {
        token: usize,
        expected: usize,
        found: usize,
    },
    #[error("id {id} out of range for factor {factor}")]
    Lookup { factor: usize, id: u32 },
    #[error("non-finite activation")]
    NonFinite,
    #[error("tensor {tensor}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("no checkpoints given")]
    EmptyCheckpointList,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NmtError>;

/// Attention weights, one row per decoded target step and one column per
/// source token. Rows are normalized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionRecord {
    rows: Vec<Vec<f64>>,
}

impl AttentionRecord {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// Source position of each row's maximum; ties go to the lowest index.
    pub fn argmax_alignment(&self) -> Vec<usize> {
        self.rows.iter().map(|r| crate::input::argmax_lowest(r)).collect()
    }
}

#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NmtError;
use crate::input::ModelInputKind;

/// Layer sizes of one encoder–decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_kind: ModelInputKind,
    /// Embedding width per input factor; the surface factor comes first.
    pub factor_dims: Vec<usize>,
    pub target_dim: usize,
    pub hidden: usize,
    pub attention_dim: usize,
    pub output_dim: usize,
}

impl ModelConfig {
    /// Default widths: 64 for the surface, 8 per extra factor, hidden 64.
    pub fn for_kind(kind: ModelInputKind) -> Self {
        let mut factor_dims = vec![64];
        factor_dims.extend(std::iter::repeat_n(8, kind.arity() - 1));
        Self {
            input_kind: kind,
            factor_dims,
            target_dim: 64,
            hidden: 64,
            attention_dim: 64,
            output_dim: 64,
        }
    }

    /// Same architecture with every width scaled to `width` (extra factors get `width / 4`).
    pub fn with_width(kind: ModelInputKind, width: usize) -> Self {
        let mut factor_dims = vec![width];
        factor_dims.extend(std::iter::repeat_n((width / 4).max(1), kind.arity() - 1));
        Self {
            input_kind: kind,
            factor_dims,
            target_dim: width,
            hidden: width,
            attention_dim: width,
            output_dim: width,
        }
    }

    pub fn input_width(&self) -> usize {
        self.factor_dims.iter().sum()
    }

    pub fn context_width(&self) -> usize {
        2 * self.hidden
    }
}

/// Gated recurrent unit; gate rows are stacked as [update; reset; candidate].
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl GruParams {
    fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng, scale: f64) -> Self {
        Self {
            w: Tensor::uniform(&[3 * hidden, input], scale, rng),
            u: Tensor::uniform(&[3 * hidden, hidden], scale, rng),
            b: Tensor::zeros(&[3 * hidden]),
        }
    }
}

/// Every learnable tensor of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqParams {
    /// One table per input factor, `vocab_k × dim_k`.
    pub factor_embeddings: Vec<Tensor>,
    pub enc_fwd: GruParams,
    pub enc_bwd: GruParams,
    pub init_w: Tensor,
    pub init_b: Tensor,
    pub att_state: Tensor,
    pub att_ctx: Tensor,
    pub att_b: Tensor,
    pub att_v: Tensor,
    pub target_embedding: Tensor,
    pub dec: GruParams,
    pub hidden_w: Tensor,
    pub hidden_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

const INIT_SCALE: f64 = 0.1;

impl Seq2SeqParams {
    pub fn init(
        config: &ModelConfig,
        factor_vocab_sizes: &[usize],
        target_vocab_size: usize,
        seed: u64,
    ) -> Self {
        assert_eq!(factor_vocab_sizes.len(), config.factor_dims.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let (h, c, a) = (config.hidden, config.context_width(), config.attention_dim);
        let factor_embeddings = factor_vocab_sizes
            .iter()
            .zip(&config.factor_dims)
            .map(|(&v, &d)| Tensor::uniform(&[v, d], INIT_SCALE, rng))
            .collect();
        Self {
            factor_embeddings,
            enc_fwd: GruParams::new(config.input_width(), h, rng, INIT_SCALE),
            enc_bwd: GruParams::new(config.input_width(), h, rng, INIT_SCALE),
            init_w: Tensor::uniform(&[h, c], INIT_SCALE, rng),
            init_b: Tensor::zeros(&[h]),
            att_state: Tensor::uniform(&[a, h], INIT_SCALE, rng),
            att_ctx: Tensor::uniform(&[a, c], INIT_SCALE, rng),
            att_b: Tensor::zeros(&[a]),
            att_v: Tensor::uniform(&[a], INIT_SCALE, rng),
            target_embedding: Tensor::uniform(&[target_vocab_size, config.target_dim], INIT_SCALE, rng),
            dec: GruParams::new(config.target_dim + c, h, rng, INIT_SCALE),
            hidden_w: Tensor::uniform(&[config.output_dim, h + c + config.target_dim], INIT_SCALE, rng),
            hidden_b: Tensor::zeros(&[config.output_dim]),
            out_w: Tensor::uniform(&[target_vocab_size, config.output_dim], INIT_SCALE, rng),
            out_b: Tensor::zeros(&[target_vocab_size]),
        }
    }

    /// Tensors with stable names, in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .factor_embeddings
            .iter()
            .enumerate()
            .map(|(k, t)| (format!("embedding.factor{k}"), t))
            .collect();
        for (prefix, gru) in [("enc_fwd", &self.enc_fwd), ("enc_bwd", &self.enc_bwd)] {
            out.push((format!("{prefix}.w"), &gru.w));
            out.push((format!("{prefix}.u"), &gru.u));
            out.push((format!("{prefix}.b"), &gru.b));
        }
        out.extend([
            ("init.w".to_string(), &self.init_w),
            ("init.b".to_string(), &self.init_b),
            ("attention.state".to_string(), &self.att_state),
            ("attention.ctx".to_string(), &self.att_ctx),
            ("attention.b".to_string(), &self.att_b),
            ("attention.v".to_string(), &self.att_v),
            ("target_embedding".to_string(), &self.target_embedding),
            ("dec.w".to_string(), &self.dec.w),
            ("dec.u".to_string(), &self.dec.u),
            ("dec.b".to_string(), &self.dec.b),
            ("readout.w".to_string(), &self.hidden_w),
            ("readout.b".to_string(), &self.hidden_b),
            ("output.w".to_string(), &self.out_w),
            ("output.b".to_string(), &self.out_b),
        ]);
        out
    }

    /// Mutable tensors, same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.factor_embeddings.iter_mut().collect();
        for gru in [&mut self.enc_fwd, &mut self.enc_bwd] {
            out.extend([&mut gru.w, &mut gru.u, &mut gru.b]);
        }
        out.extend([
            &mut self.init_w,
            &mut self.init_b,
            &mut self.att_state,
            &mut self.att_ctx,
            &mut self.att_b,
            &mut self.att_v,
            &mut self.target_embedding,
            &mut self.dec.w,
            &mut self.dec.u,
            &mut self.dec.b,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    /// Rebuilds parameters from named tensors, checking each name and shape
    /// against `template`.
    pub fn from_named(template: &Self, tensors: Vec<(String, Tensor)>) -> Result<Self, NmtError> {
        let mut out = template.clone();
        let expected: Vec<(String, Vec<usize>)> = template
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape.clone()))
            .collect();
        if expected.len() != tensors.len() {
            return Err(NmtError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((slot, (name, shape)), (got_name, tensor)) in
            out.tensors_mut().into_iter().zip(expected).zip(tensors)
        {
            if name != got_name || shape != tensor.shape {
                return Err(NmtError::ShapeMismatch {
                    tensor: name,
                    expected: shape,
                    found: tensor.shape,
                });
            }
            *slot = tensor;
        }
        Ok(out)
    }
}

/// Elementwise arithmetic mean of parameter snapshots.
///
/// Each element's values are sorted before a running mean is taken, so the
/// result does not depend on snapshot order and identical snapshots average
/// to themselves bit for bit.
pub fn average_params(snapshots: &[&Seq2SeqParams]) -> Result<Seq2SeqParams, NmtError> {
    let first = snapshots.first().ok_or(NmtError::EmptyCheckpointList)?;
    let reference = first.named_tensors();
    let per_snapshot: Vec<Vec<(String, &Tensor)>> =
        snapshots.iter().map(|s| s.named_tensors()).collect();
    for named in &per_snapshot {
        if named.len() != reference.len() {
            return Err(NmtError::Checkpoint(format!(
                "expected {} tensors, found {}",
                reference.len(),
                named.len()
            )));
        }
        for ((name, expected), (other_name, other)) in reference.iter().zip(named) {
            if name != other_name || expected.shape != other.shape {
                return Err(NmtError::ShapeMismatch {
                    tensor: name.clone(),
                    expected: expected.shape.clone(),
                    found: other.shape.clone(),
                });
            }
        }
    }
    let mut out = first.zeros_like();
    let mut values = Vec::with_capacity(snapshots.len());
    for (t, slot) in out.tensors_mut().into_iter().enumerate() {
        for (e, v) in slot.data.iter_mut().enumerate() {
            values.clear();
            values.extend(per_snapshot.iter().map(|named| named[t].1.data[e]));
            values.sort_by(f64::total_cmp);
            let mut mean = values[0];
            for (i, x) in values.iter().enumerate().skip(1) {
                mean += (x - mean) / (i + 1) as f64;
            }
            *v = mean;
        }
    }
    Ok(out)
}

//! Bidirectional GRU encoder, additive attention, GRU decoder, and the
//! hand-written backward pass for all of it.

use super::params::{GruParams, ModelConfig, Seq2SeqParams};
use super::tensor::{axpy, dot, log_softmax, sigmoid, softmax, Tensor};
use super::{NmtError, Result};
use crate::corpus::{Vocabulary, BOS_ID, EOS_ID};
use crate::input::FactoredSentence;

/// Cached activations of one GRU step.
#[derive(Debug, Clone)]
pub struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn gru_forward(p: &GruParams, x: Vec<f64>, h_prev: &[f64]) -> GruCache {
    let hd = h_prev.len();
    let mut pre = p.b.data.clone();
    p.w.matvec_add(&x, &mut pre);
    let mut z = vec![0.0; hd];
    let mut r = vec![0.0; hd];
    for i in 0..hd {
        z[i] = sigmoid(pre[i] + dot(p.u.row(i), h_prev));
        r[i] = sigmoid(pre[hd + i] + dot(p.u.row(hd + i), h_prev));
    }
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut n = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for i in 0..hd {
        n[i] = (pre[2 * hd + i] + dot(p.u.row(2 * hd + i), &rh)).tanh();
        h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
    }
    GruCache {
        x,
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        rh,
        h,
    }
}

/// Accumulates parameter gradients; returns (d input, d previous state).
pub(crate) fn gru_backward(
    p: &GruParams,
    g: &mut GruParams,
    c: &GruCache,
    dh: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hd = dh.len();
    let mut dpre = vec![0.0; 3 * hd];
    let mut dh_prev = vec![0.0; hd];
    for i in 0..hd {
        let dn = dh[i] * (1.0 - c.z[i]);
        let dz = dh[i] * (c.h_prev[i] - c.n[i]);
        dh_prev[i] = dh[i] * c.z[i];
        dpre[2 * hd + i] = dn * (1.0 - c.n[i] * c.n[i]);
        dpre[i] = dz * c.z[i] * (1.0 - c.z[i]);
    }
    let mut drh = vec![0.0; hd];
    for i in 0..hd {
        axpy(dpre[2 * hd + i], p.u.row(2 * hd + i), &mut drh);
    }
    for i in 0..hd {
        let dr = drh[i] * c.h_prev[i];
        dh_prev[i] += drh[i] * c.r[i];
        dpre[hd + i] = dr * c.r[i] * (1.0 - c.r[i]);
    }
    g.w.outer_add(&dpre, &c.x);
    g.b.add_assign(&dpre);
    for i in 0..2 * hd {
        axpy(dpre[i], &c.h_prev, g.u.row_mut(i));
        axpy(dpre[i], p.u.row(i), &mut dh_prev);
    }
    for i in 0..hd {
        axpy(dpre[2 * hd + i], &c.rh, g.u.row_mut(2 * hd + i));
    }
    let mut dx = vec![0.0; c.x.len()];
    p.w.matvec_t_add(&dpre, &mut dx);
    (dx, dh_prev)
}

/// Encoder output for one input sentence, with the caches the backward pass needs.
#[derive(Debug, Clone)]
pub struct Encoded {
    ids: Vec<Vec<u32>>,
    fwd: Vec<GruCache>,
    bwd: Vec<GruCache>,
    /// Per source token `[forward; backward]` states.
    pub annotations: Vec<Vec<f64>>,
    /// Attention keys `att_ctx · a_j + att_b`.
    keys: Vec<Vec<f64>>,
    mean: Vec<f64>,
    pub init_state: Vec<f64>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }
}

/// One decoder step: next-token log distribution, attention row and state.
#[derive(Debug, Clone)]
pub struct StepCache {
    prev_state: Vec<f64>,
    prev_token: u32,
    att_hidden: Vec<Vec<f64>>,
    pub attention: Vec<f64>,
    gru: GruCache,
    readout_in: Vec<f64>,
    readout: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl StepCache {
    pub fn state(&self) -> &[f64] {
        &self.gru.h
    }
}

/// Input factor ids for one token sequence plus target ids (EOS excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub input: Vec<Vec<u32>>,
    pub target: Vec<u32>,
}

/// A model with its vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub params: Seq2SeqParams,
    pub input_vocabs: Vec<Vocabulary>,
    pub target_vocab: Vocabulary,
}

impl Seq2Seq {
    pub fn new(
        config: ModelConfig,
        input_vocabs: Vec<Vocabulary>,
        target_vocab: Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        if input_vocabs.len() != config.factor_dims.len() {
            return Err(NmtError::Config(format!(
                "{} input vocabularies for {} factors",
                input_vocabs.len(),
                config.factor_dims.len()
            )));
        }
        let sizes: Vec<usize> = input_vocabs.iter().map(Vocabulary::len).collect();
        let params = Seq2SeqParams::init(&config, &sizes, target_vocab.len(), seed);
        Ok(Self {
            config,
            params,
            input_vocabs,
            target_vocab,
        })
    }

    /// Maps factor strings to ids; unknown symbols become UNK.
    pub fn encode_input(&self, sentence: &FactoredSentence) -> Result<Vec<Vec<u32>>> {
        let arity = self.input_vocabs.len();
        sentence
            .tokens
            .iter()
            .enumerate()
            .map(|(i, token)| {
                if token.arity() != arity {
                    return Err(NmtError::Arity {
                        token: i,
                        expected: arity,
                        found: token.arity(),
                    });
                }
                Ok(token
                    .fields()
                    .zip(&self.input_vocabs)
                    .map(|(f, v)| v.id_or_unk(f))
                    .collect())
            })
            .collect()
    }

    pub fn encode_target<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        self.target_vocab.encode(tokens)
    }

    pub fn encode_pair<S: AsRef<str>>(
        &self,
        input: &FactoredSentence,
        target: &[S],
    ) -> Result<EncodedPair> {
        Ok(EncodedPair {
            input: self.encode_input(input)?,
            target: self.encode_target(target),
        })
    }

    /// Concatenation over factors of the selected embedding rows.
    pub fn embed_factored(&self, ids: &[u32]) -> Result<Vec<f64>> {
        embed_factored(&self.params.factor_embeddings, ids)
    }

    pub fn encode(&self, ids: &[Vec<u32>]) -> Result<Encoded> {
        if ids.is_empty() {
            return Err(NmtError::EmptyInput);
        }
        let p = &self.params;
        let hd = self.config.hidden;
        let n = ids.len();
        let emb = ids
            .iter()
            .map(|t| self.embed_factored(t))
            .collect::<Result<Vec<_>>>()?;

        let mut fwd = Vec::with_capacity(n);
        let mut h = vec![0.0; hd];
        for e in &emb {
            let c = gru_forward(&p.enc_fwd, e.clone(), &h);
            h.clone_from(&c.h);
            fwd.push(c);
        }
        let mut bwd_rev = Vec::with_capacity(n);
        let mut h = vec![0.0; hd];
        for e in emb.iter().rev() {
            let c = gru_forward(&p.enc_bwd, e.clone(), &h);
            h.clone_from(&c.h);
            bwd_rev.push(c);
        }
        bwd_rev.reverse();
        let bwd = bwd_rev;

        let annotations: Vec<Vec<f64>> = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| f.h.iter().chain(&b.h).copied().collect())
            .collect();
        let keys = annotations
            .iter()
            .map(|a| p.att_ctx.affine(a, &p.att_b))
            .collect();
        let mut mean = vec![0.0; 2 * hd];
        for a in &annotations {
            axpy(1.0 / n as f64, a, &mut mean);
        }
        let init_state: Vec<f64> = p.init_w.affine(&mean, &p.init_b).iter().map(|v| v.tanh()).collect();
        Ok(Encoded {
            ids: ids.to_vec(),
            fwd,
            bwd,
            annotations,
            keys,
            mean,
            init_state,
        })
    }

    pub fn encode_sentence(&self, sentence: &FactoredSentence) -> Result<Encoded> {
        self.encode(&self.encode_input(sentence)?)
    }

    /// One decoder step from `state` after emitting `prev_token`.
    pub fn step(&self, enc: &Encoded, state: &[f64], prev_token: u32) -> Result<StepCache> {
        let p = &self.params;
        let mut query = vec![0.0; self.config.attention_dim];
        p.att_state.matvec_add(state, &mut query);
        let att_hidden: Vec<Vec<f64>> = enc
            .keys
            .iter()
            .map(|k| k.iter().zip(&query).map(|(a, b)| (a + b).tanh()).collect())
            .collect();
        let energies: Vec<f64> = att_hidden.iter().map(|u| dot(&p.att_v.data, u)).collect();
        let attention = softmax(&energies);
        let mut context = vec![0.0; self.config.context_width()];
        for (a, ann) in attention.iter().zip(&enc.annotations) {
            axpy(*a, ann, &mut context);
        }
        let yemb = p
            .target_embedding
            .data
            .get(prev_token as usize * self.config.target_dim..)
            .map(|s| &s[..self.config.target_dim])
            .ok_or(NmtError::Lookup {
                factor: usize::MAX,
                id: prev_token,
            })?;
        let gru_in: Vec<f64> = yemb.iter().chain(&context).copied().collect();
        let gru = gru_forward(&p.dec, gru_in, state);
        let readout_in: Vec<f64> = gru.h.iter().chain(&context).chain(yemb).copied().collect();
        let readout: Vec<f64> = p
            .hidden_w
            .affine(&readout_in, &p.hidden_b)
            .iter()
            .map(|v| v.tanh())
            .collect();
        let logits = p.out_w.affine(&readout, &p.out_b);
        let log_probs = log_softmax(&logits);
        if log_probs.iter().any(|v| v.is_nan()) || gru.h.iter().any(|v| !v.is_finite()) {
            return Err(NmtError::NonFinite);
        }
        Ok(StepCache {
            prev_state: state.to_vec(),
            prev_token,
            att_hidden,
            attention,
            gru,
            readout_in,
            readout,
            log_probs,
        })
    }

    /// Force-decodes `target` followed by EOS; returns the summed log
    /// probability and every step.
    pub fn force_decode(&self, enc: &Encoded, target: &[u32]) -> Result<(f64, Vec<StepCache>)> {
        let mut steps: Vec<StepCache> = Vec::with_capacity(target.len() + 1);
        let mut total = 0.0;
        let mut prev = BOS_ID;
        for &y in target.iter().chain(std::iter::once(&EOS_ID)) {
            let state = steps.last().map_or(&enc.init_state[..], |s| s.state());
            let step = self.step(enc, state, prev)?;
            total += step.log_probs[y as usize];
            steps.push(step);
            prev = y;
        }
        Ok((total, steps))
    }

    /// Backpropagates `d loss / d logits = coef · (softmax − onehot(target))`
    /// through the decoder, accumulating into `grads` and `d_ann`.
    fn backward_decoder(
        &self,
        enc: &Encoded,
        steps: &[StepCache],
        target: &[u32],
        coef: f64,
        grads: &mut Seq2SeqParams,
        d_ann: &mut [Vec<f64>],
    ) {
        let p = &self.params;
        let cfg = &self.config;
        let (hd, cw, td) = (cfg.hidden, cfg.context_width(), cfg.target_dim);
        let mut d_keys = vec![vec![0.0; cfg.attention_dim]; enc.len()];
        let mut ds_next = vec![0.0; hd];
        let targets: Vec<u32> = target.iter().copied().chain(std::iter::once(EOS_ID)).collect();

        for (step, &y) in steps.iter().zip(&targets).rev() {
            let mut dlogits: Vec<f64> = step.log_probs.iter().map(|lp| coef * lp.exp()).collect();
            dlogits[y as usize] -= coef;

            grads.out_w.outer_add(&dlogits, &step.readout);
            grads.out_b.add_assign(&dlogits);
            let mut d_readout = vec![0.0; cfg.output_dim];
            p.out_w.matvec_t_add(&dlogits, &mut d_readout);
            let d_pre: Vec<f64> = d_readout
                .iter()
                .zip(&step.readout)
                .map(|(d, o)| d * (1.0 - o * o))
                .collect();
            grads.hidden_w.outer_add(&d_pre, &step.readout_in);
            grads.hidden_b.add_assign(&d_pre);
            let mut d_in = vec![0.0; hd + cw + td];
            p.hidden_w.matvec_t_add(&d_pre, &mut d_in);

            let mut ds: Vec<f64> = d_in[..hd].to_vec();
            for (a, b) in ds.iter_mut().zip(&ds_next) {
                *a += b;
            }
            let mut d_ctx = d_in[hd..hd + cw].to_vec();
            let mut d_yemb = d_in[hd + cw..].to_vec();

            let (d_gru_in, mut d_prev_state) = gru_backward(&p.dec, &mut grads.dec, &step.gru, &ds);
            for (a, b) in d_yemb.iter_mut().zip(&d_gru_in[..td]) {
                *a += b;
            }
            for (a, b) in d_ctx.iter_mut().zip(&d_gru_in[td..]) {
                *a += b;
            }
            axpy(1.0, &d_yemb, grads.target_embedding.row_mut(step.prev_token as usize));

            let d_alpha: Vec<f64> = enc.annotations.iter().map(|a| dot(&d_ctx, a)).collect();
            for (da, &alpha) in d_ann.iter_mut().zip(&step.attention) {
                axpy(alpha, &d_ctx, da);
            }
            let mean_d: f64 = dot(&step.attention, &d_alpha);
            let mut d_query = vec![0.0; cfg.attention_dim];
            for j in 0..enc.len() {
                let de = step.attention[j] * (d_alpha[j] - mean_d);
                if de == 0.0 {
                    continue;
                }
                let u = &step.att_hidden[j];
                axpy(de, u, &mut grads.att_v.data);
                for k in 0..cfg.attention_dim {
                    let dpre = de * p.att_v.data[k] * (1.0 - u[k] * u[k]);
                    d_query[k] += dpre;
                    d_keys[j][k] += dpre;
                }
            }
            grads.att_state.outer_add(&d_query, &step.prev_state);
            p.att_state.matvec_t_add(&d_query, &mut d_prev_state);
            ds_next = d_prev_state;
        }

        for (j, dk) in d_keys.iter().enumerate() {
            grads.att_ctx.outer_add(dk, &enc.annotations[j]);
            grads.att_b.add_assign(dk);
            p.att_ctx.matvec_t_add(dk, &mut d_ann[j]);
        }

        let d_init_pre: Vec<f64> = ds_next
            .iter()
            .zip(&enc.init_state)
            .map(|(d, s)| d * (1.0 - s * s))
            .collect();
        grads.init_w.outer_add(&d_init_pre, &enc.mean);
        grads.init_b.add_assign(&d_init_pre);
        let mut d_mean = vec![0.0; cw];
        p.init_w.matvec_t_add(&d_init_pre, &mut d_mean);
        let inv_n = 1.0 / enc.len() as f64;
        for da in d_ann.iter_mut() {
            axpy(inv_n, &d_mean, da);
        }
    }

    fn backward_encoder(&self, enc: &Encoded, d_ann: &[Vec<f64>], grads: &mut Seq2SeqParams) {
        let p = &self.params;
        let hd = self.config.hidden;
        let n = enc.len();
        let mut d_emb = vec![vec![0.0; self.config.input_width()]; n];

        let mut dh = vec![0.0; hd];
        for j in (0..n).rev() {
            axpy(1.0, &d_ann[j][..hd], &mut dh);
            let (dx, dprev) = gru_backward(&p.enc_fwd, &mut grads.enc_fwd, &enc.fwd[j], &dh);
            axpy(1.0, &dx, &mut d_emb[j]);
            dh = dprev;
        }
        let mut dh = vec![0.0; hd];
        for j in 0..n {
            axpy(1.0, &d_ann[j][hd..], &mut dh);
            let (dx, dprev) = gru_backward(&p.enc_bwd, &mut grads.enc_bwd, &enc.bwd[j], &dh);
            axpy(1.0, &dx, &mut d_emb[j]);
            dh = dprev;
        }
        for (ids, de) in enc.ids.iter().zip(&d_emb) {
            let mut offset = 0;
            for (k, &id) in ids.iter().enumerate() {
                let dim = self.config.factor_dims[k];
                axpy(1.0, &de[offset..offset + dim], grads.factor_embeddings[k].row_mut(id as usize));
                offset += dim;
            }
        }
    }

    /// Backpropagates weighted sequence losses sharing one encoder pass.
    /// Each `(target, coef)` contributes `coef · (−log p(target))`.
    pub fn backward(
        &self,
        enc: &Encoded,
        sequences: &[(&[u32], &[StepCache], f64)],
        grads: &mut Seq2SeqParams,
    ) {
        let mut d_ann = vec![vec![0.0; self.config.context_width()]; enc.len()];
        for &(target, steps, coef) in sequences {
            if coef != 0.0 {
                self.backward_decoder(enc, steps, target, coef, grads, &mut d_ann);
            }
        }
        self.backward_encoder(enc, &d_ann, grads);
    }

    /// Token-averaged cross-entropy over a batch.
    pub fn xent_loss(&self, batch: &[EncodedPair]) -> Result<f64> {
        let mut total = 0.0;
        let mut tokens = 0usize;
        for pair in batch {
            let enc = self.encode(&pair.input)?;
            total -= self.force_decode(&enc, &pair.target)?.0;
            tokens += pair.target.len() + 1;
        }
        Ok(total / tokens.max(1) as f64)
    }

    /// Token-averaged cross-entropy and its gradient (accumulated into `grads`).
    pub fn xent_loss_and_grad(&self, batch: &[EncodedPair], grads: &mut Seq2SeqParams) -> Result<f64> {
        let tokens: usize = batch.iter().map(|p| p.target.len() + 1).sum();
        let coef = 1.0 / tokens.max(1) as f64;
        let mut total = 0.0;
        for pair in batch {
            let enc = self.encode(&pair.input)?;
            let (lp, steps) = self.force_decode(&enc, &pair.target)?;
            total -= lp;
            self.backward(&enc, &[(&pair.target, &steps, coef)], grads);
        }
        Ok(total * coef)
    }

    /// Expected risk `Σ q_i r_i` where `q = softmax(sharpness · log p(sample_i))`,
    /// with its gradient when `grads` is given.
    pub fn expected_risk(
        &self,
        input: &[Vec<u32>],
        samples: &[Vec<u32>],
        risks: &[f64],
        sharpness: f64,
        grads: Option<&mut Seq2SeqParams>,
    ) -> Result<f64> {
        debug_assert_eq!(samples.len(), risks.len());
        let enc = self.encode(input)?;
        let mut log_probs = Vec::with_capacity(samples.len());
        let mut all_steps = Vec::with_capacity(samples.len());
        for s in samples {
            let (lp, steps) = self.force_decode(&enc, s)?;
            log_probs.push(sharpness * lp);
            all_steps.push(steps);
        }
        let q = softmax(&log_probs);
        let expected: f64 = dot(&q, risks);
        if let Some(grads) = grads {
            // d R / d log p_i = sharpness · q_i (r_i − R); the backward pass takes
            // coefficients on −log p, hence the sign flip.
            let coefs: Vec<f64> = q
                .iter()
                .zip(risks)
                .map(|(qi, ri)| -sharpness * qi * (ri - expected))
                .collect();
            let seqs: Vec<(&[u32], &[StepCache], f64)> = samples
                .iter()
                .zip(&all_steps)
                .zip(&coefs)
                .map(|((s, st), &c)| (s.as_slice(), st.as_slice(), c))
                .collect();
            self.backward(&enc, &seqs, grads);
        }
        Ok(expected)
    }
}

/// Concatenates row `ids[k]` of table `k` over all factors.
pub fn embed_factored(tables: &[Tensor], ids: &[u32]) -> Result<Vec<f64>> {
    if ids.len() != tables.len() {
        return Err(NmtError::Arity {
            token: 0,
            expected: tables.len(),
            found: ids.len(),
        });
    }
    let mut out = Vec::with_capacity(tables.iter().map(Tensor::cols).sum());
    for (k, (table, &id)) in tables.iter().zip(ids).enumerate() {
        if id as usize >= table.rows() {
            return Err(NmtError::Lookup { factor: k, id });
        }
        out.extend_from_slice(table.row(id as usize));
    }
    Ok(out)
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::beam::{greedy_decode, sample_sequence};
use super::checkpoint::Checkpoint;
use super::model::{EncodedPair, Seq2Seq};
use super::params::Seq2SeqParams;
use super::{NmtError, Result};
use crate::metrics::{sentence_bleu, BleuStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global L2 gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Save a checkpoint every this many updates (and after the last one).
    pub checkpoint_every: usize,
    pub seed: u64,
    pub dev_max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.005,
            clip_norm: 5.0,
            checkpoint_every: 50,
            seed: 1,
            dev_max_len: 50,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Seq2SeqParams,
    v: Seq2SeqParams,
    t: i32,
}

impl Adam {
    pub fn new(params: &Seq2SeqParams, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Seq2SeqParams, grads: &Seq2SeqParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let grads = grads.named_tensors();
        for (((p, m), v), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                p.data[i] -= self.learning_rate * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

fn scale_grads(grads: &mut Seq2SeqParams, factor: f64) {
    for t in grads.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x *= factor);
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut Seq2SeqParams, max_norm: f64) -> f64 {
    let norm = grads
        .named_tensors()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        scale_grads(grads, max_norm / norm);
    }
    norm
}

fn id_words(ids: &[u32]) -> Vec<String> {
    ids.iter().map(u32::to_string).collect()
}

/// Corpus BLEU of greedy decodes against the targets, over token ids.
pub fn dev_bleu(model: &Seq2Seq, dev: &[EncodedPair], max_len: usize) -> Result<f64> {
    let mut stats = BleuStats::default();
    for pair in dev {
        let enc = model.encode(&pair.input)?;
        let hyp = greedy_decode(model, &enc, max_len)?;
        stats += BleuStats::sentence(&id_words(&hyp.tokens), &id_words(&pair.target));
    }
    Ok(stats.score())
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub checkpoints: Vec<Checkpoint>,
    pub model: Seq2Seq,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Update at which the loss or parameters became non-finite. Training
    /// stops there and keeps the last finite parameters.
    pub diverged_at: Option<u64>,
}

/// Teacher-forced cross-entropy training with Adam. Batches are drawn from a
/// seeded shuffle of `train` each epoch.
pub fn train_xent(model: &Seq2Seq, train: &[EncodedPair], dev: &[EncodedPair], cfg: &TrainConfig) -> Result<TrainRun> {
    if cfg.batch_size == 0 || cfg.checkpoint_every == 0 {
        return Err(NmtError::Config("batch size and checkpoint interval must be positive".into()));
    }
    let mut model = model.clone();
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut checkpoints = Vec::new();
    let mut epoch_loss = Vec::new();
    let mut step: u64 = 0;
    let mut diverged_at = None;

    let snapshot = |model: &Seq2Seq, step: u64| -> Result<Checkpoint> {
        let dev_metric = if dev.is_empty() {
            None
        } else {
            Some(dev_bleu(model, dev, cfg.dev_max_len)?)
        };
        Ok(Checkpoint {
            model: model.clone(),
            step,
            dev_metric,
        })
    };

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<EncodedPair> = chunk.iter().map(|&i| train[i].clone()).collect();
            let mut grads = model.params.zeros_like();
            let loss = match model.xent_loss_and_grad(&batch, &mut grads) {
                Ok(l) if l.is_finite() && grads.is_finite() => l,
                Ok(_) | Err(NmtError::NonFinite) => {
                    diverged_at = Some(step + 1);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            clip_grad_norm(&mut grads, cfg.clip_norm);
            let previous = model.params.clone();
            adam.step(&mut model.params, &grads);
            step += 1;
            if !model.params.is_finite() {
                model.params = previous;
                diverged_at = Some(step);
                break 'epochs;
            }
            total += loss;
            batches += 1;
            if step.is_multiple_of(cfg.checkpoint_every as u64) {
                checkpoints.push(snapshot(&model, step)?);
            }
        }
        let mean = total / batches.max(1) as f64;
        log::info!("epoch {} step {} loss {:.6}", epoch + 1, step, mean);
        epoch_loss.push(mean);
    }
    if checkpoints.last().is_none_or(|c| c.step != step) {
        checkpoints.push(snapshot(&model, step)?);
    }
    Ok(TrainRun {
        checkpoints,
        model,
        epoch_loss,
        diverged_at,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinRiskConfig {
    pub n_samples: usize,
    /// Scale applied to sample log probabilities before renormalizing.
    pub sharpness: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub max_len: usize,
    pub seed: u64,
    /// Sentences in the fixed probe batch.
    pub probe_size: usize,
}

impl Default for MinRiskConfig {
    fn default() -> Self {
        Self {
            n_samples: 5,
            sharpness: 1.0,
            iterations: 20,
            learning_rate: 0.001,
            batch_size: 8,
            clip_norm: 5.0,
            max_len: 50,
            seed: 1,
            probe_size: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinRiskRun {
    pub model: Seq2Seq,
    /// Expected risk on the probe batch before training and after each
    /// iteration.
    pub probe_risk: Vec<f64>,
    /// Sentences skipped because fewer than two distinct samples were drawn.
    pub skipped: usize,
}

struct RiskInstance {
    input: Vec<Vec<u32>>,
    samples: Vec<Vec<u32>>,
    risks: Vec<f64>,
}

fn draw_instance(model: &Seq2Seq, pair: &EncodedPair, cfg: &MinRiskConfig, rng: &mut ChaCha8Rng) -> Result<Option<RiskInstance>> {
    let enc = model.encode(&pair.input)?;
    let mut samples: Vec<Vec<u32>> = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let s = sample_sequence(model, &enc, cfg.max_len, rng)?;
        if !samples.contains(&s) {
            samples.push(s);
        }
    }
    if samples.len() < 2 {
        return Ok(None);
    }
    let reference = id_words(&pair.target);
    let risks = samples
        .iter()
        .map(|s| 1.0 - sentence_bleu(&id_words(s), &reference))
        .collect();
    Ok(Some(RiskInstance {
        input: pair.input.clone(),
        samples,
        risks,
    }))
}

fn probe_risk(model: &Seq2Seq, probe: &[RiskInstance], sharpness: f64) -> Result<f64> {
    let mut total = 0.0;
    for inst in probe {
        total += model.expected_risk(&inst.input, &inst.samples, &inst.risks, sharpness, None)?;
    }
    Ok(total / probe.len().max(1) as f64)
}

/// Fine-tunes by minimizing expected risk `1 − sentence BLEU` over sampled
/// candidates. The probe batch uses samples drawn once from the starting
/// model so its risk is comparable across iterations.
pub fn train_min_risk(model: &Seq2Seq, data: &[EncodedPair], cfg: &MinRiskConfig) -> Result<MinRiskRun> {
    if cfg.batch_size == 0 || cfg.n_samples < 2 {
        return Err(NmtError::Config("min-risk needs batch size ≥ 1 and at least 2 samples".into()));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = Vec::new();
    for pair in data.iter().take(cfg.probe_size) {
        if let Some(inst) = draw_instance(&model, pair, cfg, &mut rng)? {
            probe.push(inst);
        }
    }
    let mut history = vec![probe_risk(&model, &probe, cfg.sharpness)?];
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut skipped = 0;

    for iteration in 0..cfg.iterations {
        let mut grads = model.params.zeros_like();
        let mut used = 0usize;
        for _ in 0..cfg.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let index = order[cursor];
            cursor += 1;
            match draw_instance(&model, &data[index], cfg, &mut rng)? {
                Some(inst) => {
                    model.expected_risk(&inst.input, &inst.samples, &inst.risks, cfg.sharpness, Some(&mut grads))?;
                    used += 1;
                }
                None => {
                    log::warn!("sentence {index}: all samples identical, skipped");
                    skipped += 1;
                }
            }
        }
        if used > 0 {
            scale_grads(&mut grads, 1.0 / used as f64);
            clip_grad_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut model.params, &grads);
            if !model.params.is_finite() {
                return Err(NmtError::NonFinite);
            }
        }
        let risk = probe_risk(&model, &probe, cfg.sharpness)?;
        log::info!("min-risk iteration {} probe risk {:.6}", iteration + 1, risk);
        history.push(risk);
    }
    Ok(MinRiskRun {
        model,
        probe_risk: history,
        skipped,
    })
}

use std::cmp::Ordering;

use rand::Rng;

use super::model::{Encoded, Seq2Seq, StepCache};
use super::{AttentionRecord, Result};
use crate::corpus::{BOS_ID, BREAK_ID, EOS_ID, PAD_ID};
use crate::input::FactoredSentence;

/// Output ids that may never be generated.
#[derive(Debug, Clone, Copy)]
pub struct OutputMask;

impl OutputMask {
    pub fn allows(id: u32) -> bool {
        !matches!(id, PAD_ID | BOS_ID | BREAK_ID)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub n_best: usize,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_width: 5,
            n_best: 1,
            max_len: 50,
        }
    }
}

/// A decoded sequence. `tokens` excludes EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub score: f64,
    pub attention: AttentionRecord,
    /// False when max length was hit before EOS.
    pub finished: bool,
}

struct Partial {
    tokens: Vec<u32>,
    score: f64,
    attention: Vec<Vec<f64>>,
    state: Vec<f64>,
}

/// Descending score, then lower parent index, then lower token id.
pub(crate) fn candidate_order(a: &(f64, usize, u32), b: &(f64, usize, u32)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Beam search over one model, scoring by cumulative log probability
/// without length normalization.
pub fn beam_search(model: &Seq2Seq, input: &FactoredSentence, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    let enc = model.encode_sentence(input)?;
    beam_search_encoded(model, &enc, cfg)
}

pub fn beam_search_encoded(model: &Seq2Seq, enc: &Encoded, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    assert!(cfg.beam_width >= 1, "beam width must be at least 1");
    let mut live = vec![Partial {
        tokens: Vec::new(),
        score: 0.0,
        attention: Vec::new(),
        state: enc.init_state.clone(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..cfg.max_len {
        let outputs: Vec<StepCache> = live
            .iter()
            .map(|h| model.step(enc, &h.state, h.tokens.last().copied().unwrap_or(BOS_ID)))
            .collect::<Result<_>>()?;
        let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
        for (hi, (h, out)) in live.iter().zip(&outputs).enumerate() {
            for (tok, lp) in out.log_probs.iter().enumerate() {
                if OutputMask::allows(tok as u32) {
                    candidates.push((h.score + lp, hi, tok as u32));
                }
            }
        }
        candidates.sort_by(candidate_order);
        candidates.truncate(cfg.beam_width - finished.len());

        let mut next = Vec::with_capacity(candidates.len());
        for (score, hi, tok) in candidates {
            let parent = &live[hi];
            let mut attention = parent.attention.clone();
            attention.push(outputs[hi].attention.clone());
            if tok == EOS_ID {
                finished.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    score,
                    attention: AttentionRecord::from_rows(attention),
                    finished: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                next.push(Partial {
                    tokens,
                    score,
                    attention,
                    state: outputs[hi].state().to_vec(),
                });
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= cfg.beam_width {
            break;
        }
    }

    finished.sort_by(|a, b| b.score.total_cmp(&a.score));
    if finished.len() < cfg.n_best {
        let mut rest: Vec<Hypothesis> = live
            .into_iter()
            .map(|p| Hypothesis {
                tokens: p.tokens,
                score: p.score,
                attention: AttentionRecord::from_rows(p.attention),
                finished: false,
            })
            .collect();
        rest.sort_by(|a, b| b.score.total_cmp(&a.score));
        finished.extend(rest);
    }
    finished.truncate(cfg.n_best.max(1));
    Ok(finished)
}

/// Step-by-step argmax decoding (lowest id on ties).
pub fn greedy_decode(model: &Seq2Seq, enc: &Encoded, max_len: usize) -> Result<Hypothesis> {
    let mut tokens = Vec::new();
    let mut rows = Vec::new();
    let mut score = 0.0;
    let mut state = enc.init_state.clone();
    let mut prev = BOS_ID;
    for _ in 0..max_len {
        let out = model.step(enc, &state, prev)?;
        let mut best = EOS_ID;
        for (tok, &lp) in out.log_probs.iter().enumerate() {
            if OutputMask::allows(tok as u32) && lp > out.log_probs[best as usize] {
                best = tok as u32;
            }
        }
        score += out.log_probs[best as usize];
        rows.push(out.attention.clone());
        if best == EOS_ID {
            return Ok(Hypothesis {
                tokens,
                score,
                attention: AttentionRecord::from_rows(rows),
                finished: true,
            });
        }
        tokens.push(best);
        state = out.state().to_vec();
        prev = best;
    }
    Ok(Hypothesis {
        tokens,
        score,
        attention: AttentionRecord::from_rows(rows),
        finished: false,
    })
}

/// Ancestral sample from the model restricted to generable ids. Returns the
/// tokens (EOS excluded).
pub fn sample_sequence(model: &Seq2Seq, enc: &Encoded, max_len: usize, rng: &mut impl Rng) -> Result<Vec<u32>> {
    let mut tokens = Vec::new();
    let mut state = enc.init_state.clone();
    let mut prev = BOS_ID;
    for _ in 0..max_len {
        let out = model.step(enc, &state, prev)?;
        let weights: Vec<f64> = out
            .log_probs
            .iter()
            .enumerate()
            .map(|(t, lp)| if OutputMask::allows(t as u32) { lp.exp() } else { 0.0 })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut threshold = rng.gen::<f64>() * total;
        let mut choice = EOS_ID;
        for (t, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                choice = t as u32;
                threshold -= w;
                if threshold <= 0.0 {
                    break;
                }
            }
        }
        if choice == EOS_ID {
            break;
        }
        tokens.push(choice);
        state = out.state().to_vec();
        prev = choice;
    }
    Ok(tokens)
}

/// Force-decodes `mt` under a source-input model and reads one attention row
/// per MT token. Returns the argmax source position per token (lowest index
/// on ties) and the rows.
pub fn extract_alignments<S: AsRef<str>>(
    model: &Seq2Seq,
    src: &FactoredSentence,
    mt: &[S],
) -> Result<(Vec<usize>, AttentionRecord)> {
    if mt.is_empty() {
        return Ok((Vec::new(), AttentionRecord::default()));
    }
    let enc = model.encode_sentence(src)?;
    let target = model.encode_target(mt);
    let (_, steps) = model.force_decode(&enc, &target)?;
    let rows: Vec<Vec<f64>> = steps
        .into_iter()
        .take(mt.len())
        .map(|s| s.attention)
        .collect();
    let record = AttentionRecord::from_rows(rows);
    Ok((record.argmax_alignment(), record))
}

/// Wraps a bare-input model as a sentence translator.
pub struct ModelTranslator<'a> {
    pub model: &'a Seq2Seq,
    pub beam: BeamConfig,
}

impl crate::corpus::Translator for ModelTranslator<'_> {
    fn translate(&self, sentence: &[String]) -> std::result::Result<Vec<String>, String> {
        let input = FactoredSentence::from_surfaces(sentence, self.model.config.input_kind);
        let hyps = beam_search(self.model, &input, &self.beam).map_err(|e| e.to_string())?;
        Ok(self.model.target_vocab.decode(&hyps[0].tokens))
    }
}

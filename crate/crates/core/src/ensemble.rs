//! Weighted log-linear ensembles of models that read different input
//! representations but share one output vocabulary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS_ID, EOS_ID};
use crate::input::{FactoredSentence, ModelInputKind};
use crate::mert::{Candidate, NBestDecoder};
use crate::nmt::tensor::dot;
use crate::nmt::{BeamConfig, Checkpoint, Encoded, NmtError, OutputMask, Seq2Seq, StepCache};
use crate::subword::desegment_surfaces;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("an ensemble needs at least one member")]
    Empty,
    #[error("{members} members but {weights} weights")]
    WeightCount { members: usize, weights: usize },
    #[error("weight {index} is not finite")]
    NonFiniteWeight { index: usize },
    #[error("member {member} ({name}) has a different output vocabulary")]
    IncompatibleVocab { member: usize, name: String },
    #[error("member {member} expects {expected} input, bundle has {found}")]
    BundleKind {
        member: usize,
        expected: ModelInputKind,
        found: ModelInputKind,
    },
    #[error("bundle has {found} inputs for {expected} members")]
    BundleSize { expected: usize, found: usize },
    #[error("n-best line {line}: {reason}")]
    NBestFormat { line: usize, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Nmt(#[from] NmtError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

#[derive(Debug, Clone)]
pub struct EnsembleMember {
    pub name: String,
    pub kind: ModelInputKind,
    pub model: Seq2Seq,
}

/// Ordered members with one real weight each. Weights may be negative.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    members: Vec<EnsembleMember>,
    weights: Vec<f64>,
}

fn check_weights(weights: &[f64], members: usize) -> Result<()> {
    if weights.len() != members {
        return Err(EnsembleError::WeightCount {
            members,
            weights: weights.len(),
        });
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
        return Err(EnsembleError::NonFiniteWeight { index });
    }
    Ok(())
}

impl EnsembleSpec {
    pub fn new(members: Vec<EnsembleMember>, weights: Vec<f64>) -> Result<Self> {
        let first = members.first().ok_or(EnsembleError::Empty)?;
        check_weights(&weights, members.len())?;
        let hash = first.model.target_vocab.content_hash();
        for (i, m) in members.iter().enumerate().skip(1) {
            if m.model.target_vocab.content_hash() != hash {
                return Err(EnsembleError::IncompatibleVocab {
                    member: i,
                    name: m.name.clone(),
                });
            }
        }
        Ok(Self { members, weights })
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(|m| m.name.clone()).collect()
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        check_weights(&weights, self.members.len())?;
        self.weights = weights;
        Ok(())
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.set_weights(weights)?;
        Ok(out)
    }

    /// Checks that `bundle` lines up with the member input kinds.
    pub fn check_bundle(&self, bundle: &[FactoredSentence]) -> Result<()> {
        if bundle.len() != self.members.len() {
            return Err(EnsembleError::BundleSize {
                expected: self.members.len(),
                found: bundle.len(),
            });
        }
        for (i, (m, s)) in self.members.iter().zip(bundle).enumerate() {
            if m.kind != s.kind {
                return Err(EnsembleError::BundleKind {
                    member: i,
                    expected: m.kind,
                    found: s.kind,
                });
            }
        }
        Ok(())
    }

    pub fn target_symbols(&self, ids: &[u32]) -> Vec<String> {
        self.members[0].model.target_vocab.decode(ids)
    }
}

/// Ensemble hypothesis. `features[k]` is member k's cumulative log
/// probability; `score` is the weighted sum accumulated during search.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleHypothesis {
    pub tokens: Vec<u32>,
    pub features: Vec<f64>,
    pub score: f64,
    pub finished: bool,
}

struct Partial {
    tokens: Vec<u32>,
    features: Vec<f64>,
    score: f64,
    states: Vec<Vec<f64>>,
}

fn candidate_order(a: &(f64, usize, u32), b: &(f64, usize, u32)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// Beam search where every member advances in lockstep and each next token
/// is scored by `Σ_k w_k · log p_k(token)`.
pub fn ensemble_beam_search(
    spec: &EnsembleSpec,
    bundle: &[FactoredSentence],
    cfg: &BeamConfig,
) -> Result<Vec<EnsembleHypothesis>> {
    spec.check_bundle(bundle)?;
    assert!(cfg.beam_width >= 1, "beam width must be at least 1");
    let encoded: Vec<Encoded> = spec
        .members
        .iter()
        .zip(bundle)
        .map(|(m, s)| m.model.encode_sentence(s))
        .collect::<std::result::Result<_, _>>()?;
    let k = spec.members.len();
    let mut live = vec![Partial {
        tokens: Vec::new(),
        features: vec![0.0; k],
        score: 0.0,
        states: encoded.iter().map(|e| e.init_state.clone()).collect(),
    }];
    let mut finished: Vec<EnsembleHypothesis> = Vec::new();
    let vocab = spec.members[0].model.target_vocab.len();

    for _ in 0..cfg.max_len {
        let mut outputs: Vec<Vec<StepCache>> = Vec::with_capacity(live.len());
        for h in &live {
            let prev = h.tokens.last().copied().unwrap_or(BOS_ID);
            let steps = spec
                .members
                .iter()
                .zip(&encoded)
                .zip(&h.states)
                .map(|((m, enc), state)| m.model.step(enc, state, prev))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            outputs.push(steps);
        }
        let mut candidates = Vec::new();
        for (hi, (h, outs)) in live.iter().zip(&outputs).enumerate() {
            for tok in 0..vocab {
                if !OutputMask::allows(tok as u32) {
                    continue;
                }
                let mut combined = 0.0;
                for (w, out) in spec.weights.iter().zip(outs) {
                    combined += w * out.log_probs[tok];
                }
                candidates.push((h.score + combined, hi, tok as u32));
            }
        }
        candidates.sort_by(candidate_order);
        candidates.truncate(cfg.beam_width - finished.len());

        let mut next = Vec::with_capacity(candidates.len());
        for (score, hi, tok) in candidates {
            let parent = &live[hi];
            let features: Vec<f64> = parent
                .features
                .iter()
                .zip(&outputs[hi])
                .map(|(f, out)| f + out.log_probs[tok as usize])
                .collect();
            if tok == EOS_ID {
                finished.push(EnsembleHypothesis {
                    tokens: parent.tokens.clone(),
                    features,
                    score,
                    finished: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                next.push(Partial {
                    tokens,
                    features,
                    score,
                    states: outputs[hi].iter().map(|o| o.state().to_vec()).collect(),
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
        let mut rest: Vec<EnsembleHypothesis> = live
            .into_iter()
            .map(|p| EnsembleHypothesis {
                tokens: p.tokens,
                features: p.features,
                score: p.score,
                finished: false,
            })
            .collect();
        rest.sort_by(|a, b| b.score.total_cmp(&a.score));
        finished.extend(rest);
    }
    finished.truncate(cfg.n_best.max(1));
    Ok(finished)
}

/// Force-decodes each hypothesis under every member. Returns per-member
/// log probabilities and the weighted sum.
pub fn rescore_nbest(
    spec: &EnsembleSpec,
    bundle: &[FactoredSentence],
    hypotheses: &[Vec<u32>],
) -> Result<Vec<(Vec<f64>, f64)>> {
    spec.check_bundle(bundle)?;
    let encoded: Vec<Encoded> = spec
        .members
        .iter()
        .zip(bundle)
        .map(|(m, s)| m.model.encode_sentence(s))
        .collect::<std::result::Result<_, _>>()?;
    hypotheses
        .iter()
        .map(|h| {
            let features = spec
                .members
                .iter()
                .zip(&encoded)
                .map(|(m, enc)| m.model.force_decode(enc, h).map(|(lp, _)| lp))
                .collect::<std::result::Result<Vec<f64>, _>>()?;
            let combined = dot(&spec.weights, &features);
            Ok((features, combined))
        })
        .collect()
}

/// One line of an n-best file.
#[derive(Debug, Clone, PartialEq)]
pub struct NBestEntry {
    pub sentence_id: usize,
    pub tokens: Vec<String>,
    pub features: Vec<f64>,
    pub score: f64,
}

fn join_floats(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").unwrap();
    }
    out
}

impl NBestEntry {
    /// `id ||| tokens ||| f1 ... fK ||| combined`
    pub fn to_line(&self) -> String {
        format!(
            "{} ||| {} ||| {} ||| {}",
            self.sentence_id,
            self.tokens.join(" "),
            join_floats(&self.features),
            self.score
        )
    }

    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let bad = |reason: &str| EnsembleError::NBestFormat {
            line: line_no,
            reason: reason.to_owned(),
        };
        let fields: Vec<&str> = line.split(" ||| ").collect();
        if fields.len() < 4 {
            return Err(bad("expected four ||| separated fields"));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| bad("malformed number"));
        Ok(Self {
            sentence_id: fields[0].trim().parse().map_err(|_| bad("malformed sentence id"))?,
            tokens: fields[1].split_whitespace().map(str::to_owned).collect(),
            features: fields[2].split_whitespace().map(float).collect::<Result<_>>()?,
            score: float(fields[3].trim())?,
        })
    }
}

pub fn write_nbest(path: &Path, entries: &[NBestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| EnsembleError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_nbest(path: &Path) -> Result<Vec<NBestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|source| EnsembleError::Io {
        path: path.to_owned(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| NBestEntry::parse(l, i + 1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub name: String,
    pub checkpoint: PathBuf,
    pub kind: ModelInputKind,
    pub weight: f64,
}

/// On-disk ensemble description. Relative checkpoint paths resolve against
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub members: Vec<ManifestMember>,
}

impl EnsembleManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| EnsembleError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| EnsembleError::Manifest(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|source| EnsembleError::Io {
            path: path.to_owned(),
            source,
        })
    }

    /// Loads every checkpoint and builds the [`EnsembleSpec`].
    pub fn load_spec(&self, base_dir: &Path) -> Result<EnsembleSpec> {
        let mut members = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let path = if m.checkpoint.is_absolute() {
                m.checkpoint.clone()
            } else {
                base_dir.join(&m.checkpoint)
            };
            let ck = Checkpoint::load(&path)?;
            if ck.model.config.input_kind != m.kind {
                return Err(EnsembleError::Manifest(format!(
                    "member {} is declared {} but its checkpoint expects {}",
                    m.name, m.kind, ck.model.config.input_kind
                )));
            }
            members.push(EnsembleMember {
                name: m.name.clone(),
                kind: m.kind,
                model: ck.model,
            });
        }
        EnsembleSpec::new(members, self.members.iter().map(|m| m.weight).collect())
    }
}

/// Target symbols of a hypothesis, desegmented when `marker` is given.
pub fn hypothesis_words(spec: &EnsembleSpec, tokens: &[u32], marker: Option<&str>) -> Vec<String> {
    let symbols = spec.target_symbols(tokens);
    match marker {
        Some(m) => desegment_surfaces(&symbols, m),
        None => symbols,
    }
}

/// Decodes every bundle, in parallel across sentences; output order follows
/// the input.
pub fn decode_corpus(
    spec: &EnsembleSpec,
    bundles: &[Vec<FactoredSentence>],
    cfg: &BeamConfig,
) -> Result<Vec<Vec<EnsembleHypothesis>>> {
    bundles
        .par_iter()
        .map(|b| ensemble_beam_search(spec, b, cfg))
        .collect()
}

/// Regroups per-member corpora (one list of sentences per member) into
/// per-sentence bundles.
pub fn bundles_from_members(per_member: Vec<Vec<FactoredSentence>>) -> Result<Vec<Vec<FactoredSentence>>> {
    let n = per_member.first().map_or(0, Vec::len);
    if let Some(bad) = per_member.iter().find(|c| c.len() != n) {
        return Err(EnsembleError::BundleSize {
            expected: n,
            found: bad.len(),
        });
    }
    let mut bundles: Vec<Vec<FactoredSentence>> = (0..n).map(|_| Vec::with_capacity(per_member.len())).collect();
    for corpus in per_member {
        for (bundle, s) in bundles.iter_mut().zip(corpus) {
            bundle.push(s);
        }
    }
    Ok(bundles)
}

/// Dev-set decoder for tuning: re-runs the ensemble search under each
/// proposed weight vector. The first candidate per sentence is the 1-best
/// of a search with `beam` exactly as configured, so it matches what
/// `decode_corpus` produces with the same settings; the rest come from a
/// search wide enough to return `nbest` hypotheses.
pub struct EnsembleDevDecoder<'a> {
    pub spec: &'a EnsembleSpec,
    pub bundles: &'a [Vec<FactoredSentence>],
    pub beam: BeamConfig,
    pub marker: Option<String>,
}

impl NBestDecoder for EnsembleDevDecoder<'_> {
    fn decode(&self, weights: &[f64], nbest: usize) -> std::result::Result<Vec<Vec<Candidate>>, String> {
        let spec = self.spec.with_weights(weights.to_vec()).map_err(|e| e.to_string())?;
        let narrow = BeamConfig {
            n_best: 1,
            ..self.beam
        };
        let wide = BeamConfig {
            beam_width: self.beam.beam_width.max(nbest),
            n_best: nbest,
            max_len: self.beam.max_len,
        };
        let candidate = |h: EnsembleHypothesis| Candidate {
            tokens: hypothesis_words(&spec, &h.tokens, self.marker.as_deref()),
            features: h.features,
        };
        self.bundles
            .par_iter()
            .map(|b| {
                let first = ensemble_beam_search(&spec, b, &narrow)?.remove(0);
                let mut out = vec![candidate(first.clone())];
                if nbest > 1 {
                    for h in ensemble_beam_search(&spec, b, &wide)? {
                        if h.tokens != first.tokens {
                            out.push(candidate(h));
                        }
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.to_string())
    }
}

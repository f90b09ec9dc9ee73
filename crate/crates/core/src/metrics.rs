//! Corpus BLEU, TER, F1-Mult and tagging accuracy, each backed by additive
//! sufficient statistics.

use std::collections::HashMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::qe::Tag;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{hyps} hypotheses but {refs} references")]
    CountMismatch { hyps: usize, refs: usize },
    #[error("reference {index} is empty")]
    EmptyReference { index: usize },
    #[error("sentence {index}: {pred} predicted tags but {gold} gold tags")]
    TagLengthMismatch { index: usize, pred: usize, gold: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

pub const BLEU_ORDER: usize = 4;

/// Clipped n-gram matches and totals for n = 1..4 plus lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; BLEU_ORDER],
    pub totals: [u64; BLEU_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..BLEU_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

impl Add for BleuStats {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

fn ngram_counts<S: AsRef<str>>(words: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for win in words.windows(n) {
            *counts.entry(win.iter().map(|w| w.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn sentence<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> Self {
        let mut stats = Self {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Self::default()
        };
        for n in 1..=BLEU_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
            stats.matches[n - 1] = h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    /// BLEU in [0, 1]. Unigram precision is unsmoothed; higher orders use
    /// add-one smoothing `(m + 1) / (t + 1)`. No unigram match means 0.
    pub fn score(&self) -> f64 {
        if self.matches[0] == 0 || self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = (self.matches[0] as f64 / self.totals[0] as f64).ln();
        for n in 1..BLEU_ORDER {
            log_sum += ((self.matches[n] + 1) as f64 / (self.totals[n] + 1) as f64).ln();
        }
        let bp = if self.hyp_len >= self.ref_len {
            0.0
        } else {
            1.0 - self.ref_len as f64 / self.hyp_len as f64
        };
        (bp + log_sum / BLEU_ORDER as f64).exp()
    }
}

fn check_counts(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(MetricError::CountMismatch { hyps, refs });
    }
    if hyps == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}

pub fn bleu<S: AsRef<str>, T: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<T>]) -> Result<(f64, BleuStats)> {
    check_counts(hyps.len(), refs.len())?;
    let stats = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| BleuStats::sentence(h, r))
        .fold(BleuStats::default(), Add::add);
    Ok((stats.score(), stats))
}

/// Same smoothing as corpus BLEU, applied to a single pair.
pub fn sentence_bleu<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> f64 {
    BleuStats::sentence(hyp, reference).score()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TerOptions {
    pub shifts: bool,
    pub case_sensitive: bool,
    /// Maximum distance a block may move.
    pub max_shift_distance: usize,
    /// Maximum block length.
    pub max_shift_size: usize,
}

impl Default for TerOptions {
    fn default() -> Self {
        Self {
            shifts: true,
            case_sensitive: false,
            max_shift_distance: 10,
            max_shift_size: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TerStats {
    pub edits: u64,
    pub ref_len: u64,
}

impl AddAssign for TerStats {
    fn add_assign(&mut self, o: Self) {
        self.edits += o.edits;
        self.ref_len += o.ref_len;
    }
}

impl Add for TerStats {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl TerStats {
    pub fn score(&self) -> f64 {
        if self.ref_len == 0 {
            return if self.edits == 0 { 0.0 } else { f64::INFINITY };
        }
        self.edits as f64 / self.ref_len as f64
    }
}

/// Unit-cost Levenshtein distance over interned word ids.
pub(crate) fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn intern<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T], case_sensitive: bool) -> (Vec<u32>, Vec<u32>) {
    let mut table: HashMap<String, u32> = HashMap::new();
    let mut id = |w: &str| {
        let key = if case_sensitive { w.to_owned() } else { w.to_lowercase() };
        let next = table.len() as u32;
        *table.entry(key).or_insert(next)
    };
    let h = hyp.iter().map(|w| id(w.as_ref())).collect();
    let r = reference.iter().map(|w| id(w.as_ref())).collect();
    (h, r)
}

fn apply_shift(seq: &[usize], start: usize, len: usize, dest: usize) -> Vec<usize> {
    let mut rest: Vec<usize> = seq[..start].iter().chain(&seq[start + len..]).copied().collect();
    let block = &seq[start..start + len];
    rest.splice(dest..dest, block.iter().copied());
    rest
}

struct ShiftSearch {
    order: Vec<usize>,
    moved: Vec<bool>,
    shifts: usize,
    edit_distance: usize,
}

/// Greedy block-shift search: repeatedly applies the shift with the largest
/// reduction in edit distance, accepting it only when the reduction exceeds
/// the shift's own cost of one. Ties go to the earliest start, then the
/// shortest block, then the smallest destination.
fn shift_search(h: &[u32], r: &[u32], opts: &TerOptions) -> ShiftSearch {
    let mut order: Vec<usize> = (0..h.len()).collect();
    let mut moved = vec![false; h.len()];
    let mut shifts = 0;
    let words = |order: &[usize]| -> Vec<u32> { order.iter().map(|&i| h[i]).collect() };
    let mut current = levenshtein(&words(&order), r);
    if !opts.shifts {
        return ShiftSearch {
            order,
            moved,
            shifts,
            edit_distance: current,
        };
    }
    loop {
        let cur_words = words(&order);
        let mut best: Option<(usize, Vec<usize>, usize, usize)> = None;
        for start in 0..order.len() {
            for len in 1..=opts.max_shift_size.min(order.len() - start) {
                let block = &cur_words[start..start + len];
                if !r.windows(len).any(|win| win == block) {
                    continue;
                }
                let lo = start.saturating_sub(opts.max_shift_distance);
                let hi = (start + opts.max_shift_distance).min(order.len() - len);
                for dest in lo..=hi {
                    if dest == start {
                        continue;
                    }
                    let candidate = apply_shift(&order, start, len, dest);
                    let ed = levenshtein(&words(&candidate), r);
                    if ed + 1 < current && best.as_ref().is_none_or(|b| ed < b.0) {
                        best = Some((ed, candidate, start, len));
                    }
                }
            }
        }
        match best {
            Some((ed, candidate, start, len)) => {
                for &i in &order[start..start + len] {
                    moved[i] = true;
                }
                order = candidate;
                current = ed;
                shifts += 1;
            }
            None => break,
        }
    }
    ShiftSearch {
        order,
        moved,
        shifts,
        edit_distance: current,
    }
}

/// Number of TER edits (shifts plus insertions, deletions, substitutions).
pub fn ter_edits<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T], opts: &TerOptions) -> u64 {
    let (h, r) = intern(hyp, reference, opts.case_sensitive);
    let s = shift_search(&h, &r, opts);
    (s.shifts + s.edit_distance) as u64
}

/// Final word order after TER shifts (as indices into `hyp`) and which
/// original words were moved.
pub fn ter_shift_alignment<S: AsRef<str>, T: AsRef<str>>(
    hyp: &[S],
    reference: &[T],
    opts: &TerOptions,
) -> (Vec<usize>, Vec<bool>) {
    let (h, r) = intern(hyp, reference, opts.case_sensitive);
    let s = shift_search(&h, &r, &TerOptions { shifts: true, ..*opts });
    (s.order, s.moved)
}

pub fn ter_sentence<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T], opts: &TerOptions) -> TerStats {
    TerStats {
        edits: ter_edits(hyp, reference, opts),
        ref_len: reference.len() as u64,
    }
}

pub fn ter<S: AsRef<str>, T: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<T>],
    opts: &TerOptions,
) -> Result<(f64, TerStats)> {
    check_counts(hyps.len(), refs.len())?;
    if let Some(index) = refs.iter().position(Vec::is_empty) {
        return Err(MetricError::EmptyReference { index });
    }
    let stats = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| ter_sentence(h, r, opts))
        .fold(TerStats::default(), Add::add);
    Ok((stats.score(), stats))
}

/// Per-class confusion counts for OK/BAD tagging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QeConfusion {
    pub tp_ok: u64,
    pub fp_ok: u64,
    pub fn_ok: u64,
    pub tp_bad: u64,
    pub fp_bad: u64,
    pub fn_bad: u64,
}

impl AddAssign for QeConfusion {
    fn add_assign(&mut self, o: Self) {
        self.tp_ok += o.tp_ok;
        self.fp_ok += o.fp_ok;
        self.fn_ok += o.fn_ok;
        self.tp_bad += o.tp_bad;
        self.fp_bad += o.fp_bad;
        self.fn_bad += o.fn_bad;
    }
}

impl Add for QeConfusion {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

impl QeConfusion {
    pub fn sentence(pred: &[Tag], gold: &[Tag]) -> Self {
        let mut c = Self::default();
        for (&p, &g) in pred.iter().zip(gold) {
            match (p, g) {
                (Tag::Ok, Tag::Ok) => c.tp_ok += 1,
                (Tag::Ok, Tag::Bad) => {
                    c.fp_ok += 1;
                    c.fn_bad += 1;
                }
                (Tag::Bad, Tag::Ok) => {
                    c.fn_ok += 1;
                    c.fp_bad += 1;
                }
                (Tag::Bad, Tag::Bad) => c.tp_bad += 1,
            }
        }
        c
    }

    pub fn f1_ok(&self) -> f64 {
        f1(self.tp_ok, self.fp_ok, self.fn_ok)
    }

    pub fn f1_bad(&self) -> f64 {
        f1(self.tp_bad, self.fp_bad, self.fn_bad)
    }

    pub fn f1_mult(&self) -> f64 {
        self.f1_ok() * self.f1_bad()
    }

    pub fn total(&self) -> u64 {
        self.tp_ok + self.fp_ok + self.fn_ok + self.tp_bad
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            (self.tp_ok + self.tp_bad) as f64 / total as f64
        }
    }
}

pub fn qe_confusion(pred: &[Vec<Tag>], gold: &[Vec<Tag>]) -> Result<QeConfusion> {
    check_counts(pred.len(), gold.len())?;
    let mut total = QeConfusion::default();
    for (index, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(MetricError::TagLengthMismatch {
                index,
                pred: p.len(),
                gold: g.len(),
            });
        }
        total += QeConfusion::sentence(p, g);
    }
    Ok(total)
}

pub fn f1_mult(pred: &[Vec<Tag>], gold: &[Vec<Tag>]) -> Result<(f64, QeConfusion)> {
    let c = qe_confusion(pred, gold)?;
    Ok((c.f1_mult(), c))
}

pub fn accuracy(pred: &[Vec<Tag>], gold: &[Vec<Tag>]) -> Result<f64> {
    Ok(qe_confusion(pred, gold)?.accuracy())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: Option<f64>,
    pub ter: Option<f64>,
    pub f1_mult: Option<f64>,
    pub accuracy: Option<f64>,
    pub bleu_stats: Option<BleuStats>,
    pub ter_stats: Option<TerStats>,
    pub qe_stats: Option<QeConfusion>,
}

impl MetricReport {
    pub fn from_stats(bleu: Option<BleuStats>, ter: Option<TerStats>, qe: Option<QeConfusion>) -> Self {
        Self {
            bleu: bleu.map(|s| s.score()),
            ter: ter.map(|s| s.score()),
            f1_mult: qe.map(|s| s.f1_mult()),
            accuracy: qe.map(|s| s.accuracy()),
            bleu_stats: bleu,
            ter_stats: ter,
            qe_stats: qe,
        }
    }

    /// Fixed-width table followed by `key=value` lines.
    pub fn render(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"));
        let mut out = format!(
            "{:>8} {:>8} {:>8} {:>8}\n{:>8} {:>8} {:>8} {:>8}\n",
            "BLEU",
            "TER",
            "F1-Mult",
            "Accuracy",
            cell(self.bleu),
            cell(self.ter),
            cell(self.f1_mult),
            cell(self.accuracy)
        );
        if let Some(s) = &self.bleu_stats {
            out.push_str(&format!("bleu={:.17}\n", s.score()));
            for n in 0..BLEU_ORDER {
                out.push_str(&format!("bleu.match{}={}\nbleu.total{}={}\n", n + 1, s.matches[n], n + 1, s.totals[n]));
            }
            out.push_str(&format!("bleu.hyp_len={}\nbleu.ref_len={}\n", s.hyp_len, s.ref_len));
        }
        if let Some(s) = &self.ter_stats {
            out.push_str(&format!("ter={:.17}\nter.edits={}\nter.ref_len={}\n", s.score(), s.edits, s.ref_len));
        }
        if let Some(s) = &self.qe_stats {
            out.push_str(&format!(
                "f1_mult={:.17}\naccuracy={:.17}\nqe.tp_ok={}\nqe.fp_ok={}\nqe.fn_ok={}\nqe.tp_bad={}\nqe.fp_bad={}\nqe.fn_bad={}\n",
                s.f1_mult(),
                s.accuracy(),
                s.tp_ok,
                s.fp_ok,
                s.fn_ok,
                s.tp_bad,
                s.fp_bad,
                s.fn_bad
            ));
        }
        out
    }
}

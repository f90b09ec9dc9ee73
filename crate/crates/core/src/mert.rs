//! Minimum error rate training of ensemble weights over accumulated n-best
//! pools, using exact line search along the upper envelope of per-sentence
//! score lines.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{ter_sentence, QeConfusion, TerOptions, TerStats};
use crate::nmt::tensor::dot;
use crate::qe::{tag_sentence, Tag, TagOptions};

#[derive(Debug, thiserror::Error)]
pub enum MertError {
    #[error("search direction is all zeros")]
    ZeroDirection,
    #[error("sentence {index}: {what} is required for the {objective} objective")]
    MissingGold {
        index: usize,
        what: &'static str,
        objective: Objective,
    },
    #[error("sentence {index}: {found} features, expected {expected}")]
    FeatureCount {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sentence {index} has no hypotheses")]
    EmptyNBest { index: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error("weights file line {line}: {reason}")]
    WeightsFormat { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, MertError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Minimize corpus TER against the post-edits.
    Ter,
    /// Maximize F1-Mult of tags derived against the MT.
    F1Mult,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Ter => "ter",
            Objective::F1Mult => "f1-mult",
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Objective::Ter => a < b,
            Objective::F1Mult => a > b,
        }
    }

    pub fn worst(self) -> f64 {
        match self {
            Objective::Ter => f64::INFINITY,
            Objective::F1Mult => f64::NEG_INFINITY,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ter" | "ape" => Ok(Objective::Ter),
            "f1-mult" | "f1mult" | "f1_mult" | "qe" => Ok(Objective::F1Mult),
            other => Err(format!("unknown objective {other:?}")),
        }
    }
}

/// Additive sufficient statistics of one objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stats {
    Ter(TerStats),
    Qe(QeConfusion),
}

impl Stats {
    pub fn zero(objective: Objective) -> Self {
        match objective {
            Objective::Ter => Stats::Ter(TerStats::default()),
            Objective::F1Mult => Stats::Qe(QeConfusion::default()),
        }
    }

    fn add(&mut self, other: &Stats) {
        match (self, other) {
            (Stats::Ter(a), Stats::Ter(b)) => *a += *b,
            (Stats::Qe(a), Stats::Qe(b)) => *a += *b,
            _ => panic!("mixed statistics"),
        }
    }

    fn sub(&mut self, other: &Stats) {
        match (self, other) {
            (Stats::Ter(a), Stats::Ter(b)) => {
                a.edits -= b.edits;
                a.ref_len -= b.ref_len;
            }
            (Stats::Qe(a), Stats::Qe(b)) => {
                a.tp_ok -= b.tp_ok;
                a.fp_ok -= b.fp_ok;
                a.fn_ok -= b.fn_ok;
                a.tp_bad -= b.tp_bad;
                a.fp_bad -= b.fp_bad;
                a.fn_bad -= b.fn_bad;
            }
            _ => panic!("mixed statistics"),
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Stats::Ter(s) => s.score(),
            Stats::Qe(s) => s.f1_mult(),
        }
    }

    /// Space-separated integer columns.
    pub fn columns(&self) -> String {
        match self {
            Stats::Ter(s) => format!("{} {}", s.edits, s.ref_len),
            Stats::Qe(s) => format!(
                "{} {} {} {} {} {}",
                s.tp_ok, s.fp_ok, s.fn_ok, s.tp_bad, s.fp_bad, s.fn_bad
            ),
        }
    }
}

/// Reference data for one dev sentence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentenceGold {
    pub mt: Vec<String>,
    pub pe: Option<Vec<String>>,
    pub tags: Option<Vec<Tag>>,
}

/// Statistics of one hypothesis: TER edits against the post-edit, or the
/// confusion of tags derived from aligning the MT to the hypothesis.
pub fn hypothesis_stats<S: AsRef<str>>(
    hypothesis: &[S],
    gold: &SentenceGold,
    objective: Objective,
    index: usize,
) -> Result<Stats> {
    match objective {
        Objective::Ter => {
            let pe = gold.pe.as_ref().ok_or(MertError::MissingGold {
                index,
                what: "a post-edit",
                objective,
            })?;
            Ok(Stats::Ter(ter_sentence(hypothesis, pe, &TerOptions::default())))
        }
        Objective::F1Mult => {
            let tags = gold.tags.as_ref().ok_or(MertError::MissingGold {
                index,
                what: "gold tags",
                objective,
            })?;
            let predicted = tag_sentence(&gold.mt, hypothesis, TagOptions::default());
            Ok(Stats::Qe(QeConfusion::sentence(&predicted, tags)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub tokens: Vec<String>,
    pub features: Vec<f64>,
    pub stats: Stats,
}

/// Per-sentence hypotheses accumulated across iterations, deduplicated by
/// token sequence.
#[derive(Debug, Clone, Default)]
pub struct Pool {
    pub sentences: Vec<Vec<PoolEntry>>,
    seen: Vec<HashSet<Vec<String>>>,
}

impl Pool {
    pub fn new(sentences: usize) -> Self {
        Self {
            sentences: vec![Vec::new(); sentences],
            seen: vec![HashSet::new(); sentences],
        }
    }

    /// Adds an entry unless its tokens are already present. Returns whether
    /// it was new.
    pub fn insert(&mut self, sentence: usize, entry: PoolEntry) -> bool {
        if self.seen[sentence].insert(entry.tokens.clone()) {
            self.sentences[sentence].push(entry);
            true
        } else {
            false
        }
    }

    pub fn size(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Index of the highest-scoring hypothesis under `weights`; ties go to the
/// lowest index.
pub fn rerank(entries: &[PoolEntry], weights: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, e) in entries.iter().enumerate() {
        let s = dot(weights, &e.features);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Corpus objective of the pool's 1-best hypotheses under `weights`.
pub fn pool_objective(pool: &[Vec<PoolEntry>], weights: &[f64], objective: Objective) -> f64 {
    let mut total = Stats::zero(objective);
    for entries in pool {
        if !entries.is_empty() {
            total.add(&entries[rerank(entries, weights)].stats);
        }
    }
    total.value()
}

/// Upper envelope of lines `intercept + γ · slope`: the winning hypothesis
/// on each interval, as `(interval start, index)` with the first start at
/// −∞. Identical lines resolve to the lowest index.
pub fn upper_envelope(lines: &[(f64, f64)]) -> Vec<(f64, usize)> {
    // Adding 0.0 turns -0.0 into +0.0; total_cmp would otherwise order them.
    let lines: Vec<(f64, f64)> = lines.iter().map(|&(b, m)| (b + 0.0, m + 0.0)).collect();
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.sort_by(|&a, &b| {
        lines[a]
            .1
            .total_cmp(&lines[b].1)
            .then(lines[b].0.total_cmp(&lines[a].0))
            .then(a.cmp(&b))
    });
    let mut hull: Vec<(f64, usize)> = Vec::new();
    for &i in &order {
        let (b, m) = lines[i];
        if let Some(&(_, last)) = hull.last() {
            if lines[last].1 == m {
                continue;
            }
        }
        let mut start = f64::NEG_INFINITY;
        while let Some(&(last_start, last)) = hull.last() {
            let (lb, lm) = lines[last];
            let x = (lb - b) / (m - lm);
            if x <= last_start {
                hull.pop();
                start = f64::NEG_INFINITY;
            } else {
                start = x;
                break;
            }
        }
        hull.push((start, i));
    }
    hull
}

/// Result of one exact line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub gamma: f64,
    pub value: f64,
}

/// Finds the step γ along `direction` from `weights` that optimizes the
/// corpus objective over the pool.
///
/// Each interval between envelope breakpoints is represented by 0 when it
/// contains 0, by its midpoint when bounded, and by its finite end ± 1
/// otherwise. Ties go to the smallest |γ|, then the smallest γ.
pub fn line_search(
    pool: &[Vec<PoolEntry>],
    weights: &[f64],
    direction: &[f64],
    objective: Objective,
) -> Result<LineSearchResult> {
    if direction.iter().all(|&d| d == 0.0) {
        return Err(MertError::ZeroDirection);
    }
    let mut total = Stats::zero(objective);
    let mut events: Vec<(f64, usize, usize)> = Vec::new();
    let mut current: Vec<usize> = Vec::with_capacity(pool.len());
    for (s, entries) in pool.iter().enumerate() {
        if entries.is_empty() {
            current.push(usize::MAX);
            continue;
        }
        let lines: Vec<(f64, f64)> = entries
            .iter()
            .map(|e| (dot(weights, &e.features), dot(direction, &e.features)))
            .collect();
        let env = upper_envelope(&lines);
        total.add(&entries[env[0].1].stats);
        current.push(env[0].1);
        for &(x, h) in &env[1..] {
            events.push((x, s, h));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best: Option<LineSearchResult> = None;
    let mut consider = |gamma: f64, value: f64| {
        let take = match best {
            None => true,
            Some(b) => {
                objective.better(value, b.value)
                    || (value == b.value
                        && (gamma.abs() < b.gamma.abs() || (gamma.abs() == b.gamma.abs() && gamma < b.gamma)))
            }
        };
        if take {
            best = Some(LineSearchResult { gamma, value });
        }
    };

    let mut lo = f64::NEG_INFINITY;
    let mut i = 0;
    loop {
        let hi = events.get(i).map_or(f64::INFINITY, |e| e.0);
        let gamma = if lo < 0.0 && 0.0 < hi {
            0.0
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if hi.is_finite() {
            hi - 1.0
        } else if lo.is_finite() {
            lo + 1.0
        } else {
            0.0
        };
        if lo < hi {
            consider(gamma, total.value());
        }
        if i == events.len() {
            break;
        }
        let x = events[i].0;
        while i < events.len() && events[i].0 == x {
            let (_, s, h) = events[i];
            total.sub(&pool[s][current[s]].stats);
            total.add(&pool[s][h].stats);
            current[s] = h;
            i += 1;
        }
        lo = x;
    }
    Ok(best.expect("at least one interval"))
}

pub fn l1_normalize(weights: &[f64]) -> Vec<f64> {
    let norm: f64 = weights.iter().map(|w| w.abs()).sum();
    if norm == 0.0 {
        weights.to_vec()
    } else {
        weights.iter().map(|w| w / norm).collect()
    }
}

fn random_unit(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunerConfig {
    pub iterations: usize,
    pub random_directions: usize,
    pub restarts: usize,
    /// Stop once an iteration adds no new hypotheses and improves the pool
    /// objective by less than this.
    pub threshold: f64,
    pub objective: Objective,
    pub nbest: usize,
    pub seed: u64,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            random_directions: 8,
            restarts: 4,
            threshold: 1e-6,
            objective: Objective::Ter,
            nbest: 12,
            seed: 1,
        }
    }
}

/// A decoded candidate with its per-member feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<String>,
    pub features: Vec<f64>,
}

/// Produces n-best lists (1-best first) for the dev set under given weights.
pub trait NBestDecoder {
    fn decode(&self, weights: &[f64], nbest: usize) -> std::result::Result<Vec<Vec<Candidate>>, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective of the decoded 1-best under the weights of this iteration.
    pub decoded_objective: f64,
    pub pool_size: usize,
    pub new_hypotheses: usize,
    pub pool_before: f64,
    pub pool_after: f64,
    pub weights_after: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MertResult {
    pub weights: Vec<f64>,
    /// Decoded dev objective of `weights`.
    pub objective: f64,
    pub history: Vec<IterationRecord>,
    pub pool: Pool,
    /// Set when decoding failed and the incumbent was returned.
    pub aborted: Option<String>,
}

fn decoded_objective(
    nbest: &[Vec<Candidate>],
    golds: &[SentenceGold],
    objective: Objective,
) -> Result<(f64, Vec<Vec<PoolEntry>>)> {
    let mut total = Stats::zero(objective);
    let mut entries = Vec::with_capacity(nbest.len());
    for (index, (cands, gold)) in nbest.iter().zip(golds).enumerate() {
        if cands.is_empty() {
            return Err(MertError::EmptyNBest { index });
        }
        let sentence: Vec<PoolEntry> = cands
            .iter()
            .map(|c| {
                Ok(PoolEntry {
                    tokens: c.tokens.clone(),
                    features: c.features.clone(),
                    stats: hypothesis_stats(&c.tokens, gold, objective, index)?,
                })
            })
            .collect::<Result<_>>()?;
        total.add(&sentence[0].stats);
        entries.push(sentence);
    }
    Ok((total.value(), entries))
}

/// Coordinate-free local search from `start`: repeatedly moves along the
/// best of `directions` until no line search improves the pool objective.
fn optimize_from(
    pool: &[Vec<PoolEntry>],
    start: Vec<f64>,
    directions: &[Vec<f64>],
    objective: Objective,
) -> Result<(Vec<f64>, f64)> {
    let mut w = start;
    let mut value = pool_objective(pool, &w, objective);
    for _ in 0..50 {
        let mut best: Option<(f64, usize, f64)> = None;
        for (di, d) in directions.iter().enumerate() {
            let r = line_search(pool, &w, d, objective)?;
            if r.gamma != 0.0
                && objective.better(r.value, value)
                && best.is_none_or(|(v, _, _)| objective.better(r.value, v))
            {
                best = Some((r.value, di, r.gamma));
            }
        }
        match best {
            Some((v, di, gamma)) => {
                for (wk, dk) in w.iter_mut().zip(&directions[di]) {
                    *wk += gamma * dk;
                }
                value = v;
            }
            None => break,
        }
    }
    Ok((w, value))
}

/// Iterated MERT. Each iteration decodes the dev set, merges the n-best
/// lists into the pool, searches from the current point and from seeded
/// random restarts, and moves to the best point found (L1-normalized). The
/// returned weights are those whose decoded dev objective was best, with
/// earlier iterations winning ties, so tuning never ends worse on the dev
/// set than the starting weights.
pub fn mert_tune(
    initial: &[f64],
    decoder: &dyn NBestDecoder,
    golds: &[SentenceGold],
    cfg: &TunerConfig,
) -> Result<MertResult> {
    let k = initial.len();
    if k == 0 {
        return Err(MertError::Config("no weights to tune".into()));
    }
    let objective = cfg.objective;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = l1_normalize(initial);
    let mut pool = Pool::new(golds.len());
    let mut history = Vec::new();
    let mut best_weights = w.clone();
    let mut best_value = objective.worst();
    let mut aborted = None;

    let mut iteration = 0;
    loop {
        let nbest = match decoder.decode(&w, cfg.nbest) {
            Ok(n) => n,
            Err(e) => {
                log::error!("decoding failed in iteration {iteration}: {e}");
                aborted = Some(e);
                break;
            }
        };
        for (index, cands) in nbest.iter().enumerate() {
            if let Some(c) = cands.iter().find(|c| c.features.len() != k) {
                return Err(MertError::FeatureCount {
                    index,
                    expected: k,
                    found: c.features.len(),
                });
            }
        }
        let (decoded, entries) = decoded_objective(&nbest, golds, objective)?;
        if objective.better(decoded, best_value) {
            best_value = decoded;
            best_weights = w.clone();
        }
        if iteration == cfg.iterations {
            break;
        }
        iteration += 1;

        let mut new_hypotheses = 0;
        for (s, sentence) in entries.into_iter().enumerate() {
            for e in sentence {
                new_hypotheses += usize::from(pool.insert(s, e));
            }
        }
        let pool_before = pool_objective(&pool.sentences, &w, objective);

        let mut directions: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for _ in 0..cfg.random_directions {
            directions.push(random_unit(k, &mut rng));
        }
        let (mut best_w, mut best_pool) = optimize_from(&pool.sentences, w.clone(), &directions, objective)?;
        for _ in 0..cfg.restarts {
            let start: Vec<f64> = l1_normalize(&(0..k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
            let (cand, value) = optimize_from(&pool.sentences, start, &directions, objective)?;
            if objective.better(value, best_pool) {
                best_w = cand;
                best_pool = value;
            }
        }
        if !objective.better(best_pool, pool_before) {
            best_w = w.clone();
        }
        w = l1_normalize(&best_w);
        let pool_after = pool_objective(&pool.sentences, &w, objective);
        log::info!(
            "mert iteration {iteration}: decoded {decoded:.6} pool {pool_before:.6} -> {pool_after:.6} ({} hypotheses, {new_hypotheses} new)",
            pool.size()
        );
        history.push(IterationRecord {
            iteration,
            decoded_objective: decoded,
            pool_size: pool.size(),
            new_hypotheses,
            pool_before,
            pool_after,
            weights_after: w.clone(),
        });
        let gain = (pool_after - pool_before).abs();
        if new_hypotheses == 0 && gain < cfg.threshold {
            iteration = cfg.iterations;
        }
    }
    Ok(MertResult {
        weights: best_weights,
        objective: best_value,
        history,
        pool,
        aborted,
    })
}

/// Tab-separated `name weight` lines preceded by `#` header comments.
pub fn write_weights(
    path: &Path,
    names: &[String],
    weights: &[f64],
    objective: Objective,
    iterations: usize,
    dev_objective: f64,
) -> Result<()> {
    let mut text = format!(
        "# objective: {objective}\n# iterations: {iterations}\n# dev_objective: {dev_objective}\n"
    );
    for (n, w) in names.iter().zip(weights) {
        text.push_str(&format!("{n}\t{w}\n"));
    }
    std::fs::write(path, text).map_err(|source| MertError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads a weights file, returning `(name, weight)` pairs in file order.
pub fn read_weights(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|source| MertError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| MertError::WeightsFormat {
            line: i + 1,
            reason: reason.to_owned(),
        };
        let (name, value) = line.split_once('\t').ok_or_else(|| bad("expected name<TAB>weight"))?;
        let w: f64 = value.trim().parse().map_err(|_| bad("malformed weight"))?;
        out.push((name.to_owned(), w));
    }
    Ok(out)
}

/// Pool in n-best format with the statistic columns appended.
pub fn write_pool(path: &Path, pool: &Pool, weights: &[f64]) -> Result<()> {
    let mut text = String::new();
    for (s, entries) in pool.sentences.iter().enumerate() {
        for e in entries {
            let feats: Vec<String> = e.features.iter().map(|f| f.to_string()).collect();
            text.push_str(&format!(
                "{s} ||| {} ||| {} ||| {} ||| {}\n",
                e.tokens.join(" "),
                feats.join(" "),
                dot(weights, &e.features),
                e.stats.columns()
            ));
        }
    }
    std::fs::write(path, text).map_err(|source| MertError::Io {
        path: path.to_owned(),
        source,
    })
}

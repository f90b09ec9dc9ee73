//! Reference implementations that share no code with the library routines
//! they check.

use apeqe::corpus::EOS_ID;
use apeqe::mert::{line_search, Objective, PoolEntry, Stats};
use apeqe::metrics::{ter, TerOptions, TerStats};
use apeqe::nmt::{beam_search, BeamConfig, Encoded, ModelConfig, OutputMask, Seq2Seq};
use apeqe::qe::edit_align;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sentence, vocab};
use apeqe::input::ModelInputKind;

/// Unit-cost edit distance by memoized recursion over suffixes.
pub fn edit_distance_recursive(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], i: usize, j: usize, memo: &mut [Option<usize>], width: usize) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(v) = memo[i * width + j] {
            return v;
        }
        let sub = go(a, b, i + 1, j + 1, memo, width) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, memo, width) + 1;
        let ins = go(a, b, i, j + 1, memo, width) + 1;
        let v = sub.min(del).min(ins);
        memo[i * width + j] = Some(v);
        v
    }
    let width = b.len() + 1;
    let mut memo = vec![None; (a.len() + 1) * width];
    go(a, b, 0, 0, &mut memo, width)
}

fn all_sequences<'a>(alphabet: &[&'a str], max_len: usize) -> Vec<Vec<&'a str>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t: Vec<&str> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub struct OracleSummary {
    pub cases: usize,
    pub mismatches: usize,
}

/// (a) Every pair over {a, b} up to length 8, plus random pairs over a
/// five-letter alphabet.
pub fn edit_align_oracle() -> OracleSummary {
    let seqs = all_sequences(&["a", "b"], 8);
    let mut summary = OracleSummary { cases: 0, mismatches: 0 };
    for x in &seqs {
        for y in &seqs {
            summary.cases += 1;
            if edit_align(x, y, true).cost() != edit_distance_recursive(x, y) {
                summary.mismatches += 1;
            }
        }
    }
    let letters = ["a", "b", "c", "d", "e"];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20_000 {
        let x: Vec<&str> = (0..rng.gen_range(0..=8)).map(|_| letters[rng.gen_range(0..5)]).collect();
        let y: Vec<&str> = (0..rng.gen_range(0..=8)).map(|_| letters[rng.gen_range(0..5)]).collect();
        summary.cases += 1;
        if edit_align(&x, &y, true).cost() != edit_distance_recursive(&x, &y) {
            summary.mismatches += 1;
        }
    }
    summary
}

/// Best-scoring complete sequence of at most `depth` tokens plus EOS, by
/// scoring every candidate with forced decoding.
fn enumerate(m: &Seq2Seq, enc: &Encoded, prefix: &mut Vec<u32>, depth: usize, best: &mut (f64, Vec<u32>)) {
    let (score, _) = m.force_decode(enc, prefix).unwrap();
    if score > best.0 {
        *best = (score, prefix.clone());
    }
    if depth == 0 {
        return;
    }
    for tok in 0..m.target_vocab.len() as u32 {
        if OutputMask::allows(tok) && tok != EOS_ID {
            prefix.push(tok);
            enumerate(m, enc, prefix, depth - 1, best);
            prefix.pop();
        }
    }
}

/// (b) Output vocabulary of five emittable symbols (EOS, UNK and three
/// words), length ≤ 4 including EOS, beam width 5^4.
pub fn exhaustive_beam_oracle(seeds: u64) -> OracleSummary {
    let config = ModelConfig::with_width(ModelInputKind::Src, 4);
    let mut summary = OracleSummary { cases: 0, mismatches: 0 };
    for seed in 0..seeds {
        let mut m = Seq2Seq::new(config.clone(), vec![vocab(&["a", "b"])], vocab(&["x", "y", "z"]), seed).unwrap();
        // Sharpen the distributions so the argmax is not decided by noise.
        for t in m.params.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= 8.0);
        }
        for input in ["a b a", "b", "a a b b"] {
            let s = sentence(ModelInputKind::Src, input);
            let enc = m.encode_sentence(&s).unwrap();
            let mut best = (f64::NEG_INFINITY, Vec::new());
            enumerate(&m, &enc, &mut Vec::new(), 3, &mut best);
            let cfg = BeamConfig {
                beam_width: 625,
                n_best: 1,
                max_len: 4,
            };
            let hyp = &beam_search(&m, &s, &cfg).unwrap()[0];
            summary.cases += 1;
            if !hyp.finished || hyp.tokens != best.1 || (hyp.score - best.0).abs() > 1e-9 {
                summary.mismatches += 1;
            }
        }
    }
    summary
}

fn grid_value(pool: &[Vec<PoolEntry>], w: &[f64], d: &[f64], gamma: f64) -> f64 {
    let (mut edits, mut len) = (0u64, 0u64);
    for entries in pool {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, e) in entries.iter().enumerate() {
            let score: f64 = e.features.iter().zip(w.iter().zip(d)).map(|(f, (w, d))| f * (w + gamma * d)).sum();
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        match &entries[best].stats {
            Stats::Ter(s) => {
                edits += s.edits;
                len += s.ref_len;
            }
            Stats::Qe(_) => unreachable!(),
        }
    }
    edits as f64 / len as f64
}

pub struct LineSearchSummary {
    pub instances: usize,
    pub mismatches: usize,
    pub max_gap: f64,
}

/// (c) Integer features in [−2, 2], weights in [−2, 2] and directions in
/// {−1, 0, 1} with at most three features put every breakpoint in [−24, 24]
/// on fractions with denominators ≤ 12, so distinct breakpoints are at least
/// 1/144 apart. A 10,000-point grid over [−30, 30] (step 0.006) therefore
/// visits every envelope interval.
pub fn line_search_oracle(instances: usize) -> LineSearchSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut summary = LineSearchSummary {
        instances,
        mismatches: 0,
        max_gap: 0.0,
    };
    for _ in 0..instances {
        let k = rng.gen_range(2..=3);
        let pool: Vec<Vec<PoolEntry>> = (0..rng.gen_range(3..=6))
            .map(|_| {
                let ref_len = rng.gen_range(3..=10);
                (0..rng.gen_range(2..=5))
                    .map(|i| PoolEntry {
                        tokens: vec![i.to_string()],
                        features: (0..k).map(|_| rng.gen_range(-2..=2) as f64).collect(),
                        stats: Stats::Ter(TerStats {
                            edits: rng.gen_range(0..=ref_len),
                            ref_len,
                        }),
                    })
                    .collect()
            })
            .collect();
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(-2..=2) as f64).collect();
        let mut d: Vec<f64> = (0..k).map(|_| rng.gen_range(-1..=1) as f64).collect();
        if d.iter().all(|&x| x == 0.0) {
            d[0] = 1.0;
        }
        let found = line_search(&pool, &w, &d, Objective::Ter).unwrap();
        let offset = std::f64::consts::PI * 1e-7;
        let grid_best = (0..10_000)
            .map(|i| -30.0 + (i as f64 + 0.5) * 60.0 / 10_000.0 + offset)
            .map(|g| grid_value(&pool, &w, &d, g))
            .fold(f64::INFINITY, f64::min);
        let at_gamma = grid_value(&pool, &w, &d, found.gamma);
        let gap = (found.value - grid_best).abs().max((at_gamma - found.value).abs());
        summary.max_gap = summary.max_gap.max(gap);
        if gap > 1e-12 {
            summary.mismatches += 1;
        }
    }
    summary
}

pub struct TerSummary {
    pub corpora: usize,
    pub violations: usize,
    pub plain_mismatches: usize,
}

/// (d) TER with shifts never exceeds TER without, and the shift-free score
/// equals summed recursive edit distance over summed reference length.
pub fn ter_shift_oracle(corpora: usize) -> TerSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let words = ["a", "b", "c", "d", "e", "f"];
    let mut summary = TerSummary {
        corpora,
        violations: 0,
        plain_mismatches: 0,
    };
    for _ in 0..corpora {
        let n = rng.gen_range(1..=8);
        let mut hyps = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..n {
            let r: Vec<&str> = (0..rng.gen_range(1..=12)).map(|_| words[rng.gen_range(0..6)]).collect();
            // Hypotheses are shuffled, edited copies so shifts matter.
            let mut h = r.clone();
            let cut = rng.gen_range(0..=h.len());
            h.rotate_left(cut);
            for _ in 0..rng.gen_range(0..3) {
                if !h.is_empty() {
                    let i = rng.gen_range(0..h.len());
                    h[i] = words[rng.gen_range(0..6)];
                }
            }
            hyps.push(h);
            refs.push(r);
        }
        let shifted = ter(&hyps, &refs, &TerOptions::default()).unwrap().0;
        let plain_opts = TerOptions {
            shifts: false,
            ..TerOptions::default()
        };
        let plain = ter(&hyps, &refs, &plain_opts).unwrap().0;
        if shifted > plain + 1e-12 {
            summary.violations += 1;
        }
        let edits: usize = hyps.iter().zip(&refs).map(|(h, r)| edit_distance_recursive(h, r)).sum();
        let len: usize = refs.iter().map(Vec::len).sum();
        if (plain - edits as f64 / len as f64).abs() > 1e-12 {
            summary.plain_mismatches += 1;
        }
    }
    summary
}

#![allow(dead_code)]

use apeqe::corpus::Vocabulary;
use apeqe::input::{FactoredSentence, ModelInputKind};
use apeqe::nmt::{EncodedPair, ModelConfig, Seq2Seq, Seq2SeqParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod oracles;
pub mod toy;

pub const FD_STEP: f64 = 1e-5;

pub fn vocab(words: &[&str]) -> Vocabulary {
    Vocabulary::from_symbols(words.iter().copied()).unwrap()
}

pub fn sentence(kind: ModelInputKind, words: &str) -> FactoredSentence {
    let w: Vec<&str> = words.split_whitespace().collect();
    FactoredSentence::from_surfaces(&w, kind)
}

/// A small two-factor model with parameters spread wide enough that every
/// tensor has gradients well above rounding noise.
pub fn grad_model(seed: u64) -> Seq2Seq {
    let mut config = ModelConfig::with_width(ModelInputKind::MtAligned, 5);
    config.factor_dims = vec![4, 3];
    config.attention_dim = 3;
    config.output_dim = 4;
    let mut m = Seq2Seq::new(
        config,
        vec![vocab(&["a", "b", "c"]), vocab(&["p", "q"])],
        vocab(&["x", "y", "z"]),
        seed,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    for t in m.params.tensors_mut() {
        for v in &mut t.data {
            *v = rng.gen_range(-0.6..0.6);
        }
    }
    m
}

pub fn grad_batch() -> Vec<EncodedPair> {
    vec![
        EncodedPair {
            input: vec![vec![5, 5], vec![6, 6], vec![7, 5]],
            target: vec![5, 7],
        },
        EncodedPair {
            input: vec![vec![6, 6], vec![5, 5]],
            target: vec![6, 6, 5],
        },
    ]
}

/// Element indices to probe in tensor `t`: for embedding tables only rows
/// that the batch actually touches, elsewhere a seeded sample.
fn probe_indices(name: &str, rows: usize, cols: usize, used_rows: &[usize], rng: &mut ChaCha8Rng, per_tensor: usize) -> Vec<usize> {
    let total = rows * cols;
    if name.starts_with("embedding") || name == "target_embedding" {
        let mut out = Vec::new();
        for &r in used_rows {
            for c in 0..cols {
                out.push(r * cols + c);
            }
        }
        out.truncate(per_tensor.max(cols));
        out
    } else {
        (0..per_tensor.min(total)).map(|_| rng.gen_range(0..total)).collect()
    }
}

pub struct GradReport {
    pub max_rel_error: f64,
    pub tensors_checked: usize,
    pub elements_checked: usize,
}

/// Relative error with a floor on the denominator so that two tiny values
/// that agree to rounding level are not flagged.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `loss` over sampled
/// elements of every tensor.
pub fn check_gradient(
    model: &Seq2Seq,
    analytic: &Seq2SeqParams,
    loss: impl Fn(&Seq2Seq) -> f64,
    used_rows: &[Vec<usize>],
    seed: u64,
) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, Vec<usize>)> = model
        .params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape.clone()))
        .collect();
    let grads: Vec<Vec<f64>> = analytic.named_tensors().iter().map(|(_, t)| t.data.clone()).collect();
    let mut report = GradReport {
        max_rel_error: 0.0,
        tensors_checked: 0,
        elements_checked: 0,
    };
    let mut probe = model.clone();
    for (ti, (name, shape)) in names.iter().enumerate() {
        let rows = shape[0];
        let cols = shape.get(1).copied().unwrap_or(1);
        let used = if let Some(k) = name.strip_prefix("embedding.factor") {
            used_rows[k.parse::<usize>().unwrap()].clone()
        } else if name == "target_embedding" {
            used_rows[used_rows.len() - 1].clone()
        } else {
            Vec::new()
        };
        let idx = probe_indices(name, rows, cols, &used, &mut rng, 6);
        for i in idx {
            let orig = probe.params.tensors_mut()[ti].data[i];
            probe.params.tensors_mut()[ti].data[i] = orig + FD_STEP;
            let up = loss(&probe);
            probe.params.tensors_mut()[ti].data[i] = orig - FD_STEP;
            let down = loss(&probe);
            probe.params.tensors_mut()[ti].data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = rel_error(grads[ti][i], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
            }
            report.elements_checked += 1;
        }
        report.tensors_checked += 1;
    }
    report
}

pub fn xent_gradient_report(seed: u64) -> GradReport {
    let m = grad_model(seed);
    let batch = grad_batch();
    let mut grads = m.params.zeros_like();
    m.xent_loss_and_grad(&batch, &mut grads).unwrap();
    // factor 0 rows 5..8, factor 1 rows 5..7, target rows: BOS plus targets
    let used = vec![vec![5, 6, 7], vec![5, 6], vec![1, 5, 6, 7]];
    check_gradient(&m, &grads, |p| p.xent_loss(&batch).unwrap(), &used, seed)
}

pub fn min_risk_gradient_report(seed: u64) -> GradReport {
    let m = grad_model(seed);
    let input = vec![vec![5, 5], vec![7, 6], vec![6, 5]];
    let samples = vec![vec![5, 6], vec![7], vec![6, 6, 5]];
    let risks = vec![0.2, 0.9, 0.5];
    let mut grads = m.params.zeros_like();
    m.expected_risk(&input, &samples, &risks, 1.0, Some(&mut grads)).unwrap();
    let used = vec![vec![5, 6, 7], vec![5, 6], vec![1, 5, 6, 7]];
    check_gradient(
        &m,
        &grads,
        |p| p.expected_risk(&input, &samples, &risks, 1.0, None).unwrap(),
        &used,
        seed,
    )
}

use super::tensor::{log_sum_exp, Tensor};
use super::*;
use crate::corpus::{Vocabulary, EOS_ID};
use crate::input::{FactoredSentence, ModelInputKind};

fn vocab(words: &[&str]) -> Vocabulary {
    Vocabulary::from_symbols(words.iter().copied()).unwrap()
}

fn tiny_model(seed: u64) -> Seq2Seq {
    let config = ModelConfig::with_width(ModelInputKind::Src, 6);
    Seq2Seq::new(config, vec![vocab(&["a", "b", "c"])], vocab(&["x", "y", "z"]), seed).unwrap()
}

fn sentence(words: &str) -> FactoredSentence {
    FactoredSentence::from_surfaces(&words.split_whitespace().collect::<Vec<_>>(), ModelInputKind::Src)
}

#[test]
fn embedding_identity_table() {
    let mut table = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        table.row_mut(i)[i] = 1.0;
    }
    assert_eq!(embed_factored(&[table], &[2]).unwrap(), vec![0.0, 0.0, 1.0]);
}

#[test]
fn embedding_concatenates_factor_slices() {
    let e1 = Tensor {
        shape: vec![2, 4],
        data: (0..8).map(f64::from).collect(),
    };
    let e2 = Tensor {
        shape: vec![3, 2],
        data: (100..106).map(f64::from).collect(),
    };
    let out = embed_factored(&[e1.clone(), e2.clone()], &[1, 2]).unwrap();
    assert_eq!(out.len(), 6);
    assert_eq!(&out[..4], e1.row(1));
    assert_eq!(&out[4..], e2.row(2));
    assert!(matches!(
        embed_factored(&[e1, e2], &[2, 0]),
        Err(NmtError::Lookup { factor: 0, id: 2 })
    ));
}

#[test]
fn step_distribution_and_attention_are_normalized() {
    let m = tiny_model(3);
    let enc = m.encode_sentence(&sentence("a b c a")).unwrap();
    let mut state = enc.init_state.clone();
    for prev in [1, 5, 6] {
        let out = m.step(&enc, &state, prev).unwrap();
        assert!(log_sum_exp(&out.log_probs).abs() < 1e-6);
        let sum: f64 = out.attention.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(out.attention.iter().all(|&a| (0.0..=1.0).contains(&a)));
        state = out.state().to_vec();
    }
}

#[test]
fn zero_parameters_give_uniform_output() {
    let mut m = tiny_model(3);
    m.params = m.params.zeros_like();
    let enc = m.encode_sentence(&sentence("a b")).unwrap();
    let out = m.step(&enc, &enc.init_state, 1).unwrap();
    let uniform = -(m.target_vocab.len() as f64).ln();
    assert!(out.log_probs.iter().all(|lp| (lp - uniform).abs() < 1e-12));
}

#[test]
fn same_seed_same_outputs() {
    let a = tiny_model(11);
    let b = tiny_model(11);
    assert_eq!(a.params, b.params);
    let s = sentence("c a b");
    let ha = beam_search(&a, &s, &BeamConfig::default()).unwrap();
    let hb = beam_search(&b, &s, &BeamConfig::default()).unwrap();
    assert_eq!(ha, hb);
    assert_ne!(tiny_model(12).params, a.params);
}

#[test]
fn empty_input_is_rejected() {
    let m = tiny_model(1);
    assert!(matches!(m.encode(&[]), Err(NmtError::EmptyInput)));
}

#[test]
fn averaging_examples() {
    let m = tiny_model(5);
    let same = average_params(&[&m.params, &m.params, &m.params]).unwrap();
    assert_eq!(same, m.params);

    let mut zeros = m.params.zeros_like();
    let mut twos = m.params.zeros_like();
    for t in twos.tensors_mut() {
        t.fill(2.0);
    }
    let avg = average_params(&[&zeros, &twos]).unwrap();
    assert!(avg.named_tensors().iter().all(|(_, t)| t.data.iter().all(|&v| v == 1.0)));

    zeros.out_b = Tensor::zeros(&[3]);
    match average_params(&[&zeros, &twos]) {
        Err(NmtError::ShapeMismatch { tensor, .. }) => assert_eq!(tensor, "output.b"),
        other => panic!("expected shape mismatch, got {other:?}"),
    }
    assert!(matches!(average_params(&[]), Err(NmtError::EmptyCheckpointList)));
}

#[test]
fn averaging_is_order_free() {
    let ps: Vec<Seq2SeqParams> = (0..4).map(|s| tiny_model(s).params).collect();
    let fwd = average_params(&[&ps[0], &ps[1], &ps[2], &ps[3]]).unwrap();
    let rev = average_params(&[&ps[3], &ps[1], &ps[0], &ps[2]]).unwrap();
    assert_eq!(fwd, rev);
}

#[test]
fn width_one_beam_is_greedy() {
    let m = tiny_model(7);
    for text in ["a", "a b", "c c b a", "b a c a b"] {
        let s = sentence(text);
        let enc = m.encode_sentence(&s).unwrap();
        let greedy = greedy_decode(&m, &enc, 12).unwrap();
        let cfg = BeamConfig {
            beam_width: 1,
            n_best: 1,
            max_len: 12,
        };
        let beam = beam_search(&m, &s, &cfg).unwrap();
        assert_eq!(beam[0].tokens, greedy.tokens);
        assert_eq!(beam[0].finished, greedy.finished);
    }
}

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

#[test]
fn exhaustive_beam_matches_enumeration() {
    let config = ModelConfig::with_width(ModelInputKind::Src, 4);
    for seed in 0..5 {
        let mut m = Seq2Seq::new(config.clone(), vec![vocab(&["a", "b"])], vocab(&["x", "y", "z"]), seed).unwrap();
        for t in m.params.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= 8.0);
        }
        let s = sentence("a b a");
        let enc = m.encode_sentence(&s).unwrap();
        let mut best = (f64::NEG_INFINITY, Vec::new());
        enumerate(&m, &enc, &mut Vec::new(), 3, &mut best);
        let cfg = BeamConfig {
            beam_width: 625,
            n_best: 1,
            max_len: 4,
        };
        let hyp = &beam_search(&m, &s, &cfg).unwrap()[0];
        assert!(hyp.finished);
        assert_eq!(hyp.tokens, best.1, "seed {seed}");
        assert!((hyp.score - best.0).abs() < 1e-9);
    }
}

#[test]
fn n_best_is_distinct_and_ordered() {
    let m = tiny_model(9);
    let cfg = BeamConfig {
        beam_width: 8,
        n_best: 5,
        max_len: 6,
    };
    let hyps = beam_search(&m, &sentence("a c b"), &cfg).unwrap();
    assert_eq!(hyps.len(), 5);
    for pair in hyps.windows(2) {
        assert!(pair[0].score >= pair[1].score);
        assert_ne!(pair[0].tokens, pair[1].tokens);
    }
    for h in &hyps {
        assert!(h.score <= 0.0);
        assert_eq!(h.attention.rows(), h.tokens.len() + usize::from(h.finished));
    }
}

#[test]
fn alignment_rows_match_mt_length() {
    let m = tiny_model(2);
    let (align, record) = extract_alignments(&m, &sentence("a b c"), &["x", "q", "y", "z"]).unwrap();
    assert_eq!(record.rows(), 4);
    assert_eq!(align.len(), 4);
    assert!(align.iter().all(|&j| j < 3));
    let (empty, rec) = extract_alignments(&m, &sentence("a"), &Vec::<&str>::new()).unwrap();
    assert!(empty.is_empty());
    assert_eq!(rec.rows(), 0);
}

#[test]
fn identity_attention_gives_identity_alignment() {
    let rows = (0..4)
        .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    assert_eq!(AttentionRecord::from_rows(rows).argmax_alignment(), vec![0, 1, 2, 3]);
}

#[test]
fn checkpoint_bytes_round_trip() {
    let m = tiny_model(4);
    let ck = Checkpoint {
        model: m,
        step: 17,
        dev_metric: Some(0.25),
    };
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);
    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    assert!(Checkpoint::from_bytes(&corrupt).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn select_best_ranks_by_dev_metric() {
    let m = tiny_model(1);
    let cks: Vec<Checkpoint> = [(1, Some(0.2)), (2, Some(0.5)), (3, None), (4, Some(0.5)), (5, Some(0.1))]
        .into_iter()
        .map(|(step, dev_metric)| Checkpoint {
            model: m.clone(),
            step,
            dev_metric,
        })
        .collect();
    let steps: Vec<u64> = select_best(&cks, 3).iter().map(|c| c.step).collect();
    assert_eq!(steps, vec![4, 2, 1]);
}

fn copy_data(m: &Seq2Seq, n: usize, seed: u64) -> Vec<EncodedPair> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let words = ["a", "b", "c"];
    let targets = ["x", "y", "z"];
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=4);
            let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(0..3)).collect();
            let src: Vec<&str> = idx.iter().map(|&i| words[i]).collect();
            let tgt: Vec<&str> = idx.iter().map(|&i| targets[i]).collect();
            m.encode_pair(&sentence(&src.join(" ")), &tgt).unwrap()
        })
        .collect()
}

#[test]
fn zero_epochs_keep_initial_params() {
    let m = tiny_model(8);
    let data = copy_data(&m, 5, 0);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let run = train_xent(&m, &data, &[], &cfg).unwrap();
    assert_eq!(run.model.params, m.params);
    assert_eq!(run.checkpoints.len(), 1);
    assert_eq!(run.checkpoints[0].step, 0);
    assert_eq!(run.checkpoints[0].model.params, m.params);
}

#[test]
fn training_lowers_dev_loss_and_is_reproducible() {
    let m = tiny_model(8);
    let data = copy_data(&m, 50, 1);
    let dev = copy_data(&m, 10, 2);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 10,
        learning_rate: 0.02,
        checkpoint_every: 10,
        ..TrainConfig::default()
    };
    let run = train_xent(&m, &data, &dev, &cfg).unwrap();
    assert!(run.diverged_at.is_none());
    assert!(m.xent_loss(&dev).unwrap() > run.model.xent_loss(&dev).unwrap());
    assert_eq!(run.checkpoints.iter().map(|c| c.step).collect::<Vec<_>>(), vec![10, 20, 25]);
    assert!(run.checkpoints.iter().all(|c| c.dev_metric.is_some()));
    let again = train_xent(&m, &data, &dev, &cfg).unwrap();
    assert_eq!(again.checkpoints.last().unwrap().to_bytes(), run.checkpoints.last().unwrap().to_bytes());
}

#[test]
fn zero_min_risk_iterations_keep_params() {
    let m = tiny_model(8);
    let data = copy_data(&m, 6, 3);
    let cfg = MinRiskConfig {
        iterations: 0,
        ..MinRiskConfig::default()
    };
    let run = train_min_risk(&m, &data, &cfg).unwrap();
    assert_eq!(run.model.params, m.params);
    assert_eq!(run.probe_risk.len(), 1);
}

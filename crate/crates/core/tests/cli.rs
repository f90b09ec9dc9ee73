mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use common::toy::cli;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Owned argv so path temporaries can appear inline.
macro_rules! argv {
    ($($x:expr),* $(,)?) => {
        vec![$(Arg::from($x).0),*]
    };
}

struct Arg(String);

impl From<&str> for Arg {
    fn from(s: &str) -> Self {
        Arg(s.to_owned())
    }
}

impl From<PathBuf> for Arg {
    fn from(p: PathBuf) -> Self {
        Arg(p.to_str().unwrap().to_owned())
    }
}

impl From<&PathBuf> for Arg {
    fn from(p: &PathBuf) -> Self {
        Arg(p.to_str().unwrap().to_owned())
    }
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().map(str::to_owned).collect()
}

fn assert_artifact(p: &Path) {
    assert!(p.is_file(), "missing {}", p.display());
    let meta = format!("{}.meta.json", p.display());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&meta).expect(&meta)).unwrap();
    for key in ["command", "args", "config_hash", "seed"] {
        assert!(v.get(key).is_some(), "{meta} lacks {key}");
    }
}

fn apeqe(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_apeqe")).args(args).output().unwrap()
}

#[test]
fn exit_codes_and_error_line() {
    assert_eq!(apeqe(&["--help"]).status.code(), Some(0));
    assert_eq!(apeqe(&[]).status.code(), Some(2));
    assert_eq!(apeqe(&["decode", "--bogus"]).status.code(), Some(2));
    let out = apeqe(&["qe-tags", "--mt", "/nonexistent/mt", "--pe", "/nonexistent/pe", "--output", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: stage=qe-tags message=\""), "{err}");
    let out = apeqe(&["train", "--kind", "src", "--input", "a", "--target", "b", "--output-dir", "c"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("stage=train"));
}

#[test]
fn eval_on_identical_files_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("text");
    let tags = dir.path().join("tags");
    std::fs::write(&text, "the cat sat on the mat\na b c d e\n").unwrap();
    std::fs::write(&tags, "OK BAD OK OK BAD OK\nOK OK OK BAD OK\n").unwrap();
    let report = dir.path().join("report");
    cli(&[
        "eval", "--hyp", s(&text), "--ref", s(&text), "--pred-tags", s(&tags), "--gold-tags", s(&tags),
        "--output", s(&report),
    ]);
    assert_artifact(&report);
    let r = std::fs::read_to_string(&report).unwrap();
    for line in ["bleu=1.00000000000000000", "ter=0.00000000000000000", "f1_mult=1.00000000000000000"] {
        assert!(r.lines().any(|l| l == line), "{line} not in\n{r}");
    }
}

#[test]
fn annotation_merge_keeps_token_counts() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let (mut text, mut pos, mut dep, mut head) = (String::new(), String::new(), String::new(), String::new());
    for i in 0..100 {
        let n = 1 + i % 9;
        let words: Vec<String> = (0..n).map(|j| format!("w{}", (i * 7 + j) % 13)).collect();
        text += &(words.join(" ") + "\n");
        pos += &(vec!["NN"; n].join(" ") + "\n");
        dep += &(vec!["nsubj"; n].join(" ") + "\n");
        head += &(vec!["VB"; n].join(" ") + "\n");
    }
    for (name, body) in [("text", &text), ("pos", &pos), ("dep", &dep), ("head", &head)] {
        std::fs::write(p(name), body).unwrap();
    }
    cli(&[
        "annotate-merge", "--text", s(&p("text")), "--pos", s(&p("pos")), "--dep", s(&p("dep")),
        "--head-pos", s(&p("head")), "--output", s(&p("merged")),
    ]);
    assert_artifact(&p("merged"));
    let (merged, _) = apeqe::input::read_factored_corpus(&p("merged"), None).unwrap();
    assert_eq!(merged.len(), 100);
    for (sent, line) in merged.iter().zip(text.lines()) {
        assert_eq!(sent.tokens.len(), line.split_whitespace().count());
        assert!(sent.tokens.iter().all(|t| t.factors.len() == 3));
    }
}

/// A reduced pipeline that runs every subcommand once and checks that each
/// declared artifact and its sidecar exist.
#[test]
fn every_subcommand_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    std::fs::write(p("config.toml"), "[model]\nwidth = 8\n\n[train]\nepochs = 3\nbatch_size = 8\ncheckpoint_every = 4\n\n[mert]\niterations = 2\n").unwrap();
    let run = |rest: Vec<String>| {
        let mut a: Vec<String> = argv!["--seed", "3", "--config", p("config.toml")];
        a.extend(rest);
        cli(&a.iter().map(String::as_str).collect::<Vec<_>>());
    };
    let data = p("data");
    run(argv!["synth-data", "--mode", "noisy-copy", "--train-size", "40", "--dev-size", "8", "--output-dir", &data]);
    for split in ["train", "dev"] {
        for ext in ["src", "mt", "pe", "tags"] {
            assert_artifact(&data.join(format!("{split}.{ext}")));
        }
    }
    let d = |n: &str| data.join(n);

    run(argv!["bpe-learn", "--input", d("train.src"), d("train.mt"), "--merges", "20", "--output", p("bpe")]);
    assert_artifact(&p("bpe"));
    run(argv!["bpe-apply", "--rules", p("bpe"), "--input", d("dev.mt"), "--output", p("dev.mt.bpe")]);
    assert_artifact(&p("dev.mt.bpe"));
    assert_eq!(lines(&p("dev.mt.bpe")).len(), 8);

    for kind in ["src", "mt"] {
        for split in ["train", "dev"] {
            let out = p(&format!("{split}.{kind}.in"));
            run(argv![
                "build-input", "--kind", kind, "--src", d(&format!("{split}.src")),
                "--mt", d(&format!("{split}.mt")), "--pe", d(&format!("{split}.pe")),
                "--output", &out, "--target-output", p(&format!("{split}.tgt")),
            ]);
            assert_artifact(&out);
            assert_artifact(&p(&format!("{split}.tgt")));
        }
        let mut args = argv![
            "train", "--kind", kind, "--input", p(&format!("train.{kind}.in")), "--target", p("train.tgt"),
            "--dev-input", p(&format!("dev.{kind}.in")), "--dev-target", p("dev.tgt"),
        ];
        let out = p(&format!("model_{kind}"));
        let vocab = p("model_src/target.vocab");
        if kind == "mt" {
            args.extend(argv!["--target-vocab", &vocab]);
        }
        args.extend(argv!["--output-dir", &out]);
        run(args);
        for f in ["final.ckpt", "target.vocab", "train.json"] {
            assert_artifact(&out.join(f));
        }
    }
    // Staged training: continue the src model on in-domain data upsampled 3x.
    run(argv![
        "train", "--kind", "src", "--input", p("train.src.in"), "--target", p("train.tgt"),
        "--init", p("model_src/final.ckpt"),
        "--upsample-input", p("dev.src.in"), "--upsample-target", p("dev.tgt"), "--upsample-factor", "3",
        "--output-dir", p("model_staged"),
    ]);
    assert_artifact(&p("model_staged/final.ckpt"));
    assert_eq!(
        std::fs::read(p("model_staged/target.vocab")).unwrap(),
        std::fs::read(p("model_src/target.vocab")).unwrap()
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p("model_staged/train.json")).unwrap()).unwrap();
    assert_eq!(summary["epoch_loss"].as_array().unwrap().len(), 3);

    let steps: Vec<String> = std::fs::read_dir(p("model_src"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|f| f.file_name().unwrap().to_str().unwrap().starts_with("step-") && f.extension().unwrap() == "ckpt")
        .map(|f| s(&f).to_owned())
        .collect();
    assert!(steps.len() >= 3, "{steps:?}");
    steps.iter().for_each(|f| assert_artifact(Path::new(f)));
    let mut avg = argv!["avg-checkpoints", "--inputs"];
    avg.extend(steps.iter().cloned());
    avg.extend(argv!["--best", "2", "--output", p("avg.ckpt")]);
    run(avg);
    assert_artifact(&p("avg.ckpt"));

    run(argv![
        "finetune-minrisk", "--checkpoint", p("avg.ckpt"), "--input", p("train.src.in"),
        "--target", p("train.tgt"), "--iterations", "2", "--output", p("mr.ckpt"),
    ]);
    assert_artifact(&p("mr.ckpt"));
    assert!(p("mr.ckpt.minrisk.json").is_file());

    run(argv![
        "decode", "--checkpoint", p("mr.ckpt"), "--input", p("dev.src.in"), "--output", p("hyp.mr"),
        "--nbest", "3", "--nbest-output", p("nbest.mr"),
    ]);
    assert_artifact(&p("hyp.mr"));
    assert_artifact(&p("nbest.mr"));
    assert_eq!(lines(&p("hyp.mr")).len(), 8);

    std::fs::write(
        p("ens.json"),
        r#"{"members":[{"name":"src","checkpoint":"model_src/final.ckpt","kind":"src","weight":0.5},{"name":"mt","checkpoint":"model_mt/final.ckpt","kind":"mt","weight":0.5}]}"#,
    )
    .unwrap();
    let inputs = [p("dev.src.in"), p("dev.mt.in")];
    run(argv![
        "ensemble-decode", "--manifest", p("ens.json"), "--inputs", &inputs[0], &inputs[1],
        "--output", p("hyp.ens"), "--nbest", "4", "--nbest-output", p("nbest.ens"),
    ]);
    assert_artifact(&p("hyp.ens"));
    assert_artifact(&p("nbest.ens"));
    run(argv![
        "rescore", "--manifest", p("ens.json"), "--inputs", &inputs[0], &inputs[1],
        "--nbest", p("nbest.ens"), "--output", p("nbest.rescored"),
    ]);
    assert_artifact(&p("nbest.rescored"));
    assert_eq!(lines(&p("nbest.rescored")).len(), lines(&p("nbest.ens")).len());

    run(argv![
        "tune-mert", "--manifest", p("ens.json"), "--inputs", &inputs[0], &inputs[1], "--objective", "ter",
        "--mt", d("dev.mt"), "--pe", d("dev.pe"), "--output", p("weights"),
        "--pool-output", p("pool"),
    ]);
    assert_artifact(&p("weights"));
    assert_artifact(&p("pool"));
    assert!(p("weights.history.json").is_file());

    run(argv!["qe-tags", "--mt", d("dev.mt"), "--pe", p("hyp.ens"), "--output", p("tags")]);
    assert_artifact(&p("tags"));
    run(argv![
        "eval", "--hyp", p("hyp.ens"), "--ref", d("dev.pe"), "--pred-tags", p("tags"),
        "--gold-tags", d("dev.tags"), "--output", p("report"),
    ]);
    assert_artifact(&p("report"));

    run(argv![
        "synth-data", "--mode", "round-trip", "--refs", d("dev.pe"), "--tgt2src", p("model_src/final.ckpt"),
        "--src2tgt", p("model_src/final.ckpt"), "--output-dir", p("rt"),
    ]);
    for ext in ["src", "mt", "pe", "tags"] {
        assert_artifact(&p(&format!("rt/round-trip.{ext}")));
    }
    assert_eq!(lines(&p("rt/round-trip.src")).len(), lines(&p("rt/round-trip.pe")).len());
}

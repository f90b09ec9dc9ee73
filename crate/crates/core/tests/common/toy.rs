//! The synthetic end-to-end pipeline, driven through the command-line entry
//! point: data → two models → uniform ensemble → TER tuning → F1-Mult tuning
//! → decoding and tags.

use std::path::{Path, PathBuf};
use std::time::Instant;

pub const TRAIN_SIZE: usize = 500;
pub const DEV_SIZE: usize = 100;
pub const WIDTH: usize = 32;
pub const EPOCHS: usize = 40;

pub fn cli(args: &[&str]) {
    let mut argv = vec!["apeqe"];
    argv.extend_from_slice(args);
    let code = apeqe::cli::run(argv.iter().copied());
    assert_eq!(code, 0, "command failed: {}", args.join(" "));
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub struct ToyRun {
    pub dir: PathBuf,
    /// Wall-clock seconds per command, in execution order.
    pub timings: Vec<(String, f64)>,
}

impl ToyRun {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn manifest(dir: &Path, name: &str, members: &[(&str, &str, f64)]) {
    let members: Vec<String> = members
        .iter()
        .map(|(n, kind, w)| {
            format!(r#"{{"name":"{n}","checkpoint":"model_{n}/final.ckpt","kind":"{kind}","weight":{w}}}"#)
        })
        .collect();
    std::fs::write(dir.join(name), format!("{{\"members\":[{}]}}\n", members.join(","))).unwrap();
}

/// Runs every stage in `dir` and returns the handle for reading artifacts.
pub fn run_pipeline(dir: &Path, seed: u64, jobs: usize) -> ToyRun {
    let p = |n: &str| dir.join(n);
    let seed = seed.to_string();
    let jobs = jobs.to_string();
    let g = ["--seed", seed.as_str(), "--jobs", jobs.as_str()];
    let timings = std::cell::RefCell::new(Vec::new());
    let with = |rest: &[&str]| {
        let mut a: Vec<&str> = g.to_vec();
        a.extend_from_slice(rest);
        let start = Instant::now();
        cli(&a);
        let label = match rest {
            ["train", "--kind", kind, ..] => format!("train {kind}"),
            _ => rest[0].to_owned(),
        };
        timings.borrow_mut().push((label, start.elapsed().as_secs_f64()));
    };
    let (train_n, dev_n, width, epochs) = (
        TRAIN_SIZE.to_string(),
        DEV_SIZE.to_string(),
        WIDTH.to_string(),
        EPOCHS.to_string(),
    );
    let data = p("data");
    with(&[
        "synth-data", "--mode", "noisy-copy", "--train-size", &train_n, "--dev-size", &dev_n,
        "--output-dir", s(&data),
    ]);
    for kind in ["src", "mt"] {
        for split in ["train", "dev"] {
            with(&[
                "build-input", "--kind", kind,
                "--src", s(&data.join(format!("{split}.src"))),
                "--mt", s(&data.join(format!("{split}.mt"))),
                "--pe", s(&data.join(format!("{split}.pe"))),
                "--output", s(&p(&format!("{split}.{kind}.in"))),
                "--target-output", s(&p(&format!("{split}.tgt"))),
            ]);
        }
    }
    let (train_tgt, dev_tgt, vocab) = (p("train.tgt"), p("dev.tgt"), p("model_src/target.vocab"));
    for kind in ["src", "mt"] {
        let input = p(&format!("train.{kind}.in"));
        let dev_input = p(&format!("dev.{kind}.in"));
        let out = p(&format!("model_{kind}"));
        let mut args = vec![
            "train", "--kind", kind,
            "--input", s(&input), "--target", s(&train_tgt),
            "--dev-input", s(&dev_input), "--dev-target", s(&dev_tgt),
            "--width", &width, "--epochs", &epochs,
            "--output-dir", s(&out),
        ];
        // The second model shares the first one's output vocabulary.
        if kind != "src" {
            args.extend(["--target-vocab", s(&vocab)]);
        }
        with(&args);
    }
    manifest(dir, "uniform.json", &[("src", "src", 0.5), ("mt", "mt", 0.5)]);
    manifest(dir, "single_src.json", &[("src", "src", 1.0)]);

    let (src_in, mt_in) = (p("dev.src.in"), p("dev.mt.in"));
    for kind in ["src", "mt"] {
        with(&[
            "decode",
            "--checkpoint", s(&p(&format!("model_{kind}/final.ckpt"))),
            "--input", s(&p(&format!("dev.{kind}.in"))),
            "--output", s(&p(&format!("hyp.{kind}"))),
        ]);
    }
    with(&[
        "ensemble-decode", "--manifest", s(&p("uniform.json")),
        "--inputs", s(&src_in), s(&mt_in),
        "--output", s(&p("hyp.uniform")),
    ]);
    with(&[
        "tune-mert", "--manifest", s(&p("uniform.json")),
        "--inputs", s(&src_in), s(&mt_in),
        "--objective", "ter",
        "--mt", s(&data.join("dev.mt")), "--pe", s(&data.join("dev.pe")),
        "--output", s(&p("weights.ter")),
        "--pool-output", s(&p("pool.ter")),
    ]);
    with(&[
        "tune-mert", "--manifest", s(&p("uniform.json")),
        "--inputs", s(&src_in), s(&mt_in),
        "--objective", "f1-mult",
        "--mt", s(&data.join("dev.mt")), "--gold-tags", s(&data.join("dev.tags")),
        "--initial", s(&p("weights.ter")),
        "--output", s(&p("weights.qe")),
    ]);
    for w in ["ter", "qe"] {
        with(&[
            "ensemble-decode", "--manifest", s(&p("uniform.json")),
            "--inputs", s(&src_in), s(&mt_in),
            "--weights", s(&p(&format!("weights.{w}"))),
            "--output", s(&p(&format!("hyp.{w}"))),
        ]);
    }
    for h in ["src", "mt", "uniform", "ter", "qe"] {
        with(&[
            "qe-tags", "--mt", s(&data.join("dev.mt")),
            "--pe", s(&p(&format!("hyp.{h}"))),
            "--output", s(&p(&format!("tags.{h}"))),
        ]);
    }
    with(&[
        "eval",
        "--hyp", s(&p("hyp.ter")), "--ref", s(&data.join("dev.pe")),
        "--pred-tags", s(&p("tags.qe")), "--gold-tags", s(&data.join("dev.tags")),
        "--output", s(&p("report.txt")),
    ]);
    ToyRun {
        dir: dir.to_owned(),
        timings: timings.into_inner(),
    }
}

//! Command-line front end. Every subcommand reads its inputs from files,
//! writes its artifacts next to a `<artifact>.meta.json` sidecar, and fails
//! with one `error: stage=<name> ...` line on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_vocab, read_lines, round_trip_synthesize, tokenize, upsample_items, write_lines, NoisyCopyTask, TrainingTriple,
    Vocabulary,
};
use crate::ensemble::{
    bundles_from_members, decode_corpus, hypothesis_words, read_nbest, rescore_nbest, write_nbest,
    EnsembleDevDecoder, EnsembleManifest, EnsembleSpec, NBestEntry,
};
use crate::input::{
    attach_alignment_factor, build_input, piece_origins, read_factored_corpus, write_factored_corpus,
    FactorManifest, FactoredSentence, FactoredToken, InputExtras, ModelInputKind,
};
use crate::mert::{mert_tune, read_weights, write_pool, write_weights, Objective, SentenceGold, TunerConfig};
use crate::metrics::{
    ter_sentence, BleuStats, MetricReport, QeConfusion, TerOptions, TerStats,
};
use crate::nmt::{
    average_checkpoints, beam_search, extract_alignments, select_best, train_min_risk, train_xent,
    BeamConfig, Checkpoint, EncodedPair, MinRiskConfig, ModelConfig, ModelTranslator, Seq2Seq, TrainConfig,
};
use crate::qe::{read_tags, tag_sentence, write_tags, Tag, TagOptions};
use crate::subword::{desegment_surfaces, BpeModel, DEFAULT_MARKER};

#[derive(Debug, Parser)]
#[command(name = "apeqe", version, about = "Automatic post-editing and word-level QE toolkit")]
pub struct Cli {
    /// Seed for every random choice; required by train, finetune-minrisk,
    /// tune-mert and synth-data unless the config file sets one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML pipeline configuration. Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for sentence-parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn BPE merge rules from tokenized text.
    BpeLearn(BpeLearnArgs),
    /// Segment tokenized text with learned merges.
    BpeApply(BpeApplyArgs),
    /// Join a tokenized file with POS, dependency and head-POS layers into one arity-4 file.
    AnnotateMerge(AnnotateMergeArgs),
    /// Build model inputs of one kind from src/mt(/pe) files.
    BuildInput(BuildInputArgs),
    /// Train a model with cross-entropy.
    Train(TrainArgs),
    /// Fine-tune a checkpoint by minimizing expected risk.
    FinetuneMinrisk(FinetuneArgs),
    /// Average checkpoint parameters.
    AvgCheckpoints(AvgArgs),
    /// Beam-search decode with one model.
    Decode(DecodeArgs),
    /// Beam-search decode with a weighted ensemble.
    EnsembleDecode(EnsembleDecodeArgs),
    /// Recompute ensemble features for an n-best file.
    Rescore(RescoreArgs),
    /// Tune ensemble weights with MERT.
    TuneMert(TuneArgs),
    /// Derive OK/BAD tags by aligning MT to a (pseudo-)post-edit.
    QeTags(QeTagsArgs),
    /// Score hypotheses and/or tags.
    Eval(EvalArgs),
    /// Generate synthetic training data.
    SynthData(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BpeLearnArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub merges: usize,
    #[arg(long, default_value = DEFAULT_MARKER)]
    pub marker: String,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BpeApplyArgs {
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Render pieces with this marker instead of the one stored with the rules.
    #[arg(long)]
    pub marker: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnnotateMergeArgs {
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub pos: PathBuf,
    #[arg(long)]
    pub dep: PathBuf,
    #[arg(long)]
    pub head_pos: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildInputArgs {
    #[arg(long)]
    pub kind: ModelInputKind,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub mt: PathBuf,
    /// Post-edits; when given, `--target-output` receives them segmented.
    #[arg(long)]
    pub pe: Option<PathBuf>,
    #[arg(long)]
    pub src_bpe: Option<PathBuf>,
    #[arg(long)]
    pub mt_bpe: Option<PathBuf>,
    /// Arity-4 annotation of the source (from annotate-merge).
    #[arg(long)]
    pub src_annotation: Option<PathBuf>,
    #[arg(long)]
    pub mt_annotation: Option<PathBuf>,
    /// One aligned source word per MT subword token, per line.
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    /// Source-input checkpoint whose attention provides the alignment.
    #[arg(long, conflicts_with = "alignment")]
    pub align_model: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub target_output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub kind: ModelInputKind,
    /// Factored input corpus from build-input.
    #[arg(long)]
    pub input: PathBuf,
    /// Target token file, line-parallel with the input.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, requires = "dev_target")]
    pub dev_input: Option<PathBuf>,
    #[arg(long, requires = "dev_input")]
    pub dev_target: Option<PathBuf>,
    /// Reuse this target vocabulary so models can be ensembled.
    #[arg(long)]
    pub target_vocab: Option<PathBuf>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from this checkpoint, keeping its vocabularies and sizes.
    #[arg(long, conflicts_with_all = ["target_vocab", "vocab_size", "width"])]
    pub init: Option<PathBuf>,
    /// In-domain input corpus appended `--upsample-factor` times.
    #[arg(long, requires = "upsample_target")]
    pub upsample_input: Option<PathBuf>,
    #[arg(long, requires = "upsample_input")]
    pub upsample_target: Option<PathBuf>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    pub upsample_factor: u32,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AvgArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Average only the k checkpoints with the best dev metric.
    #[arg(long)]
    pub best: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct BeamArgs {
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Join subword pieces carrying this marker in text output.
    #[arg(long)]
    pub desegment: Option<String>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub nbest_output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub nbest: usize,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct EnsembleDecodeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// One factored corpus per member, in manifest order.
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Weights file overriding the manifest weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub nbest_output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub nbest: usize,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct RescoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// n-best file with segmented (not desegmented) target tokens.
    #[arg(long)]
    pub nbest: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Ter,
    F1Mult,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Ter => Objective::Ter,
            ObjectiveArg::F1Mult => Objective::F1Mult,
        }
    }
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub objective: ObjectiveArg,
    /// Word-level MT of the dev set.
    #[arg(long)]
    pub mt: PathBuf,
    /// Word-level post-edits (TER objective).
    #[arg(long)]
    pub pe: Option<PathBuf>,
    /// Gold OK/BAD tags (F1-Mult objective).
    #[arg(long)]
    pub gold_tags: Option<PathBuf>,
    /// Starting weights; defaults to the manifest weights.
    #[arg(long)]
    pub initial: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub nbest: Option<usize>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub pool_output: Option<PathBuf>,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct QeTagsArgs {
    #[arg(long)]
    pub mt: PathBuf,
    /// Post-edit or APE output used as pseudo-reference.
    #[arg(long)]
    pub pe: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Allow TER block shifts; moved words are tagged BAD.
    #[arg(long)]
    pub shifts: bool,
    #[arg(long)]
    pub case_sensitive: bool,
    /// Join subword pieces of the pseudo-reference first.
    #[arg(long)]
    pub desegment: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "reference")]
    pub hyp: Option<PathBuf>,
    #[arg(long = "ref", requires = "hyp")]
    pub reference: Option<PathBuf>,
    #[arg(long, requires = "gold_tags")]
    pub pred_tags: Option<PathBuf>,
    #[arg(long, requires = "pred_tags")]
    pub gold_tags: Option<PathBuf>,
    #[arg(long)]
    pub case_sensitive: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthMode {
    NoisyCopy,
    RoundTrip,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub mode: SynthMode,
    /// noisy-copy: training triples.
    #[arg(long, default_value_t = 500)]
    pub train_size: usize,
    /// noisy-copy: dev triples.
    #[arg(long, default_value_t = 100)]
    pub dev_size: usize,
    /// round-trip: reference sentences in the target language.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// round-trip: target→source checkpoint (source-input kind).
    #[arg(long)]
    pub tgt2src: Option<PathBuf>,
    /// round-trip: source→target checkpoint (source-input kind).
    #[arg(long)]
    pub src2tgt: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Uniform layer width; the built-in defaults apply when unset.
    pub width: Option<usize>,
    pub vocab_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            width: None,
            vocab_size: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeSection {
    pub beam: usize,
    pub max_len: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self { beam: 5, max_len: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MertSection {
    pub iterations: usize,
    pub random_directions: usize,
    pub restarts: usize,
    pub threshold: f64,
    pub nbest: usize,
}

impl Default for MertSection {
    fn default() -> Self {
        let t = TunerConfig::default();
        Self {
            iterations: t.iterations,
            random_directions: t.random_directions,
            restarts: t.restarts,
            threshold: t.threshold,
            nbest: t.nbest,
        }
    }
}

/// Declarative settings shared by all stages, read from TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub minrisk: MinRiskConfig,
    pub mert: MertSection,
    pub decode: DecodeSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {}", path.display(), e.message()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub message: String,
}

impl CliError {
    fn new(stage: &'static str, message: impl std::fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
        }
    }

    /// `error: stage=<stage> message="<text>"` on one line.
    pub fn render(&self) -> String {
        let flat: String = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error: stage={} message={:?}", self.stage, flat)
    }
}

type CliResult<T> = Result<T, CliError>;

trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T, E: std::fmt::Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::new(stage, e))
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    args: &'a [String],
    config_hash: &'a str,
    seed: Option<u64>,
}

struct Ctx {
    stage: &'static str,
    args: Vec<String>,
    config: PipelineConfig,
    seed: Option<u64>,
}

impl Ctx {
    fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::new(self.stage, "--seed is required (flag or config `seed`)"))
    }

    fn config_hash(&self) -> String {
        let mut c = self.config.clone();
        c.seed = self.seed;
        c.hash()
    }

    /// Writes `<path>.meta.json` next to an artifact.
    fn sidecar(&self, path: &Path) -> CliResult<()> {
        let meta = Meta {
            command: self.stage,
            args: &self.args,
            config_hash: &self.config_hash(),
            seed: self.seed,
        };
        let mut name = path.as_os_str().to_owned();
        name.push(".meta.json");
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
        std::fs::write(PathBuf::from(name), text).stage(self.stage)
    }

    fn err(&self, message: impl std::fmt::Display) -> CliError {
        CliError::new(self.stage, message)
    }

    fn require(&self, paths: &[&Path]) -> CliResult<()> {
        for p in paths {
            if !p.is_file() {
                return Err(self.err(format!("input file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    fn write_text(&self, path: &Path, text: &str) -> CliResult<()> {
        std::fs::write(path, text).map_err(|e| self.err(format!("{}: {e}", path.display())))?;
        self.sidecar(path)
    }

    fn beam(&self, b: &BeamArgs, n_best: usize) -> BeamConfig {
        let beam_width = b.beam.unwrap_or(self.config.decode.beam).max(n_best).max(1);
        BeamConfig {
            beam_width,
            n_best: n_best.max(1),
            max_len: b.max_len.unwrap_or(self.config.decode.max_len),
        }
    }
}

fn stage_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::BpeLearn(_) => "bpe-learn",
        Command::BpeApply(_) => "bpe-apply",
        Command::AnnotateMerge(_) => "annotate-merge",
        Command::BuildInput(_) => "build-input",
        Command::Train(_) => "train",
        Command::FinetuneMinrisk(_) => "finetune-minrisk",
        Command::AvgCheckpoints(_) => "avg-checkpoints",
        Command::Decode(_) => "decode",
        Command::EnsembleDecode(_) => "ensemble-decode",
        Command::Rescore(_) => "rescore",
        Command::TuneMert(_) => "tune-mert",
        Command::QeTags(_) => "qe-tags",
        Command::Eval(_) => "eval",
        Command::SynthData(_) => "synth-data",
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status: 0 on success, 1 on a stage failure, 2 on a usage
/// error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::new().parse_filters(level).try_init();
    match execute(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.render());
            1
        }
    }
}

fn execute(cli: Cli, argv: &[OsString]) -> CliResult<()> {
    let stage = stage_name(&cli.command);
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| CliError::new("config", e))?,
        None => PipelineConfig::default(),
    };
    let ctx = Ctx {
        stage,
        args: argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        seed: cli.seed.or(config.seed),
        config,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(ctx.err("--jobs must be at least 1"));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| ctx.err(e))?;
    pool.install(|| match &cli.command {
        Command::BpeLearn(a) => bpe_learn(&ctx, a),
        Command::BpeApply(a) => bpe_apply(&ctx, a),
        Command::AnnotateMerge(a) => annotate_merge(&ctx, a),
        Command::BuildInput(a) => build_inputs(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::FinetuneMinrisk(a) => finetune(&ctx, a),
        Command::AvgCheckpoints(a) => avg(&ctx, a),
        Command::Decode(a) => decode(&ctx, a),
        Command::EnsembleDecode(a) => ensemble_decode(&ctx, a),
        Command::Rescore(a) => rescore(&ctx, a),
        Command::TuneMert(a) => tune(&ctx, a),
        Command::QeTags(a) => qe_tags(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::SynthData(a) => synth(&ctx, a),
    })
}

fn read_tokenized(ctx: &Ctx, path: &Path) -> CliResult<Vec<Vec<String>>> {
    Ok(read_lines(path)
        .stage(ctx.stage)?
        .iter()
        .map(|l| tokenize(l))
        .collect())
}

fn same_len(ctx: &Ctx, what: &str, a: usize, b: usize) -> CliResult<()> {
    if a != b {
        return Err(ctx.err(format!("{what}: {a} vs {b} lines")));
    }
    Ok(())
}

fn write_tokenized(ctx: &Ctx, path: &Path, lines: &[Vec<String>]) -> CliResult<()> {
    write_lines(path, lines.iter().map(Vec::as_slice)).stage(ctx.stage)?;
    ctx.sidecar(path)
}

fn bpe_learn(ctx: &Ctx, a: &BpeLearnArgs) -> CliResult<()> {
    let inputs: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
    ctx.require(&inputs)?;
    let mut sentences = Vec::new();
    for p in &inputs {
        sentences.extend(read_tokenized(ctx, p)?);
    }
    let model = BpeModel::learn(sentences.iter().map(Vec::as_slice), a.merges, &a.marker);
    model.save(&a.output).stage(ctx.stage)?;
    ctx.sidecar(&a.output)
}

fn bpe_apply(ctx: &Ctx, a: &BpeApplyArgs) -> CliResult<()> {
    ctx.require(&[&a.rules, &a.input])?;
    let mut model = BpeModel::load(&a.rules).stage(ctx.stage)?;
    if let Some(m) = &a.marker {
        model = model.with_marker(m);
    }
    let out: Vec<Vec<String>> = read_tokenized(ctx, &a.input)?
        .iter()
        .map(|s| model.encode_sentence(s))
        .collect();
    write_tokenized(ctx, &a.output, &out)
}

fn annotate_merge(ctx: &Ctx, a: &AnnotateMergeArgs) -> CliResult<()> {
    ctx.require(&[&a.text, &a.pos, &a.dep, &a.head_pos])?;
    let text = read_tokenized(ctx, &a.text)?;
    let layers = [
        read_tokenized(ctx, &a.pos)?,
        read_tokenized(ctx, &a.dep)?,
        read_tokenized(ctx, &a.head_pos)?,
    ];
    let kind = ModelInputKind::SrcPlusMtFactor;
    let mut out = Vec::with_capacity(text.len());
    for (i, words) in text.iter().enumerate() {
        let mut tokens = Vec::with_capacity(words.len());
        for layer in &layers {
            let line = layer
                .get(i)
                .ok_or_else(|| ctx.err(format!("annotation files are shorter than the text ({} lines)", text.len())))?;
            if line.len() != words.len() {
                return Err(ctx.err(format!(
                    "line {}: {} words but {} annotations",
                    i + 1,
                    words.len(),
                    line.len()
                )));
            }
        }
        for (j, w) in words.iter().enumerate() {
            tokens.push(FactoredToken {
                surface: w.clone(),
                factors: layers.iter().map(|l| l[i][j].clone()).collect(),
            });
        }
        out.push(FactoredSentence { tokens, kind });
    }
    for layer in &layers {
        same_len(ctx, "annotation vs text", layer.len(), text.len())?;
    }
    write_factored_corpus(&a.output, &out, &FactorManifest::for_kind(kind)).stage(ctx.stage)?;
    ctx.sidecar(&a.output)
}

fn load_bpe(ctx: &Ctx, path: &Option<PathBuf>) -> CliResult<Option<BpeModel>> {
    path.as_ref()
        .map(|p| BpeModel::load(p).stage(ctx.stage))
        .transpose()
}

fn load_annotation(ctx: &Ctx, path: &Option<PathBuf>) -> CliResult<Option<Vec<FactoredSentence>>> {
    path.as_ref()
        .map(|p| {
            read_factored_corpus(p, Some(ModelInputKind::SrcPlusMtFactor))
                .map(|(s, _)| s)
                .stage(ctx.stage)
        })
        .transpose()
}

fn build_inputs(ctx: &Ctx, a: &BuildInputArgs) -> CliResult<()> {
    let mut required: Vec<&Path> = vec![&a.src, &a.mt];
    for p in [&a.pe, &a.src_bpe, &a.mt_bpe, &a.src_annotation, &a.mt_annotation, &a.alignment, &a.align_model]
        .into_iter()
        .flatten()
    {
        required.push(p);
    }
    ctx.require(&required)?;
    if a.target_output.is_some() && a.pe.is_none() {
        return Err(ctx.err("--target-output needs --pe"));
    }
    if a.kind == ModelInputKind::MtAligned && a.alignment.is_none() && a.align_model.is_none() {
        return Err(ctx.err("mt-aligned input needs --alignment or --align-model"));
    }
    let src = read_tokenized(ctx, &a.src)?;
    let mt = read_tokenized(ctx, &a.mt)?;
    same_len(ctx, "src vs mt", src.len(), mt.len())?;
    let pe = match &a.pe {
        Some(p) => {
            let pe = read_tokenized(ctx, p)?;
            same_len(ctx, "mt vs pe", mt.len(), pe.len())?;
            Some(pe)
        }
        None => None,
    };
    let src_bpe = load_bpe(ctx, &a.src_bpe)?;
    let mt_bpe = load_bpe(ctx, &a.mt_bpe)?;
    let src_ann = load_annotation(ctx, &a.src_annotation)?;
    let mt_ann = load_annotation(ctx, &a.mt_annotation)?;
    for ann in [&src_ann, &mt_ann].into_iter().flatten() {
        same_len(ctx, "annotation vs src", ann.len(), src.len())?;
    }
    let file_alignment = match &a.alignment {
        Some(p) => {
            let al = read_tokenized(ctx, p)?;
            same_len(ctx, "alignment vs mt", al.len(), mt.len())?;
            Some(al)
        }
        None => None,
    };
    let align_model = a
        .align_model
        .as_ref()
        .map(|p| Checkpoint::load(p).map(|c| c.model).stage(ctx.stage))
        .transpose()?;

    let mut out = Vec::with_capacity(src.len());
    for i in 0..src.len() {
        let triple = TrainingTriple {
            src: src[i].clone(),
            mt: mt[i].clone(),
            pe: pe.as_ref().map_or_else(Vec::new, |p| p[i].clone()),
        };
        let mut extras = InputExtras {
            src_annotation: src_ann.as_ref().map(|v| &v[i]),
            mt_annotation: mt_ann.as_ref().map(|v| &v[i]),
            alignment: file_alignment.as_ref().map(|v| v[i].as_slice()),
            src_bpe: src_bpe.as_ref(),
            mt_bpe: mt_bpe.as_ref(),
        };
        let sentence = match (&align_model, a.kind) {
            (Some(model), ModelInputKind::MtAligned) => {
                extras.alignment = None;
                let src_input = build_input(&triple, ModelInputKind::Src, &extras).stage(ctx.stage)?;
                let mt_input = build_input(&triple, ModelInputKind::Mt, &extras).stage(ctx.stage)?;
                let (_, record) = extract_alignments(model, &src_input, &mt_input.surfaces()).stage(ctx.stage)?;
                let origins = match &src_bpe {
                    Some(b) => piece_origins(&b.segment_sentence(&triple.src)),
                    None => (0..triple.src.len()).collect(),
                };
                attach_alignment_factor(&mt_input, &record, &triple.src, &origins).stage(ctx.stage)?
            }
            _ => build_input(&triple, a.kind, &extras).map_err(|e| ctx.err(format!("line {}: {e}", i + 1)))?,
        };
        out.push(sentence);
    }
    write_factored_corpus(&a.output, &out, &FactorManifest::for_kind(a.kind)).stage(ctx.stage)?;
    ctx.sidecar(&a.output)?;
    if let (Some(path), Some(pe)) = (&a.target_output, &pe) {
        let target: Vec<Vec<String>> = pe
            .iter()
            .map(|s| match &mt_bpe {
                Some(b) => b.encode_sentence(s),
                None => s.clone(),
            })
            .collect();
        write_tokenized(ctx, path, &target)?;
    }
    Ok(())
}

fn read_model_input(ctx: &Ctx, path: &Path, kind: ModelInputKind) -> CliResult<Vec<FactoredSentence>> {
    let (sentences, manifest) = read_factored_corpus(path, Some(kind)).stage(ctx.stage)?;
    if manifest.kind != kind {
        return Err(ctx.err(format!(
            "{} holds {} input but {} is expected",
            path.display(),
            manifest.kind,
            kind
        )));
    }
    Ok(sentences)
}

fn encode_pairs(
    ctx: &Ctx,
    model: &Seq2Seq,
    inputs: &[FactoredSentence],
    targets: &[Vec<String>],
) -> CliResult<Vec<EncodedPair>> {
    same_len(ctx, "input vs target", inputs.len(), targets.len())?;
    inputs
        .iter()
        .zip(targets)
        .map(|(s, t)| model.encode_pair(s, t).stage(ctx.stage))
        .collect()
}

#[derive(Serialize)]
struct CheckpointRecord {
    file: String,
    step: u64,
    dev_bleu: Option<f64>,
}

#[derive(Serialize)]
struct TrainSummary {
    kind: ModelInputKind,
    parameters: usize,
    epoch_loss: Vec<f64>,
    diverged_at: Option<u64>,
    checkpoints: Vec<CheckpointRecord>,
}

fn train(ctx: &Ctx, a: &TrainArgs) -> CliResult<()> {
    let mut required: Vec<&Path> = vec![&a.input, &a.target];
    for p in [&a.dev_input, &a.dev_target, &a.target_vocab, &a.init, &a.upsample_input, &a.upsample_target]
        .into_iter()
        .flatten()
    {
        required.push(p);
    }
    ctx.require(&required)?;
    let seed = ctx.seed()?;
    let mut inputs = read_model_input(ctx, &a.input, a.kind)?;
    let mut targets = read_tokenized(ctx, &a.target)?;
    same_len(ctx, "input vs target", inputs.len(), targets.len())?;
    if let (Some(i), Some(t)) = (&a.upsample_input, &a.upsample_target) {
        let small_inputs = read_model_input(ctx, i, a.kind)?;
        let small_targets = read_tokenized(ctx, t)?;
        same_len(ctx, "upsampled input vs target", small_inputs.len(), small_targets.len())?;
        let factor = a.upsample_factor as usize;
        inputs = upsample_items(&inputs, &small_inputs, factor);
        targets = upsample_items(&targets, &small_targets, factor);
    }

    let model = match &a.init {
        Some(p) => {
            let model = Checkpoint::load(p).stage(ctx.stage)?.model;
            if model.config.input_kind != a.kind {
                return Err(ctx.err(format!(
                    "--init checkpoint expects {} input but --kind is {}",
                    model.config.input_kind, a.kind
                )));
            }
            model
        }
        None => {
            let vocab_size = a.vocab_size.unwrap_or(ctx.config.model.vocab_size);
            let mut input_vocabs = Vec::with_capacity(a.kind.arity());
            for k in 0..a.kind.arity() {
                let layer: Vec<Vec<&str>> = inputs.iter().map(|s| s.layer(k)).collect();
                input_vocabs.push(build_vocab(layer.iter().map(Vec::as_slice), vocab_size).stage(ctx.stage)?);
            }
            let target_vocab = match &a.target_vocab {
                Some(p) => Vocabulary::load(p).stage(ctx.stage)?,
                None => build_vocab(targets.iter().map(Vec::as_slice), vocab_size).stage(ctx.stage)?,
            };
            let config = match a.width.or(ctx.config.model.width) {
                Some(w) => ModelConfig::with_width(a.kind, w),
                None => ModelConfig::for_kind(a.kind),
            };
            Seq2Seq::new(config, input_vocabs, target_vocab, seed).stage(ctx.stage)?
        }
    };
    let train_pairs = encode_pairs(ctx, &model, &inputs, &targets)?;
    let dev_pairs = match (&a.dev_input, &a.dev_target) {
        (Some(i), Some(t)) => {
            let di = read_model_input(ctx, i, a.kind)?;
            let dt = read_tokenized(ctx, t)?;
            encode_pairs(ctx, &model, &di, &dt)?
        }
        _ => Vec::new(),
    };
    let mut cfg = ctx.config.train.clone();
    cfg.seed = seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let run = train_xent(&model, &train_pairs, &dev_pairs, &cfg).stage(ctx.stage)?;
    if let Some(step) = run.diverged_at {
        log::warn!("training diverged at update {step}; kept the last finite parameters");
    }

    std::fs::create_dir_all(&a.output_dir).map_err(|e| ctx.err(format!("{}: {e}", a.output_dir.display())))?;
    let vocab_path = a.output_dir.join("target.vocab");
    run.model.target_vocab.save(&vocab_path).stage(ctx.stage)?;
    ctx.sidecar(&vocab_path)?;
    let mut records = Vec::new();
    for ck in &run.checkpoints {
        let file = format!("step-{:06}.ckpt", ck.step);
        let path = a.output_dir.join(&file);
        ck.save(&path).stage(ctx.stage)?;
        ctx.sidecar(&path)?;
        records.push(CheckpointRecord {
            file,
            step: ck.step,
            dev_bleu: ck.dev_metric,
        });
    }
    let last = run.checkpoints.last().expect("training always saves a checkpoint");
    let final_path = a.output_dir.join("final.ckpt");
    last.save(&final_path).stage(ctx.stage)?;
    ctx.sidecar(&final_path)?;
    let summary = TrainSummary {
        kind: a.kind,
        parameters: run.model.params.num_parameters(),
        epoch_loss: run.epoch_loss,
        diverged_at: run.diverged_at,
        checkpoints: records,
    };
    ctx.write_text(
        &a.output_dir.join("train.json"),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )
}

fn finetune(ctx: &Ctx, a: &FinetuneArgs) -> CliResult<()> {
    ctx.require(&[&a.checkpoint, &a.input, &a.target])?;
    let seed = ctx.seed()?;
    let ck = Checkpoint::load(&a.checkpoint).stage(ctx.stage)?;
    let inputs = read_model_input(ctx, &a.input, ck.model.config.input_kind)?;
    let targets = read_tokenized(ctx, &a.target)?;
    let pairs = encode_pairs(ctx, &ck.model, &inputs, &targets)?;
    let mut cfg = ctx.config.minrisk.clone();
    cfg.seed = seed;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    let run = train_min_risk(&ck.model, &pairs, &cfg).stage(ctx.stage)?;
    let out = Checkpoint {
        model: run.model,
        step: ck.step + cfg.iterations as u64,
        dev_metric: None,
    };
    out.save(&a.output).stage(ctx.stage)?;
    ctx.sidecar(&a.output)?;
    let report = serde_json::json!({ "probe_risk": run.probe_risk, "skipped": run.skipped });
    let mut name = a.output.as_os_str().to_owned();
    name.push(".minrisk.json");
    ctx.write_text(Path::new(&name), &(serde_json::to_string_pretty(&report).expect("json") + "\n"))
}

fn avg(ctx: &Ctx, a: &AvgArgs) -> CliResult<()> {
    let inputs: Vec<&Path> = a.inputs.iter().map(PathBuf::as_path).collect();
    ctx.require(&inputs)?;
    let all: Vec<Checkpoint> = inputs
        .iter()
        .map(|p| Checkpoint::load(p).stage(ctx.stage))
        .collect::<CliResult<_>>()?;
    let chosen: Vec<&Checkpoint> = match a.best {
        Some(0) => return Err(ctx.err("--best must be at least 1")),
        Some(k) => select_best(&all, k),
        None => all.iter().collect(),
    };
    let model = average_checkpoints(&chosen).stage(ctx.stage)?;
    let out = Checkpoint {
        model,
        step: chosen.iter().map(|c| c.step).max().unwrap_or(0),
        dev_metric: None,
    };
    out.save(&a.output).stage(ctx.stage)?;
    ctx.sidecar(&a.output)
}

fn render_words(symbols: Vec<String>, marker: Option<&str>) -> Vec<String> {
    match marker {
        Some(m) => desegment_surfaces(&symbols, m),
        None => symbols,
    }
}

fn decode(ctx: &Ctx, a: &DecodeArgs) -> CliResult<()> {
    ctx.require(&[&a.checkpoint, &a.input])?;
    let model = Checkpoint::load(&a.checkpoint).stage(ctx.stage)?.model;
    let inputs = read_model_input(ctx, &a.input, model.config.input_kind)?;
    let cfg = ctx.beam(&a.beam, a.nbest);
    let marker = a.beam.desegment.as_deref();
    let decoded: Vec<_> = inputs
        .par_iter()
        .map(|s| beam_search(&model, s, &cfg))
        .collect::<Result<_, _>>()
        .stage(ctx.stage)?;
    let best: Vec<Vec<String>> = decoded
        .iter()
        .map(|h| render_words(model.target_vocab.decode(&h[0].tokens), marker))
        .collect();
    write_tokenized(ctx, &a.output, &best)?;
    if let Some(path) = &a.nbest_output {
        let mut entries = Vec::new();
        for (i, hyps) in decoded.iter().enumerate() {
            for h in hyps {
                entries.push(NBestEntry {
                    sentence_id: i,
                    tokens: render_words(model.target_vocab.decode(&h.tokens), marker),
                    features: vec![h.score],
                    score: h.score,
                });
            }
        }
        write_nbest(path, &entries).stage(ctx.stage)?;
        ctx.sidecar(path)?;
    }
    Ok(())
}

/// Loads the manifest's ensemble, applies a weights file if given, and
/// reads one input corpus per member.
fn load_ensemble(
    ctx: &Ctx,
    manifest: &Path,
    weights: Option<&Path>,
    inputs: &[PathBuf],
) -> CliResult<(EnsembleSpec, Vec<Vec<FactoredSentence>>)> {
    let mut required: Vec<&Path> = vec![manifest];
    required.extend(inputs.iter().map(PathBuf::as_path));
    required.extend(weights);
    ctx.require(&required)?;
    let m = EnsembleManifest::load(manifest).stage(ctx.stage)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut spec = m.load_spec(base).stage(ctx.stage)?;
    if inputs.len() != spec.len() {
        return Err(ctx.err(format!("{} members but {} input files", spec.len(), inputs.len())));
    }
    if let Some(p) = weights {
        let w = weights_for(ctx, &spec, p)?;
        spec.set_weights(w).stage(ctx.stage)?;
    }
    let per_member = spec
        .members()
        .iter()
        .zip(inputs)
        .map(|(m, p)| read_model_input(ctx, p, m.kind))
        .collect::<CliResult<Vec<_>>>()?;
    let bundles = bundles_from_members(per_member).stage(ctx.stage)?;
    Ok((spec, bundles))
}

/// Weights from a file, in member order, matched by name.
fn weights_for(ctx: &Ctx, spec: &EnsembleSpec, path: &Path) -> CliResult<Vec<f64>> {
    let pairs = read_weights(path).stage(ctx.stage)?;
    spec.names()
        .iter()
        .map(|n| {
            pairs
                .iter()
                .find(|(name, _)| name == n)
                .map(|(_, w)| *w)
                .ok_or_else(|| ctx.err(format!("{}: no weight for member {n}", path.display())))
        })
        .collect()
}

fn ensemble_decode(ctx: &Ctx, a: &EnsembleDecodeArgs) -> CliResult<()> {
    let (spec, bundles) = load_ensemble(ctx, &a.manifest, a.weights.as_deref(), &a.inputs)?;
    let cfg = ctx.beam(&a.beam, a.nbest);
    let marker = a.beam.desegment.as_deref();
    let decoded = decode_corpus(&spec, &bundles, &cfg).stage(ctx.stage)?;
    let best: Vec<Vec<String>> = decoded
        .iter()
        .map(|h| hypothesis_words(&spec, &h[0].tokens, marker))
        .collect();
    write_tokenized(ctx, &a.output, &best)?;
    if let Some(path) = &a.nbest_output {
        let mut entries = Vec::new();
        for (i, hyps) in decoded.into_iter().enumerate() {
            for h in hyps {
                entries.push(NBestEntry {
                    sentence_id: i,
                    tokens: hypothesis_words(&spec, &h.tokens, marker),
                    features: h.features,
                    score: h.score,
                });
            }
        }
        write_nbest(path, &entries).stage(ctx.stage)?;
        ctx.sidecar(path)?;
    }
    Ok(())
}

fn rescore(ctx: &Ctx, a: &RescoreArgs) -> CliResult<()> {
    ctx.require(&[&a.nbest])?;
    let (spec, bundles) = load_ensemble(ctx, &a.manifest, a.weights.as_deref(), &a.inputs)?;
    let entries = read_nbest(&a.nbest).stage(ctx.stage)?;
    let mut groups: Vec<Vec<&NBestEntry>> = vec![Vec::new(); bundles.len()];
    for e in &entries {
        groups
            .get_mut(e.sentence_id)
            .ok_or_else(|| ctx.err(format!("sentence id {} out of range", e.sentence_id)))?
            .push(e);
    }
    let vocab = &spec.members()[0].model.target_vocab;
    let rescored: Vec<Vec<NBestEntry>> = groups
        .par_iter()
        .enumerate()
        .map(|(i, group)| {
            let ids: Vec<Vec<u32>> = group.iter().map(|e| vocab.encode(&e.tokens)).collect();
            let scores = rescore_nbest(&spec, &bundles[i], &ids)?;
            let mut out: Vec<NBestEntry> = group
                .iter()
                .zip(scores)
                .map(|(e, (features, score))| NBestEntry {
                    sentence_id: i,
                    tokens: e.tokens.clone(),
                    features,
                    score,
                })
                .collect();
            out.sort_by(|x, y| y.score.total_cmp(&x.score));
            Ok(out)
        })
        .collect::<Result<_, crate::ensemble::EnsembleError>>()
        .stage(ctx.stage)?;
    let flat: Vec<NBestEntry> = rescored.into_iter().flatten().collect();
    write_nbest(&a.output, &flat).stage(ctx.stage)?;
    ctx.sidecar(&a.output)
}

fn tune(ctx: &Ctx, a: &TuneArgs) -> CliResult<()> {
    let seed = ctx.seed()?;
    let objective: Objective = a.objective.into();
    let mut required: Vec<&Path> = vec![&a.mt];
    required.extend(a.pe.as_deref());
    required.extend(a.gold_tags.as_deref());
    ctx.require(&required)?;
    match objective {
        Objective::Ter if a.pe.is_none() => return Err(ctx.err("the ter objective needs --pe")),
        Objective::F1Mult if a.gold_tags.is_none() => return Err(ctx.err("the f1-mult objective needs --gold-tags")),
        _ => {}
    }
    let (spec, bundles) = load_ensemble(ctx, &a.manifest, a.initial.as_deref(), &a.inputs)?;
    let mt = read_tokenized(ctx, &a.mt)?;
    same_len(ctx, "mt vs inputs", mt.len(), bundles.len())?;
    let pe = a.pe.as_ref().map(|p| read_tokenized(ctx, p)).transpose()?;
    let tags = a
        .gold_tags
        .as_ref()
        .map(|p| read_tags(p).stage(ctx.stage))
        .transpose()?;
    if let Some(pe) = &pe {
        same_len(ctx, "mt vs pe", mt.len(), pe.len())?;
    }
    if let Some(tags) = &tags {
        same_len(ctx, "mt vs gold tags", mt.len(), tags.len())?;
        for (i, (m, t)) in mt.iter().zip(tags).enumerate() {
            if m.len() != t.len() {
                return Err(ctx.err(format!("line {}: {} MT words but {} tags", i + 1, m.len(), t.len())));
            }
        }
    }
    let golds: Vec<SentenceGold> = mt
        .iter()
        .enumerate()
        .map(|(i, m)| SentenceGold {
            mt: m.clone(),
            pe: pe.as_ref().map(|p| p[i].clone()),
            tags: tags.as_ref().map(|t| t[i].clone()),
        })
        .collect();
    let m = &ctx.config.mert;
    let cfg = TunerConfig {
        iterations: a.iterations.unwrap_or(m.iterations),
        random_directions: m.random_directions,
        restarts: m.restarts,
        threshold: m.threshold,
        objective,
        nbest: a.nbest.unwrap_or(m.nbest),
        seed,
    };
    let decoder = EnsembleDevDecoder {
        spec: &spec,
        bundles: &bundles,
        beam: ctx.beam(&a.beam, 1),
        marker: a.beam.desegment.clone(),
    };
    let result = mert_tune(spec.weights(), &decoder, &golds, &cfg).stage(ctx.stage)?;
    if let Some(reason) = &result.aborted {
        log::warn!("tuning stopped early: {reason}");
    }
    write_weights(
        &a.output,
        &spec.names(),
        &result.weights,
        objective,
        result.history.len(),
        result.objective,
    )
    .stage(ctx.stage)?;
    ctx.sidecar(&a.output)?;
    let mut name = a.output.as_os_str().to_owned();
    name.push(".history.json");
    ctx.write_text(
        Path::new(&name),
        &(serde_json::to_string_pretty(&result.history).expect("history serializes") + "\n"),
    )?;
    if let Some(path) = &a.pool_output {
        write_pool(path, &result.pool, &result.weights).stage(ctx.stage)?;
        ctx.sidecar(path)?;
    }
    Ok(())
}

fn qe_tags(ctx: &Ctx, a: &QeTagsArgs) -> CliResult<()> {
    ctx.require(&[&a.mt, &a.pe])?;
    let mt = read_tokenized(ctx, &a.mt)?;
    let pe = read_tokenized(ctx, &a.pe)?;
    same_len(ctx, "mt vs pe", mt.len(), pe.len())?;
    let opts = TagOptions {
        case_sensitive: a.case_sensitive,
        shifts: a.shifts,
    };
    let tags: Vec<Vec<Tag>> = mt
        .par_iter()
        .zip(&pe)
        .map(|(m, p)| match &a.desegment {
            Some(marker) => tag_sentence(m, &desegment_surfaces(p, marker), opts),
            None => tag_sentence(m, p, opts),
        })
        .collect();
    write_tags(&a.output, &tags).stage(ctx.stage)?;
    ctx.sidecar(&a.output)
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> CliResult<()> {
    if a.hyp.is_none() && a.pred_tags.is_none() {
        return Err(ctx.err("nothing to evaluate: give --hyp/--ref and/or --pred-tags/--gold-tags"));
    }
    let mut bleu = None;
    let mut ter = None;
    if let (Some(h), Some(r)) = (&a.hyp, &a.reference) {
        ctx.require(&[h, r])?;
        let hyps = read_tokenized(ctx, h)?;
        let refs = read_tokenized(ctx, r)?;
        same_len(ctx, "hyp vs ref", hyps.len(), refs.len())?;
        if hyps.is_empty() {
            return Err(ctx.err("empty corpus"));
        }
        if let Some(i) = refs.iter().position(Vec::is_empty) {
            return Err(ctx.err(format!("reference line {} is empty", i + 1)));
        }
        let opts = TerOptions {
            case_sensitive: a.case_sensitive,
            ..TerOptions::default()
        };
        let (b, t) = hyps
            .par_iter()
            .zip(&refs)
            .map(|(h, r)| (BleuStats::sentence(h, r), ter_sentence(h, r, &opts)))
            .reduce(
                || (BleuStats::default(), TerStats::default()),
                |(b1, t1), (b2, t2)| (b1 + b2, t1 + t2),
            );
        bleu = Some(b);
        ter = Some(t);
    }
    let mut qe = None;
    if let (Some(p), Some(g)) = (&a.pred_tags, &a.gold_tags) {
        ctx.require(&[p, g])?;
        let pred = read_tags(p).stage(ctx.stage)?;
        let gold = read_tags(g).stage(ctx.stage)?;
        same_len(ctx, "predicted vs gold tags", pred.len(), gold.len())?;
        for (i, (p, g)) in pred.iter().zip(&gold).enumerate() {
            if p.len() != g.len() {
                return Err(ctx.err(format!("tag line {}: {} vs {} tags", i + 1, p.len(), g.len())));
            }
        }
        qe = Some(
            pred.par_iter()
                .zip(&gold)
                .map(|(p, g)| QeConfusion::sentence(p, g))
                .reduce(QeConfusion::default, |x, y| x + y),
        );
    }
    let report = MetricReport::from_stats(bleu, ter, qe).render();
    match &a.output {
        Some(path) => ctx.write_text(path, &report)?,
        None => print!("{report}"),
    }
    Ok(())
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> CliResult<()> {
    let seed = ctx.seed()?;
    std::fs::create_dir_all(&a.output_dir).map_err(|e| ctx.err(format!("{}: {e}", a.output_dir.display())))?;
    let corpora = match a.mode {
        SynthMode::NoisyCopy => {
            let task = NoisyCopyTask::default();
            vec![
                ("train", task.generate(a.train_size, seed)),
                ("dev", task.generate(a.dev_size, seed.wrapping_add(1))),
            ]
        }
        SynthMode::RoundTrip => {
            let (Some(refs), Some(t2s), Some(s2t)) = (&a.refs, &a.tgt2src, &a.src2tgt) else {
                return Err(ctx.err("round-trip needs --refs, --tgt2src and --src2tgt"));
            };
            ctx.require(&[refs, t2s, s2t])?;
            let refs = read_tokenized(ctx, refs)?;
            let back = Checkpoint::load(t2s).stage(ctx.stage)?.model;
            let fwd = Checkpoint::load(s2t).stage(ctx.stage)?.model;
            let cfg = ctx.beam(&BeamArgs { beam: None, max_len: None, desegment: None }, 1);
            let corpus = round_trip_synthesize(
                &refs,
                &ModelTranslator { model: &back, beam: cfg },
                &ModelTranslator { model: &fwd, beam: cfg },
            );
            vec![("round-trip", corpus)]
        }
    };
    for (name, corpus) in corpora {
        let path = |ext: &str| a.output_dir.join(format!("{name}.{ext}"));
        let (src, mt, pe) = (path("src"), path("mt"), path("pe"));
        corpus.save(&src, &mt, &pe).stage(ctx.stage)?;
        for p in [&src, &mt, &pe] {
            ctx.sidecar(p)?;
        }
        let tags: Vec<Vec<Tag>> = corpus
            .triples
            .iter()
            .map(|t| tag_sentence(&t.mt, &t.pe, TagOptions::default()))
            .collect();
        let tags_path = path("tags");
        write_tags(&tags_path, &tags).stage(ctx.stage)?;
        ctx.sidecar(&tags_path)?;
    }
    Ok(())
}

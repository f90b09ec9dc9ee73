//! Parallel (SRC, MT, PE) corpora, vocabularies, upsampling and round-trip
//! synthetic data.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Separator between factors in the factored text format. Never valid inside a token.
pub const FACTOR_SEPARATOR: char = '|';

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const BREAK: &str = "BREAK";

/// Reserved symbols in id order. Every vocabulary starts with these.
pub const RESERVED: [&str; 5] = [PAD, BOS, EOS, UNK, BREAK];

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const BREAK_ID: u32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parallel files differ in length: src={src} mt={mt} pe={pe}")]
    Parallelism { src: usize, mt: usize, pe: usize },
    #[error("{side} line {line}: {reason}")]
    Validation {
        side: &'static str,
        line: usize,
        reason: String,
    },
    #[error("vocabulary size {max_size} must exceed the {reserved} reserved symbols")]
    VocabTooSmall { max_size: usize, reserved: usize },
    #[error("malformed vocabulary: {0}")]
    MalformedVocab(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// One (source, machine translation, post-edit) training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTriple {
    pub src: Vec<String>,
    pub mt: Vec<String>,
    pub pe: Vec<String>,
}

impl TrainingTriple {
    pub fn new(src: Vec<String>, mt: Vec<String>, pe: Vec<String>) -> Result<Self> {
        let triple = Self { src, mt, pe };
        triple.validate(0)?;
        Ok(triple)
    }

    /// Builds a triple from three whitespace-tokenized lines.
    pub fn from_lines(src: &str, mt: &str, pe: &str) -> Result<Self> {
        Self::new(tokenize(src), tokenize(mt), tokenize(pe))
    }

    fn validate(&self, line: usize) -> Result<()> {
        for (side, tokens) in [("src", &self.src), ("mt", &self.mt), ("pe", &self.pe)] {
            validate_tokens(side, line, tokens)?;
        }
        Ok(())
    }
}

fn validate_tokens(side: &'static str, line: usize, tokens: &[String]) -> Result<()> {
    if tokens.is_empty() {
        return Err(CorpusError::Validation {
            side,
            line,
            reason: "empty sentence".into(),
        });
    }
    for token in tokens {
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(CorpusError::Validation {
                side,
                line,
                reason: format!("invalid token {token:?}"),
            });
        }
        if token.contains(FACTOR_SEPARATOR) {
            return Err(CorpusError::Validation {
                side,
                line,
                reason: format!("token {token:?} contains the reserved '|' separator"),
            });
        }
    }
    Ok(())
}

/// Splits a pre-tokenized line on whitespace.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub name: String,
    pub triples: Vec<TrainingTriple>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, triples: Vec<TrainingTriple>) -> Self {
        Self {
            name: name.into(),
            triples,
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn src_side(&self) -> impl Iterator<Item = &[String]> {
        self.triples.iter().map(|t| t.src.as_slice())
    }

    pub fn mt_side(&self) -> impl Iterator<Item = &[String]> {
        self.triples.iter().map(|t| t.mt.as_slice())
    }

    pub fn pe_side(&self) -> impl Iterator<Item = &[String]> {
        self.triples.iter().map(|t| t.pe.as_slice())
    }

    /// Returns a copy with triples permuted by a seeded RNG.
    pub fn shuffled(&self, seed: u64) -> Corpus {
        let mut triples = self.triples.clone();
        triples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Corpus::new(self.name.clone(), triples)
    }

    /// Writes the three sides as parallel line files.
    pub fn save(&self, src_path: &Path, mt_path: &Path, pe_path: &Path) -> Result<()> {
        write_lines(src_path, self.src_side())?;
        write_lines(mt_path, self.mt_side())?;
        write_lines(pe_path, self.pe_side())
    }
}

/// Writes one sentence per line, tokens joined by a single space.
pub fn write_lines<'a>(path: &Path, sentences: impl IntoIterator<Item = &'a [String]>) -> Result<()> {
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for sentence in sentences {
        writeln!(out, "{}", sentence.join(" ")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads a text file into lines, without trailing newline characters.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io_err)
}

/// Loads three line-parallel, whitespace-tokenized files into a corpus.
pub fn load_triples(src_path: &Path, mt_path: &Path, pe_path: &Path) -> Result<Corpus> {
    let src = read_lines(src_path)?;
    let mt = read_lines(mt_path)?;
    let pe = read_lines(pe_path)?;
    if src.len() != mt.len() || mt.len() != pe.len() {
        return Err(CorpusError::Parallelism {
            src: src.len(),
            mt: mt.len(),
            pe: pe.len(),
        });
    }
    let mut triples = Vec::with_capacity(src.len());
    for (i, ((s, m), p)) in src.iter().zip(&mt).zip(&pe).enumerate() {
        let triple = TrainingTriple {
            src: tokenize(s),
            mt: tokenize(m),
            pe: tokenize(p),
        };
        triple.validate(i + 1)?;
        triples.push(triple);
    }
    let name = src_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Corpus::new(name, triples))
}

/// `large` followed by `factor` verbatim copies of `small`.
pub fn upsample_concat(large: &Corpus, small: &Corpus, factor: usize) -> Corpus {
    let triples = upsample_items(&large.triples, &small.triples, factor);
    Corpus::new(format!("{}+{}x{}", large.name, factor, small.name), triples)
}

/// [`upsample_concat`] over any line-parallel items.
pub fn upsample_items<T: Clone>(large: &[T], small: &[T], factor: usize) -> Vec<T> {
    assert!(factor >= 1, "upsampling factor must be at least 1");
    let mut out = Vec::with_capacity(large.len() + factor * small.len());
    out.extend_from_slice(large);
    for _ in 0..factor {
        out.extend_from_slice(small);
    }
    out
}

/// Bijective symbol/id map with the reserved symbols at ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_symbols(Vec::<String>::new()).expect("reserved-only vocabulary is valid")
    }
}

impl Vocabulary {
    /// Builds a vocabulary from the non-reserved symbols, in id order.
    pub fn from_symbols<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(symbols.into_iter().map(Into::into));
        let mut ids = HashMap::with_capacity(all.len());
        for (i, symbol) in all.iter().enumerate() {
            if ids.insert(symbol.clone(), i as u32).is_some() {
                return Err(CorpusError::MalformedVocab(format!(
                    "duplicate symbol {symbol:?}"
                )));
            }
        }
        Ok(Self { symbols: all, ids })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.ids.get(symbol).copied()
    }

    /// Id of `symbol`, or the UNK id.
    pub fn id_or_unk(&self, symbol: &str) -> u32 {
        self.id(symbol).unwrap_or(UNK_ID)
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.symbol(id).unwrap_or(UNK).to_owned())
            .collect()
    }

    /// One symbol per line in id order, reserved symbols included.
    pub fn to_text(&self) -> String {
        let mut text = self.symbols.join("\n");
        text.push('\n');
        text
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(CorpusError::MalformedVocab(
                "reserved symbols missing or out of order".into(),
            ));
        }
        Self::from_symbols(lines[RESERVED.len()..].iter().copied())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// SHA-256 of the canonical text form; ensembles compare these.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Keeps the `max_size - 5` most frequent symbols; ties go to the
/// lexicographically smaller symbol.
pub fn build_vocab<'a, S, I>(sentences: I, max_size: usize) -> Result<Vocabulary>
where
    S: AsRef<str> + 'a,
    I: IntoIterator<Item = &'a [S]>,
{
    if max_size <= RESERVED.len() {
        return Err(CorpusError::VocabTooSmall {
            max_size,
            reserved: RESERVED.len(),
        });
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in sentences {
        for token in sentence {
            let token = token.as_ref();
            if !RESERVED.contains(&token) {
                *counts.entry(token).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED.len());
    Vocabulary::from_symbols(ranked.into_iter().map(|(s, _)| s))
}

/// Anything that maps a tokenized sentence to another tokenized sentence.
pub trait Translator {
    fn translate(&self, sentence: &[String]) -> std::result::Result<Vec<String>, String>;
}

/// Copies its input; useful as a degenerate translator.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, sentence: &[String]) -> std::result::Result<Vec<String>, String> {
        Ok(sentence.to_vec())
    }
}

/// Back-translates each reference into a pseudo-source, translates that
/// forward into a pseudo-hypothesis, and emits (pseudo-source,
/// pseudo-hypothesis, reference). Sentences whose decoding fails or comes
/// back empty are skipped with a warning.
pub fn round_trip_synthesize(
    refs: &[Vec<String>],
    tgt2src: &dyn Translator,
    src2tgt: &dyn Translator,
) -> Corpus {
    let mut triples = Vec::with_capacity(refs.len());
    for (i, reference) in refs.iter().enumerate() {
        let synth = tgt2src.translate(reference).and_then(|pseudo_src| {
            let pseudo_hyp = src2tgt.translate(&pseudo_src)?;
            TrainingTriple::new(pseudo_src, pseudo_hyp, reference.clone()).map_err(|e| e.to_string())
        });
        match synth {
            Ok(triple) => triples.push(triple),
            Err(reason) => log::warn!("round-trip synthesis skipped sentence {i}: {reason}"),
        }
    }
    Corpus::new("round-trip", triples)
}

/// Seeded generator for the synthetic noisy-copy post-editing task used in
/// tests and demos.
///
/// Each source word `s<k>` translates to one of two target words `t<2k>` or
/// `t<2k+1>`, so source-only models cannot resolve the choice. The MT side is
/// the post-edit with word-level noise: substitutions by a word from a
/// different source class, deletions and spurious insertions.
#[derive(Debug, Clone)]
pub struct NoisyCopyTask {
    pub source_words: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub substitute_prob: f64,
    pub delete_prob: f64,
    pub insert_prob: f64,
}

impl Default for NoisyCopyTask {
    fn default() -> Self {
        Self {
            source_words: 30,
            min_len: 3,
            max_len: 7,
            substitute_prob: 0.15,
            delete_prob: 0.05,
            insert_prob: 0.05,
        }
    }
}

impl NoisyCopyTask {
    pub fn target_word(class: usize, variant: usize) -> String {
        format!("t{}", 2 * class + variant)
    }

    pub fn source_word(class: usize) -> String {
        format!("s{class}")
    }

    pub fn generate(&self, n: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triples = Vec::with_capacity(n);
        while triples.len() < n {
            let len = rng.gen_range(self.min_len..=self.max_len);
            let classes: Vec<(usize, usize)> = (0..len)
                .map(|_| (rng.gen_range(0..self.source_words), rng.gen_range(0..2)))
                .collect();
            let src: Vec<String> = classes.iter().map(|&(c, _)| Self::source_word(c)).collect();
            let pe: Vec<String> = classes
                .iter()
                .map(|&(c, v)| Self::target_word(c, v))
                .collect();
            let mut mt = Vec::with_capacity(len + 2);
            for &(c, v) in &classes {
                let roll: f64 = rng.gen();
                if roll < self.delete_prob {
                    continue;
                } else if roll < self.delete_prob + self.substitute_prob {
                    let mut other = rng.gen_range(0..self.source_words);
                    if other == c {
                        other = (other + 1) % self.source_words;
                    }
                    mt.push(Self::target_word(other, rng.gen_range(0..2)));
                } else {
                    mt.push(Self::target_word(c, v));
                }
                if rng.gen::<f64>() < self.insert_prob {
                    mt.push(Self::target_word(
                        rng.gen_range(0..self.source_words),
                        rng.gen_range(0..2),
                    ));
                }
            }
            if mt.is_empty() {
                continue;
            }
            triples.push(TrainingTriple { src, mt, pe });
        }
        Corpus::new("noisy-copy", triples)
    }
}

//! Factored input sentences for the five model kinds and their pipe-separated
//! text format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{TrainingTriple, BREAK, FACTOR_SEPARATOR};
use crate::nmt::AttentionRecord;
use crate::subword::{project_factors_bilou, BpeModel, SubwordError};

#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error("input kind {kind} requires {layer}")]
    MissingExtra {
        kind: ModelInputKind,
        layer: &'static str,
    },
    #[error("parse error at token {token}: {reason}")]
    Parse { token: usize, reason: String },
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{side} annotation token {index} is {found:?}, sentence has {expected:?}")]
    AnnotationMismatch {
        side: &'static str,
        index: usize,
        expected: String,
        found: String,
    },
    #[error("attention row {row} sums to {sum}")]
    Unnormalized { row: usize, sum: f64 },
    #[error("unknown input kind {0:?}")]
    UnknownKind(String),
    #[error(transparent)]
    Subword(#[from] SubwordError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, InputError>;

/// The five input representations. Each ensemble member consumes one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelInputKind {
    #[serde(rename = "src")]
    Src,
    #[serde(rename = "mt")]
    Mt,
    #[serde(rename = "mt-aligned")]
    MtAligned,
    #[serde(rename = "src+mt")]
    SrcPlusMt,
    #[serde(rename = "src+mt-factor")]
    SrcPlusMtFactor,
}

impl ModelInputKind {
    pub const ALL: [ModelInputKind; 5] = [
        Self::Src,
        Self::Mt,
        Self::MtAligned,
        Self::SrcPlusMt,
        Self::SrcPlusMtFactor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Src => "src",
            Self::Mt => "mt",
            Self::MtAligned => "mt-aligned",
            Self::SrcPlusMt => "src+mt",
            Self::SrcPlusMtFactor => "src+mt-factor",
        }
    }

    /// Number of factors per token, surface included.
    pub fn arity(self) -> usize {
        match self {
            Self::Src | Self::Mt | Self::SrcPlusMt => 1,
            Self::MtAligned => 2,
            Self::SrcPlusMtFactor => 4,
        }
    }

    pub fn layer_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Self::Src | Self::Mt | Self::SrcPlusMt => &["surface"],
            Self::MtAligned => &["surface", "aligned-src"],
            Self::SrcPlusMtFactor => &["surface", "pos", "dep", "head-pos"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for ModelInputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelInputKind {
    type Err = InputError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| InputError::UnknownKind(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactoredToken {
    pub surface: String,
    pub factors: Vec<String>,
}

impl FactoredToken {
    pub fn bare(surface: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            factors: Vec::new(),
        }
    }

    pub fn arity(&self) -> usize {
        1 + self.factors.len()
    }

    /// Surface followed by factors.
    pub fn fields(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.surface.as_str()).chain(self.factors.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactoredSentence {
    pub tokens: Vec<FactoredToken>,
    pub kind: ModelInputKind,
}

impl FactoredSentence {
    pub fn from_surfaces<S: AsRef<str>>(surfaces: &[S], kind: ModelInputKind) -> Self {
        Self {
            tokens: surfaces.iter().map(|s| FactoredToken::bare(s.as_ref())).collect(),
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Arity of the first token; 1 for an empty sentence.
    pub fn arity(&self) -> usize {
        self.tokens.first().map_or(1, FactoredToken::arity)
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }

    /// Column `k` of the factor matrix (0 is the surface).
    pub fn layer(&self, k: usize) -> Vec<&str> {
        self.tokens
            .iter()
            .map(|t| t.fields().nth(k).unwrap_or_default())
            .collect()
    }
}

/// Optional data some input kinds need on top of the triple.
#[derive(Debug, Clone, Copy, Default)]
pub struct InputExtras<'a> {
    /// Word-level source annotation, arity 4 (surface|pos|dep|head-pos).
    pub src_annotation: Option<&'a FactoredSentence>,
    /// Word-level MT annotation, arity 4.
    pub mt_annotation: Option<&'a FactoredSentence>,
    /// One aligned source word per MT subword token.
    pub alignment: Option<&'a [String]>,
    pub src_bpe: Option<&'a BpeModel>,
    pub mt_bpe: Option<&'a BpeModel>,
}

fn segment_bare(words: &[String], bpe: Option<&BpeModel>) -> Vec<String> {
    match bpe {
        Some(model) => model.encode_sentence(words),
        None => words.to_vec(),
    }
}

fn segment_factored(
    side: &'static str,
    words: &[String],
    annotation: &FactoredSentence,
    bpe: Option<&BpeModel>,
) -> Result<Vec<FactoredToken>> {
    if annotation.len() != words.len() {
        return Err(InputError::Shape {
            what: "annotation length",
            expected: words.len(),
            actual: annotation.len(),
        });
    }
    for (index, (w, t)) in words.iter().zip(&annotation.tokens).enumerate() {
        if *w != t.surface {
            return Err(InputError::AnnotationMismatch {
                side,
                index,
                expected: w.clone(),
                found: t.surface.clone(),
            });
        }
    }
    let Some(model) = bpe else {
        return Ok(annotation.tokens.clone());
    };
    let seg = model.segment_sentence(words);
    Ok(project_factors_bilou(annotation, &seg, model.marker())?.tokens)
}

fn break_token(arity: usize) -> FactoredToken {
    FactoredToken {
        surface: BREAK.to_owned(),
        factors: vec![BREAK.to_owned(); arity - 1],
    }
}

/// Builds the input representation of `kind` for one triple.
pub fn build_input(
    triple: &TrainingTriple,
    kind: ModelInputKind,
    extras: &InputExtras<'_>,
) -> Result<FactoredSentence> {
    let bare = |tokens: Vec<String>| tokens.into_iter().map(FactoredToken::bare).collect();
    let tokens: Vec<FactoredToken> = match kind {
        ModelInputKind::Src => bare(segment_bare(&triple.src, extras.src_bpe)),
        ModelInputKind::Mt => bare(segment_bare(&triple.mt, extras.mt_bpe)),
        ModelInputKind::MtAligned => {
            let alignment = extras.alignment.ok_or(InputError::MissingExtra {
                kind,
                layer: "an alignment factor",
            })?;
            let mt = segment_bare(&triple.mt, extras.mt_bpe);
            if alignment.len() != mt.len() {
                return Err(InputError::Shape {
                    what: "alignment length",
                    expected: mt.len(),
                    actual: alignment.len(),
                });
            }
            mt.into_iter()
                .zip(alignment)
                .map(|(surface, a)| FactoredToken {
                    surface,
                    factors: vec![a.clone()],
                })
                .collect()
        }
        ModelInputKind::SrcPlusMt => {
            let mut tokens: Vec<FactoredToken> = bare(segment_bare(&triple.src, extras.src_bpe));
            tokens.push(break_token(1));
            tokens.extend(bare(segment_bare(&triple.mt, extras.mt_bpe)));
            tokens
        }
        ModelInputKind::SrcPlusMtFactor => {
            let src_ann = extras.src_annotation.ok_or(InputError::MissingExtra {
                kind,
                layer: "source POS/dependency/head-POS layers",
            })?;
            let mt_ann = extras.mt_annotation.ok_or(InputError::MissingExtra {
                kind,
                layer: "MT POS/dependency/head-POS layers",
            })?;
            for ann in [src_ann, mt_ann] {
                if !ann.is_empty() && ann.arity() != kind.arity() {
                    return Err(InputError::Shape {
                        what: "annotation arity",
                        expected: kind.arity(),
                        actual: ann.arity(),
                    });
                }
            }
            let mut tokens = segment_factored("src", &triple.src, src_ann, extras.src_bpe)?;
            tokens.push(break_token(kind.arity()));
            tokens.extend(segment_factored("mt", &triple.mt, mt_ann, extras.mt_bpe)?);
            tokens
        }
    };
    Ok(FactoredSentence { tokens, kind })
}

/// Source word index of every source piece, from a per-word segmentation.
pub fn piece_origins(segmentation: &[crate::subword::SegmentedToken]) -> Vec<usize> {
    segmentation
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.origin_index, s.pieces.len()))
        .collect()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Adds one factor to every MT token: the source word containing the
/// source piece with the highest attention weight.
pub fn attach_alignment_factor(
    mt: &FactoredSentence,
    attention: &AttentionRecord,
    src_words: &[String],
    subword_to_word: &[usize],
) -> Result<FactoredSentence> {
    if attention.rows() != mt.len() {
        return Err(InputError::Shape {
            what: "attention rows",
            expected: mt.len(),
            actual: attention.rows(),
        });
    }
    let mut tokens = Vec::with_capacity(mt.len());
    for (i, token) in mt.tokens.iter().enumerate() {
        let row = attention.row(i);
        if row.len() != subword_to_word.len() {
            return Err(InputError::Shape {
                what: "attention columns",
                expected: subword_to_word.len(),
                actual: row.len(),
            });
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(InputError::Unnormalized { row: i, sum });
        }
        let word = subword_to_word[argmax_lowest(row)];
        let aligned = src_words.get(word).ok_or(InputError::Shape {
            what: "source word index",
            expected: src_words.len(),
            actual: word + 1,
        })?;
        let mut factors = token.factors.clone();
        factors.push(aligned.clone());
        tokens.push(FactoredToken {
            surface: token.surface.clone(),
            factors,
        });
    }
    Ok(FactoredSentence {
        tokens,
        kind: ModelInputKind::MtAligned,
    })
}

/// Tokens joined by single spaces, fields by `|`.
pub fn serialize_factored(sentence: &FactoredSentence) -> String {
    let mut line = String::new();
    for (i, token) in sentence.tokens.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        for (k, field) in token.fields().enumerate() {
            if k > 0 {
                line.push(FACTOR_SEPARATOR);
            }
            line.push_str(field);
        }
    }
    line
}

/// Parses one factored line. Token numbers in errors are 1-based. The
/// returned kind is a placeholder inferred from the arity; callers that know
/// the kind should overwrite it.
pub fn parse_factored(line: &str, expected_arity: Option<usize>) -> Result<FactoredSentence> {
    let mut tokens = Vec::new();
    let mut arity = expected_arity;
    for (i, raw) in line.split_whitespace().enumerate() {
        let fields: Vec<&str> = raw.split(FACTOR_SEPARATOR).collect();
        if fields.iter().any(|f| f.is_empty()) {
            return Err(InputError::Parse {
                token: i + 1,
                reason: format!("empty factor field in {raw:?}"),
            });
        }
        match arity {
            Some(a) if a != fields.len() => {
                return Err(InputError::Parse {
                    token: i + 1,
                    reason: format!("ragged arity: expected {a}, found {}", fields.len()),
                })
            }
            None => arity = Some(fields.len()),
            _ => {}
        }
        tokens.push(FactoredToken {
            surface: fields[0].to_owned(),
            factors: fields[1..].iter().map(|s| s.to_string()).collect(),
        });
    }
    let kind = match arity.unwrap_or(1) {
        2 => ModelInputKind::MtAligned,
        4 => ModelInputKind::SrcPlusMtFactor,
        _ => ModelInputKind::Src,
    };
    Ok(FactoredSentence { tokens, kind })
}

/// Sidecar describing a factored corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorManifest {
    pub kind: ModelInputKind,
    pub arity: usize,
    pub layers: Vec<String>,
}

impl FactorManifest {
    pub fn for_kind(kind: ModelInputKind) -> Self {
        Self {
            kind,
            arity: kind.arity(),
            layers: kind.layer_names(),
        }
    }

    pub fn sidecar_path(corpus: &Path) -> PathBuf {
        let mut name = corpus.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    pub fn save(&self, corpus: &Path) -> Result<()> {
        let path = Self::sidecar_path(corpus);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|source| InputError::Io { path, source })
    }

    pub fn load(corpus: &Path) -> Result<Self> {
        let path = Self::sidecar_path(corpus);
        let text = std::fs::read_to_string(&path).map_err(|source| InputError::Io {
            path: path.clone(),
            source,
        })?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| InputError::Manifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if manifest.arity != manifest.layers.len() {
            return Err(InputError::Manifest {
                path,
                reason: "arity does not match layer count".into(),
            });
        }
        Ok(manifest)
    }
}

/// Writes one serialized sentence per line plus the manifest sidecar.
pub fn write_factored_corpus(
    path: &Path,
    sentences: &[FactoredSentence],
    manifest: &FactorManifest,
) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        text.push_str(&serialize_factored(s));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| InputError::Io {
        path: path.to_owned(),
        source,
    })?;
    manifest.save(path)
}

/// Reads a factored corpus, using the manifest sidecar when present.
pub fn read_factored_corpus(
    path: &Path,
    kind: Option<ModelInputKind>,
) -> Result<(Vec<FactoredSentence>, FactorManifest)> {
    let manifest = match FactorManifest::load(path) {
        Ok(m) => m,
        Err(InputError::Io { .. }) => FactorManifest::for_kind(kind.unwrap_or(ModelInputKind::Src)),
        Err(e) => return Err(e),
    };
    let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut sentences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut s = parse_factored(line, Some(manifest.arity)).map_err(|e| match e {
            InputError::Parse { token, reason } => InputError::Parse {
                token,
                reason: format!("line {}: {reason}", i + 1),
            },
            other => other,
        })?;
        s.kind = manifest.kind;
        sentences.push(s);
    }
    Ok((sentences, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::subword::SegmentedToken;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triple() -> TrainingTriple {
        TrainingTriple::from_lines("a b c", "x y", "x z").unwrap()
    }

    #[test]
    fn src_kind_is_source_unchanged() {
        let s = build_input(&triple(), ModelInputKind::Src, &InputExtras::default()).unwrap();
        assert_eq!(serialize_factored(&s), "a b c");
        assert_eq!(s.kind, ModelInputKind::Src);
    }

    #[test]
    fn src_plus_mt_length_and_break() {
        let s = build_input(&triple(), ModelInputKind::SrcPlusMt, &InputExtras::default()).unwrap();
        assert_eq!(s.len(), 3 + 1 + 2);
        assert_eq!(serialize_factored(&s), "a b c BREAK x y");
    }

    #[test]
    fn missing_extras_name_kind_and_layer() {
        let err = build_input(&triple(), ModelInputKind::MtAligned, &InputExtras::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("mt-aligned") && err.contains("alignment"), "{err}");
        let err = build_input(&triple(), ModelInputKind::SrcPlusMtFactor, &InputExtras::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("src+mt-factor") && err.contains("POS"), "{err}");
    }

    #[test]
    fn mt_aligned_has_arity_two() {
        let alignment = tokenize("a c");
        let extras = InputExtras {
            alignment: Some(&alignment),
            ..Default::default()
        };
        let s = build_input(&triple(), ModelInputKind::MtAligned, &extras).unwrap();
        assert_eq!(serialize_factored(&s), "x|a y|c");
        assert!(s.tokens.iter().all(|t| t.arity() == 2));
    }

    #[test]
    fn factored_break_fills_every_slot() {
        let src = parse_factored("a|P|d|H b|P|d|H c|P|d|H", Some(4)).unwrap();
        let mt = parse_factored("x|Q|e|H y|Q|e|H", Some(4)).unwrap();
        let extras = InputExtras {
            src_annotation: Some(&src),
            mt_annotation: Some(&mt),
            ..Default::default()
        };
        let s = build_input(&triple(), ModelInputKind::SrcPlusMtFactor, &extras).unwrap();
        assert!(serialize_factored(&s).contains(" BREAK|BREAK|BREAK|BREAK "));
    }

    #[test]
    fn annotation_surface_must_match() {
        let src = parse_factored("a|P|d|H q|P|d|H c|P|d|H", Some(4)).unwrap();
        let mt = parse_factored("x|Q|e|H y|Q|e|H", Some(4)).unwrap();
        let extras = InputExtras {
            src_annotation: Some(&src),
            mt_annotation: Some(&mt),
            ..Default::default()
        };
        assert!(matches!(
            build_input(&triple(), ModelInputKind::SrcPlusMtFactor, &extras),
            Err(InputError::AnnotationMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn identity_attention_aligns_in_order() {
        let words = tokenize("a b c d");
        let mt = FactoredSentence::from_surfaces(&tokenize("w x y z"), ModelInputKind::Mt);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let att = AttentionRecord::from_rows(rows);
        let out = attach_alignment_factor(&mt, &att, &words, &[0, 1, 2, 3]).unwrap();
        assert_eq!(serialize_factored(&out), "w|a x|b y|c z|d");
    }

    #[test]
    fn alignment_uses_desegmented_source_word() {
        let src_words = tokenize("vector masks");
        let seg = vec![
            SegmentedToken { pieces: vec!["vec".into(), "tor".into()], origin_index: 0 },
            SegmentedToken::whole("masks", 1),
        ];
        let origins = piece_origins(&seg);
        assert_eq!(origins, [0, 0, 1]);
        let mt = FactoredSentence::from_surfaces(&tokenize("Vektor- masken"), ModelInputKind::Mt);
        let att = AttentionRecord::from_rows(vec![vec![0.1, 0.6, 0.3], vec![0.2, 0.2, 0.6]]);
        let out = attach_alignment_factor(&mt, &att, &src_words, &origins).unwrap();
        assert_eq!(serialize_factored(&out), "Vektor-|vector masken|masks");
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax_lowest(&[0.25, 0.5, 0.25, 0.5]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
    }

    #[test]
    fn attention_shape_errors() {
        let mt = FactoredSentence::from_surfaces(&tokenize("a b"), ModelInputKind::Mt);
        let att = AttentionRecord::from_rows(vec![vec![1.0]]);
        assert!(matches!(
            attach_alignment_factor(&mt, &att, &tokenize("s"), &[0]),
            Err(InputError::Shape { expected: 2, actual: 1, .. })
        ));
        let att = AttentionRecord::from_rows(vec![vec![0.7, 0.7], vec![0.5, 0.5]]);
        assert!(matches!(
            attach_alignment_factor(&mt, &att, &tokenize("s t"), &[0, 1]),
            Err(InputError::Unnormalized { row: 0, .. })
        ));
    }

    #[test]
    fn random_stochastic_rows_match_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (m, n) = (rng.gen_range(1..8), rng.gen_range(1..8));
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let src: Vec<String> = (0..n).map(|j| format!("s{j}")).collect();
            let mt = FactoredSentence::from_surfaces(
                &(0..m).map(|i| format!("m{i}")).collect::<Vec<_>>(),
                ModelInputKind::Mt,
            );
            let out = attach_alignment_factor(
                &mt,
                &AttentionRecord::from_rows(rows.clone()),
                &src,
                &(0..n).collect::<Vec<_>>(),
            )
            .unwrap();
            for (row, token) in rows.iter().zip(&out.tokens) {
                // Independent scan: strict comparison keeps the first maximum.
                let mut best = (0, f64::NEG_INFINITY);
                for (j, &v) in row.iter().enumerate() {
                    if v > best.1 {
                        best = (j, v);
                    }
                }
                assert_eq!(token.factors[0], format!("s{}", best.0));
            }
        }
    }

    #[test]
    fn serialize_examples() {
        let bare = FactoredSentence::from_surfaces(&["auto"], ModelInputKind::Src);
        assert_eq!(serialize_factored(&bare), "auto");
        let token = FactoredToken {
            surface: "apply".into(),
            factors: vec!["VBP".into(), "ROOT".into(), "VBP".into()],
        };
        let s = FactoredSentence {
            tokens: vec![token.clone()],
            kind: ModelInputKind::SrcPlusMtFactor,
        };
        assert_eq!(serialize_factored(&s), "apply|VBP|ROOT|VBP");
        assert_eq!(parse_factored("apply|VBP|ROOT|VBP", None).unwrap().tokens, vec![token]);
    }

    #[test]
    fn parse_edge_cases() {
        assert!(parse_factored("", None).unwrap().is_empty());
        match parse_factored("a|x b", Some(2)).unwrap_err() {
            InputError::Parse { token, .. } => assert_eq!(token, 2),
            e => panic!("{e}"),
        }
        match parse_factored("a|x b|y c", None).unwrap_err() {
            InputError::Parse { token, .. } => assert_eq!(token, 3),
            e => panic!("{e}"),
        }
        assert!(matches!(
            parse_factored("a||b", None),
            Err(InputError::Parse { token: 1, .. })
        ));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ModelInputKind::ALL {
            assert_eq!(kind.name().parse::<ModelInputKind>().unwrap(), kind);
            assert_eq!(kind.layer_names().len(), kind.arity());
        }
        assert!("bogus".parse::<ModelInputKind>().is_err());
    }

    #[test]
    fn factored_corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("in.txt");
        let s = parse_factored("a|x b|y", Some(2)).unwrap();
        let manifest = FactorManifest::for_kind(ModelInputKind::MtAligned);
        write_factored_corpus(&path, &[s.clone(), s.clone()], &manifest).unwrap();
        let (back, m) = read_factored_corpus(&path, None).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(back, vec![s.clone(), s]);
    }
}

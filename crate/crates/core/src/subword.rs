//! Byte-pair subword segmentation and projection of word-level factors onto
//! subword pieces with B-/I- prefixes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::input::{FactoredSentence, FactoredToken};

/// Marker appended to every non-final piece of a segmented word.
pub const DEFAULT_MARKER: &str = "@@";
/// Marker used when rendering segmentations for display (`Vektor- masken`).
pub const DISPLAY_MARKER: &str = "-";

const MERGE_FILE_MAGIC: &str = "#apeqe-bpe";
const MERGE_FILE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SubwordError {
    #[error("factor/segmentation length mismatch at word {index}: {words} words, {segments} segmentations")]
    Alignment {
        index: usize,
        words: usize,
        segments: usize,
    },
    #[error("segmentation of word {index} does not reproduce {surface:?}")]
    SegmentationMismatch { index: usize, surface: String },
    #[error("malformed prefix at position {position}: {reason}")]
    MalformedPrefix { position: usize, reason: String },
    #[error("merge file line {line}: {reason}")]
    MergeFile { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SubwordError>;

/// Ordered merge rules plus the continuation-marker convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    marker: String,
}

/// Pieces of one word. `pieces` never carry the continuation marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedToken {
    pub pieces: Vec<String>,
    pub origin_index: usize,
}

impl SegmentedToken {
    /// A word kept whole.
    pub fn whole(word: &str, origin_index: usize) -> Self {
        Self {
            pieces: vec![word.to_owned()],
            origin_index,
        }
    }

    pub fn word(&self) -> String {
        self.pieces.concat()
    }

    /// Pieces with `marker` appended to all but the last.
    pub fn render(&self, marker: &str) -> Vec<String> {
        let last = self.pieces.len().saturating_sub(1);
        self.pieces
            .iter()
            .enumerate()
            .map(|(i, p)| if i < last { format!("{p}{marker}") } else { p.clone() })
            .collect()
    }
}

fn chars_of(word: &str) -> Vec<String> {
    word.chars().map(String::from).collect()
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let merged = format!("{left}{right}");
            symbols[i] = merged;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

impl BpeModel {
    pub fn new(merges: Vec<(String, String)>, marker: impl Into<String>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(SubwordError::MergeFile {
                    line: rank + 2,
                    reason: format!("duplicate merge {} {}", pair.0, pair.1),
                });
            }
        }
        Ok(Self {
            merges,
            ranks,
            marker: marker.into(),
        })
    }

    /// Greedy BPE: repeatedly merges the most frequent adjacent symbol pair,
    /// ties broken by the lexicographically smallest pair. Stops early once
    /// every word is a single symbol.
    pub fn learn<'a, S, I>(sentences: I, num_merges: usize, marker: &str) -> Self
    where
        S: AsRef<str> + 'a,
        I: IntoIterator<Item = &'a [S]>,
    {
        let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
        for sentence in sentences {
            for word in sentence {
                *word_freq.entry(word.as_ref().to_owned()).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<String>, usize)> = word_freq
            .into_iter()
            .map(|(w, f)| (chars_of(&w), f))
            .collect();

        let mut merges = Vec::with_capacity(num_merges);
        for _ in 0..num_merges {
            let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (symbols, freq) in &words {
                for w in symbols.windows(2) {
                    *pair_counts.entry((&w[0], &w[1])).or_default() += freq;
                }
            }
            // BTreeMap iterates pairs in lexicographic order; keep the first maximum.
            let Some(((left, right), _)) = pair_counts
                .into_iter()
                .fold(None::<((&str, &str), usize)>, |best, (pair, count)| match best {
                    Some((_, c)) if c >= count => best,
                    _ => Some((pair, count)),
                })
            else {
                break;
            };
            let (left, right) = (left.to_owned(), right.to_owned());
            for (symbols, _) in &mut words {
                merge_pair(symbols, &left, &right);
            }
            merges.push((left, right));
        }
        Self::new(merges, marker).expect("learned merges are unique")
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    /// Same merges, different continuation marker.
    pub fn with_marker(&self, marker: &str) -> Self {
        Self {
            marker: marker.to_owned(),
            ..self.clone()
        }
    }

    /// Segments one word by applying merges in rank order.
    pub fn apply(&self, word: &str, origin_index: usize) -> SegmentedToken {
        let mut symbols = chars_of(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            merge_pair(&mut symbols, left, right);
        }
        SegmentedToken {
            pieces: symbols,
            origin_index,
        }
    }

    pub fn segment_sentence<S: AsRef<str>>(&self, words: &[S]) -> Vec<SegmentedToken> {
        words
            .iter()
            .enumerate()
            .map(|(i, w)| self.apply(w.as_ref(), i))
            .collect()
    }

    /// Segments and renders a sentence with this model's marker.
    pub fn encode_sentence<S: AsRef<str>>(&self, words: &[S]) -> Vec<String> {
        self.segment_sentence(words)
            .iter()
            .flat_map(|s| s.render(&self.marker))
            .collect()
    }

    /// Every symbol the model can emit for the given training words.
    pub fn symbols(&self) -> impl Iterator<Item = String> + '_ {
        self.merges.iter().map(|(l, r)| format!("{l}{r}"))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MERGE_FILE_MAGIC} version {MERGE_FILE_VERSION} marker {}\n",
            self.marker
        );
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| SubwordError::MergeFile {
            line: 1,
            reason: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split(' ').collect();
        let marker = match fields.as_slice() {
            [MERGE_FILE_MAGIC, "version", v, "marker", m] if v.parse() == Ok(MERGE_FILE_VERSION) => {
                *m
            }
            _ => {
                return Err(SubwordError::MergeFile {
                    line: 1,
                    reason: format!("unrecognized header {header:?}"),
                })
            }
        };
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_owned(), r.to_owned()))
                }
                _ => {
                    return Err(SubwordError::MergeFile {
                        line: i + 2,
                        reason: format!("expected two symbols, got {line:?}"),
                    })
                }
            }
        }
        Self::new(merges, marker)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| SubwordError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SubwordError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// Prefixes used to spread a word-level factor across its pieces. Only
/// begin/inside are used; single-piece words keep bare factors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixScheme {
    pub begin: String,
    pub inside: String,
}

impl Default for PrefixScheme {
    fn default() -> Self {
        Self {
            begin: "B-".into(),
            inside: "I-".into(),
        }
    }
}

/// Projects word-level factors onto subword pieces with the default scheme.
pub fn project_factors_bilou(
    words: &FactoredSentence,
    segmentation: &[SegmentedToken],
    marker: &str,
) -> Result<FactoredSentence> {
    project_factors_with(&PrefixScheme::default(), words, segmentation, marker)
}

pub fn project_factors_with(
    scheme: &PrefixScheme,
    words: &FactoredSentence,
    segmentation: &[SegmentedToken],
    marker: &str,
) -> Result<FactoredSentence> {
    if words.tokens.len() != segmentation.len() {
        return Err(SubwordError::Alignment {
            index: words.tokens.len().min(segmentation.len()),
            words: words.tokens.len(),
            segments: segmentation.len(),
        });
    }
    let mut tokens = Vec::with_capacity(segmentation.iter().map(|s| s.pieces.len()).sum());
    for (index, (word, seg)) in words.tokens.iter().zip(segmentation).enumerate() {
        if seg.pieces.is_empty() || seg.word() != word.surface {
            return Err(SubwordError::SegmentationMismatch {
                index,
                surface: word.surface.clone(),
            });
        }
        if seg.pieces.len() == 1 {
            tokens.push(word.clone());
            continue;
        }
        for (i, surface) in seg.render(marker).into_iter().enumerate() {
            let prefix = if i == 0 { &scheme.begin } else { &scheme.inside };
            tokens.push(FactoredToken {
                surface,
                factors: word.factors.iter().map(|f| format!("{prefix}{f}")).collect(),
            });
        }
    }
    Ok(FactoredSentence {
        tokens,
        kind: words.kind,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PieceRole {
    Bare,
    Begin,
    Inside,
}

fn piece_role(scheme: &PrefixScheme, token: &FactoredToken, position: usize) -> Result<PieceRole> {
    let role_of = |f: &str| {
        if f.starts_with(&scheme.begin) {
            PieceRole::Begin
        } else if f.starts_with(&scheme.inside) {
            PieceRole::Inside
        } else {
            PieceRole::Bare
        }
    };
    let mut roles = token.factors.iter().map(|f| role_of(f));
    let first = roles.next().unwrap_or(PieceRole::Bare);
    if roles.any(|r| r != first) {
        return Err(SubwordError::MalformedPrefix {
            position,
            reason: format!("inconsistent prefixes on token {:?}", token.surface),
        });
    }
    Ok(first)
}

fn strip_marker<'a>(surface: &'a str, marker: &str) -> &'a str {
    surface.strip_suffix(marker).unwrap_or(surface)
}

/// Inverse of [`project_factors_bilou`]: merges pieces into words and strips
/// prefixes. Factors of a merged word come from its B- piece. Sentences
/// without factors are grouped by the continuation marker alone.
pub fn desegment(sentence: &FactoredSentence, marker: &str) -> Result<FactoredSentence> {
    desegment_with(&PrefixScheme::default(), sentence, marker)
}

pub fn desegment_with(
    scheme: &PrefixScheme,
    sentence: &FactoredSentence,
    marker: &str,
) -> Result<FactoredSentence> {
    let arity = sentence.arity();
    if arity <= 1 {
        let surfaces: Vec<&str> = sentence.tokens.iter().map(|t| t.surface.as_str()).collect();
        let words = desegment_surfaces(&surfaces, marker);
        return Ok(FactoredSentence {
            tokens: words.into_iter().map(FactoredToken::bare).collect(),
            kind: sentence.kind,
        });
    }

    let roles = sentence
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| piece_role(scheme, t, i))
        .collect::<Result<Vec<_>>>()?;

    let mut tokens: Vec<FactoredToken> = Vec::new();
    let mut i = 0;
    while i < sentence.tokens.len() {
        let token = &sentence.tokens[i];
        match roles[i] {
            PieceRole::Bare => {
                tokens.push(token.clone());
                i += 1;
            }
            PieceRole::Inside => {
                return Err(SubwordError::MalformedPrefix {
                    position: i,
                    reason: format!("orphan inside piece {:?}", token.surface),
                })
            }
            PieceRole::Begin => {
                let mut end = i + 1;
                while end < roles.len() && roles[end] == PieceRole::Inside {
                    end += 1;
                }
                let mut surface = String::new();
                for (k, piece) in sentence.tokens[i..end].iter().enumerate() {
                    if i + k + 1 < end {
                        surface.push_str(strip_marker(&piece.surface, marker));
                    } else {
                        surface.push_str(&piece.surface);
                    }
                }
                let factors = token
                    .factors
                    .iter()
                    .map(|f| f[scheme.begin.len()..].to_owned())
                    .collect();
                tokens.push(FactoredToken { surface, factors });
                i = end;
            }
        }
    }
    Ok(FactoredSentence {
        tokens,
        kind: sentence.kind,
    })
}

/// Joins marker-terminated pieces with their successors.
pub fn desegment_surfaces<S: AsRef<str>>(pieces: &[S], marker: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut open = false;
    for piece in pieces {
        let piece = piece.as_ref();
        match piece.strip_suffix(marker) {
            Some(stem) if !marker.is_empty() && !stem.is_empty() => {
                current.push_str(stem);
                open = true;
            }
            _ => {
                current.push_str(piece);
                words.push(std::mem::take(&mut current));
                open = false;
            }
        }
    }
    if open {
        words.push(current);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::input::{parse_factored, serialize_factored, ModelInputKind};
    use std::collections::BTreeSet;

    fn words(line: &str) -> Vec<String> {
        tokenize(line)
    }

    #[test]
    fn zero_merges_segments_to_characters() {
        let corpus = [words("low lower")];
        let model = BpeModel::learn(corpus.iter().map(Vec::as_slice), 0, DEFAULT_MARKER);
        assert!(model.merges().is_empty());
        assert_eq!(model.apply("low", 0).pieces, ["l", "o", "w"]);
    }

    /// Exhaustive pair counting over the symbolized word list.
    fn oracle_merges(word_list: &[&str], n: usize) -> Vec<(String, String)> {
        let mut words: Vec<Vec<String>> = word_list.iter().map(|w| chars_of(w)).collect();
        let mut out = Vec::new();
        for _ in 0..n {
            let mut candidates: Vec<((String, String), usize)> = Vec::new();
            for w in &words {
                for i in 0..w.len().saturating_sub(1) {
                    let pair = (w[i].clone(), w[i + 1].clone());
                    match candidates.iter_mut().find(|(p, _)| *p == pair) {
                        Some((_, c)) => *c += 1,
                        None => candidates.push((pair, 1)),
                    }
                }
            }
            candidates.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let Some((pair, _)) = candidates.into_iter().next() else { break };
            for w in &mut words {
                merge_pair(w, &pair.0, &pair.1);
            }
            out.push(pair);
        }
        out
    }

    #[test]
    fn learn_matches_pair_count_oracle() {
        let corpus = [words("low lower")];
        let model = BpeModel::learn(corpus.iter().map(Vec::as_slice), 2, DEFAULT_MARKER);
        let expected = oracle_merges(&["low", "lower"], 2);
        assert_eq!(
            expected,
            [("l".to_string(), "o".to_string()), ("lo".to_string(), "w".to_string())]
        );
        assert_eq!(model.merges(), expected.as_slice());
    }

    #[test]
    fn learned_model_never_emits_unknown_pieces() {
        let corpus = [words("the lower lowest newer wider low new the"), words("newest wide")];
        let model = BpeModel::learn(corpus.iter().map(Vec::as_slice), 10, DEFAULT_MARKER);
        let mut known: BTreeSet<String> = model.symbols().collect();
        for s in &corpus {
            for w in s {
                known.extend(chars_of(w));
            }
        }
        for s in &corpus {
            for w in s {
                for piece in model.apply(w, 0).pieces {
                    assert!(known.contains(&piece), "unknown piece {piece}");
                }
            }
        }
    }

    fn fixture_german_model() -> BpeModel {
        let corpus = [words("Vektor masken objekte Vektor")];
        BpeModel::learn(corpus.iter().map(Vec::as_slice), 100, DISPLAY_MARKER)
    }

    #[test]
    fn compound_renders_with_display_marker() {
        let seg = fixture_german_model().apply("Vektormasken", 0);
        assert_eq!(seg.render(DISPLAY_MARKER), ["Vektor-", "masken"]);
    }

    #[test]
    fn learned_symbol_is_single_piece() {
        let seg = fixture_german_model().apply("masken", 3);
        assert_eq!(seg.pieces, ["masken"]);
        assert_eq!(seg.render(DISPLAY_MARKER), ["masken"]);
        assert_eq!(seg.origin_index, 3);
    }

    #[test]
    fn merge_file_round_trip() {
        let model = fixture_german_model().with_marker(DEFAULT_MARKER);
        let text = model.to_text();
        assert!(text.starts_with("#apeqe-bpe version 1 marker @@\n"));
        assert_eq!(BpeModel::from_text(&text).unwrap(), model);
        assert!(BpeModel::from_text("nonsense\n").is_err());
        assert!(BpeModel::from_text("#apeqe-bpe version 1 marker @@\na b c\n").is_err());
    }

    #[test]
    fn projection_prefixes_every_factor() {
        let words = parse_factored("Vektormasken|NN|sb|VVINF", Some(4)).unwrap();
        let seg = vec![fixture_german_model().apply("Vektormasken", 0)];
        let projected = project_factors_bilou(&words, &seg, DISPLAY_MARKER).unwrap();
        assert_eq!(
            serialize_factored(&projected),
            "Vektor-|B-NN|B-sb|B-VVINF masken|I-NN|I-sb|I-VVINF"
        );
    }

    #[test]
    fn unsegmented_word_keeps_bare_factors() {
        let words = parse_factored("auto|JJ|amod|NNS", Some(4)).unwrap();
        let seg = vec![SegmentedToken::whole("auto", 0)];
        let projected = project_factors_bilou(&words, &seg, DISPLAY_MARKER).unwrap();
        assert_eq!(serialize_factored(&projected), "auto|JJ|amod|NNS");
    }

    #[test]
    fn projection_length_mismatch_names_index() {
        let words = parse_factored("a|X b|Y", Some(2)).unwrap();
        let seg = vec![SegmentedToken::whole("a", 0)];
        match project_factors_bilou(&words, &seg, DEFAULT_MARKER).unwrap_err() {
            SubwordError::Alignment { index, .. } => assert_eq!(index, 1),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn desegment_inverts_fixture_row() {
        let sub = parse_factored("Vektor-|B-NN masken|I-NN", Some(2)).unwrap();
        let words = desegment(&sub, DISPLAY_MARKER).unwrap();
        assert_eq!(serialize_factored(&words), "Vektormasken|NN");
    }

    #[test]
    fn desegment_all_bare_is_identity() {
        let s = parse_factored("a|X b|Y c|Z", Some(2)).unwrap();
        assert_eq!(desegment(&s, DEFAULT_MARKER).unwrap(), s);
    }

    #[test]
    fn orphan_inside_piece_is_rejected() {
        let s = parse_factored("a|X b|I-Y", Some(2)).unwrap();
        match desegment(&s, DEFAULT_MARKER).unwrap_err() {
            SubwordError::MalformedPrefix { position, .. } => assert_eq!(position, 1),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn surface_only_desegmentation_uses_marker() {
        let pieces = words("Vektor@@ masken , Bitmaps");
        assert_eq!(
            desegment_surfaces(&pieces, DEFAULT_MARKER),
            ["Vektormasken", ",", "Bitmaps"]
        );
        let s = FactoredSentence::from_surfaces(&pieces, ModelInputKind::Mt);
        let d = desegment(&s, DEFAULT_MARKER).unwrap();
        assert_eq!(d.surfaces(), ["Vektormasken", ",", "Bitmaps"]);
    }
}

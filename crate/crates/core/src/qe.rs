//! Word-level OK/BAD tags from an edit alignment between an MT hypothesis
//! and a (pseudo-)post-edit.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::metrics::{ter_shift_alignment, TerOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Ok,
    Bad,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Ok => "OK",
            Tag::Bad => "BAD",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Tag::Ok => Tag::Bad,
            Tag::Bad => Tag::Ok,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QeError {
    #[error("line {line}: unknown tag {tag:?}")]
    BadTag { line: usize, tag: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl FromStr for Tag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "OK" => Ok(Tag::Ok),
            "BAD" => Ok(Tag::Bad),
            other => Err(other.to_owned()),
        }
    }
}

/// One alignment operation. Indices point into the MT and PE sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match { mt: usize, pe: usize },
    Substitute { mt: usize, pe: usize },
    /// MT word with no counterpart in PE.
    Delete { mt: usize },
    /// PE word with no counterpart in MT.
    Insert { pe: usize },
}

impl EditOp {
    pub fn cost(self) -> usize {
        match self {
            EditOp::Match { .. } => 0,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

impl EditScript {
    pub fn cost(&self) -> usize {
        self.ops.iter().map(|op| op.cost()).sum()
    }

    pub fn count(&self, pred: impl Fn(&EditOp) -> bool) -> usize {
        self.ops.iter().filter(|op| pred(op)).count()
    }

    /// Rebuilds the PE side from MT and the PE words the script introduces.
    pub fn replay<S: AsRef<str>>(&self, mt: &[S], pe: &[S]) -> Vec<String> {
        let mut out = Vec::new();
        for op in &self.ops {
            match *op {
                EditOp::Match { mt: i, .. } => out.push(mt[i].as_ref().to_owned()),
                EditOp::Substitute { pe: j, .. } | EditOp::Insert { pe: j } => {
                    out.push(pe[j].as_ref().to_owned())
                }
                EditOp::Delete { .. } => {}
            }
        }
        out
    }
}

/// Minimal unit-cost alignment of `mt` to `pe`. On equal-cost paths the
/// backtrace prefers Match, then Substitute, then Delete, then Insert.
pub fn edit_align<S: AsRef<str>, T: AsRef<str>>(mt: &[S], pe: &[T], case_sensitive: bool) -> EditScript {
    let norm = |w: &str| if case_sensitive { w.to_owned() } else { w.to_lowercase() };
    let a: Vec<String> = mt.iter().map(|w| norm(w.as_ref())).collect();
    let b: Vec<String> = pe.iter().map(|w| norm(w.as_ref())).collect();
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i][j];
        if i > 0 && j > 0 && a[i - 1] == b[j - 1] && d[i - 1][j - 1] == here {
            ops.push(EditOp::Match { mt: i - 1, pe: j - 1 });
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && a[i - 1] != b[j - 1] && d[i - 1][j - 1] + 1 == here {
            ops.push(EditOp::Substitute { mt: i - 1, pe: j - 1 });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i - 1][j] + 1 == here {
            ops.push(EditOp::Delete { mt: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert { pe: j - 1 });
            j -= 1;
        }
    }
    ops.reverse();
    EditScript { ops }
}

/// One tag per MT word: OK for matched words, BAD for substituted or deleted
/// ones. Insertions produce no tag.
pub fn derive_tags(script: &EditScript) -> Vec<Tag> {
    script
        .ops
        .iter()
        .filter_map(|op| match op {
            EditOp::Match { .. } => Some(Tag::Ok),
            EditOp::Substitute { .. } | EditOp::Delete { .. } => Some(Tag::Bad),
            EditOp::Insert { .. } => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TagOptions {
    pub case_sensitive: bool,
    /// Align after TER block shifts; words that had to move are tagged BAD.
    pub shifts: bool,
}

/// Tags for one MT sentence against its (pseudo-)post-edit.
pub fn tag_sentence<S: AsRef<str>, T: AsRef<str>>(mt: &[S], pe: &[T], opts: TagOptions) -> Vec<Tag> {
    if !opts.shifts {
        return derive_tags(&edit_align(mt, pe, opts.case_sensitive));
    }
    let ter_opts = TerOptions {
        case_sensitive: opts.case_sensitive,
        ..TerOptions::default()
    };
    let (order, moved) = ter_shift_alignment(mt, pe, &ter_opts);
    let shifted: Vec<&str> = order.iter().map(|&i| mt[i].as_ref()).collect();
    let shifted_tags = derive_tags(&edit_align(&shifted, pe, opts.case_sensitive));
    let mut tags = vec![Tag::Ok; mt.len()];
    for (pos, &orig) in order.iter().enumerate() {
        tags[orig] = if moved[orig] { Tag::Bad } else { shifted_tags[pos] };
    }
    tags
}

pub fn format_tags(tags: &[Tag]) -> String {
    tags.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" ")
}

pub fn parse_tags(line: &str, line_no: usize) -> Result<Vec<Tag>, QeError> {
    line.split_whitespace()
        .map(|t| {
            t.parse().map_err(|tag| QeError::BadTag {
                line: line_no,
                tag,
            })
        })
        .collect()
}

pub fn write_tags(path: &Path, sentences: &[Vec<Tag>]) -> Result<(), QeError> {
    let mut text = String::new();
    for tags in sentences {
        text.push_str(&format_tags(tags));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_tags(path: &Path) -> Result<Vec<Vec<Tag>>, QeError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, l)| parse_tags(l, i + 1))
        .collect()
}

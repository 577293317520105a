//! Annotated corpus types, the four-column TSV format and validation
//! against reference lists.
//!
//! One token per line: `form<TAB>lemma<TAB>pos<TAB>morph`. Missing `pos` and
//! `morph` columns default to `_`. A blank line ends a sentence, lines
//! starting with `#` are comments and are written back where they were
//! found. An optional header row is recognised by its first cell being the
//! literal `form`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder for an absent column value.
pub const EMPTY: &str = "_";

/// Morph marker for a token (or contraction segment) without features.
pub const MORPH_EMPTY: &str = "MORPH=empty";

/// POS tags that terminate a sentence. Both spellings occur in the wild.
pub const STRONG_PUNCTUATION: [&str; 2] = ["PONfrt", "PUNfrt"];

pub fn is_strong_punctuation(pos: &str) -> bool {
    STRONG_PUNCTUATION.contains(&pos)
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("input is not valid UTF-8: {0}")]
    Encoding(#[from] std::str::Utf8Error),
    #[error("corpus contains no tokens")]
    Empty,
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: unknown morphology category `{category}`")]
    UnknownCategory {
        path: String,
        line: usize,
        category: String,
    },
    #[error("{path}:{line}: expected `CATEGORY<TAB>value`")]
    MalformedReference { path: String, line: usize },
    #[error("reference set has no {0}")]
    EmptyReference(String),
}

/// The seven simple morphology categories a composite morph is split into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MorphCategory {
    Cas,
    Degre,
    Genre,
    Mode,
    Nomb,
    Pers,
    Temps,
}

impl MorphCategory {
    /// Slot order of [`crate::preprocess::MorphVector`].
    pub const ALL: [MorphCategory; 7] = [
        MorphCategory::Cas,
        MorphCategory::Degre,
        MorphCategory::Genre,
        MorphCategory::Mode,
        MorphCategory::Nomb,
        MorphCategory::Pers,
        MorphCategory::Temps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MorphCategory::Cas => "CAS",
            MorphCategory::Degre => "DEGRE",
            MorphCategory::Genre => "GENRE",
            MorphCategory::Mode => "MODE",
            MorphCategory::Nomb => "NOMB",
            MorphCategory::Pers => "PERS",
            MorphCategory::Temps => "TEMPS",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Accepts both `NOMB` and the abbreviated `NOMB.` spelling.
    pub fn parse(name: &str) -> Option<Self> {
        let name = name.trim_end_matches('.');
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for MorphCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MorphCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s).ok_or_else(|| format!("unknown morphology category `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedToken {
    pub form: String,
    pub lemma: String,
    pub pos: String,
    pub morph: String,
}

impl AnnotatedToken {
    pub fn new(
        form: impl Into<String>,
        lemma: impl Into<String>,
        pos: impl Into<String>,
        morph: impl Into<String>,
    ) -> Self {
        AnnotatedToken {
            form: form.into(),
            lemma: lemma.into(),
            pos: pos.into(),
            morph: morph.into(),
        }
    }

    /// Atomic tags of a possibly composite POS (`PRE.DETdef` → `PRE`, `DETdef`).
    pub fn pos_segments(&self) -> Vec<&str> {
        self.pos.split('.').collect()
    }

    pub fn is_strong_punctuation(&self) -> bool {
        is_strong_punctuation(&self.pos)
    }

    /// Checks the token invariants, returning a description of the first
    /// violation.
    pub fn check(&self) -> Result<(), String> {
        if self.form.is_empty() {
            return Err("empty form".into());
        }
        if self.pos != EMPTY {
            if self.pos.is_empty()
                || !self.pos.chars().all(|c| c.is_ascii_alphabetic() || c == '.')
                || self.pos.split('.').any(str::is_empty)
            {
                return Err(format!("invalid POS `{}`", self.pos));
            }
        }
        let pos_segments = self.pos.split('.').count();
        let morph_segments = self.morph.split('+').count();
        if pos_segments > 1 && morph_segments > 1 && pos_segments != morph_segments {
            return Err(format!(
                "POS `{}` has {pos_segments} segments but morph `{}` has {morph_segments}",
                self.pos, self.morph
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryKind {
    StrongPunctuation,
    Line,
}

/// A comment line, placed before the token with the given index (or after
/// the last token when the index equals the sentence length).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub before_token: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<AnnotatedToken>,
    pub comments: Vec<Comment>,
}

impl Sentence {
    pub fn new(tokens: Vec<AnnotatedToken>) -> Self {
        Sentence {
            tokens,
            comments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn boundary_kind(&self) -> BoundaryKind {
        match self.tokens.last() {
            Some(t) if t.is_strong_punctuation() => BoundaryKind::StrongPunctuation,
            _ => BoundaryKind::Line,
        }
    }

    pub fn forms(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.form.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
    pub provenance: String,
    pub has_header: bool,
    /// Comments after the final sentence.
    pub trailing_comments: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Document {
            id: id.into(),
            sentences,
            provenance: String::new(),
            has_header: false,
            trailing_comments: Vec::new(),
        }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &AnnotatedToken> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn token(&self, sentence: usize, token: usize) -> Option<&AnnotatedToken> {
        self.sentences.get(sentence)?.tokens.get(token)
    }
}

/// Parses a TSV corpus. The document id is left empty; see [`read_tsv`].
pub fn parse_tsv(bytes: &[u8]) -> Result<Document, CorpusError> {
    let text = std::str::from_utf8(bytes)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    let mut doc = Document::new("", Vec::new());
    let mut current = Sentence::new(Vec::new());
    // Comments seen since the last blank line while no token is pending.
    let mut pending_comments: Vec<String> = Vec::new();
    let mut seen_content = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);

        if line.trim().is_empty() {
            if !current.is_empty() {
                doc.sentences.push(std::mem::replace(
                    &mut current,
                    Sentence::new(Vec::new()),
                ));
            }
            continue;
        }
        if line.starts_with('#') {
            if current.is_empty() {
                pending_comments.push(line.to_string());
            } else {
                current.comments.push(Comment {
                    before_token: current.len(),
                    text: line.to_string(),
                });
            }
            continue;
        }

        let cells: Vec<&str> = line.split('\t').collect();
        if !seen_content && cells[0] == "form" {
            doc.has_header = true;
            seen_content = true;
            continue;
        }
        seen_content = true;
        if cells.len() < 2 || cells.len() > 4 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected 2 to 4 tab-separated columns, found {}", cells.len()),
            });
        }
        let column = |i: usize| -> String {
            match cells.get(i) {
                Some(v) if !v.is_empty() => v.to_string(),
                _ => EMPTY.to_string(),
            }
        };
        let token = AnnotatedToken {
            form: cells[0].to_string(),
            lemma: column(1),
            pos: column(2),
            morph: column(3),
        };
        token.check().map_err(|message| CorpusError::Parse {
            line: line_no,
            message,
        })?;

        if current.is_empty() {
            for text in pending_comments.drain(..) {
                current.comments.push(Comment {
                    before_token: 0,
                    text,
                });
            }
        }
        current.tokens.push(token);
    }
    if !current.is_empty() {
        doc.sentences.push(current);
    }
    doc.trailing_comments = pending_comments;

    if doc.sentences.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(doc)
}

/// Reads a TSV file; the document id is the file stem.
pub fn read_tsv(path: impl AsRef<Path>) -> Result<Document, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut doc = parse_tsv(&bytes)?;
    doc.id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    doc.provenance = path.display().to_string();
    Ok(doc)
}

pub fn write_tsv(doc: &Document) -> Vec<u8> {
    let mut out = String::new();
    if doc.has_header {
        out.push_str("form\tlemma\tpos\tmorph\n");
    }
    for sentence in &doc.sentences {
        let mut comments = sentence.comments.iter().peekable();
        for (i, token) in sentence.tokens.iter().enumerate() {
            while let Some(c) = comments.next_if(|c| c.before_token <= i) {
                out.push_str(&c.text);
                out.push('\n');
            }
            write_token(&mut out, token);
        }
        for c in comments {
            out.push_str(&c.text);
            out.push('\n');
        }
        out.push('\n');
    }
    for c in &doc.trailing_comments {
        out.push_str(c);
        out.push('\n');
    }
    out.into_bytes()
}

fn write_token(out: &mut String, token: &AnnotatedToken) {
    let cell = |v: &str| if v.is_empty() { EMPTY.to_string() } else { v.to_string() };
    out.push_str(&token.form);
    out.push('\t');
    out.push_str(&cell(&token.lemma));
    out.push('\t');
    out.push_str(&cell(&token.pos));
    out.push('\t');
    out.push_str(&cell(&token.morph));
    out.push('\n');
}

/// Allowed lemmas, atomic POS tags and per-category morphology values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub lemmas: BTreeSet<String>,
    pub pos_tags: BTreeSet<String>,
    pub morph_values: BTreeMap<MorphCategory, BTreeSet<String>>,
}

impl ReferenceSet {
    pub fn new(
        lemmas: BTreeSet<String>,
        pos_tags: BTreeSet<String>,
        morph_values: BTreeMap<MorphCategory, BTreeSet<String>>,
    ) -> Result<Self, CorpusError> {
        if lemmas.is_empty() {
            return Err(CorpusError::EmptyReference("lemmas".into()));
        }
        if pos_tags.is_empty() {
            return Err(CorpusError::EmptyReference("POS tags".into()));
        }
        for cat in MorphCategory::ALL {
            if morph_values.get(&cat).is_none_or(BTreeSet::is_empty) {
                return Err(CorpusError::EmptyReference(format!("values for {cat}")));
            }
        }
        Ok(ReferenceSet {
            lemmas,
            pos_tags,
            morph_values,
        })
    }

    pub fn allows_morph(&self, category: MorphCategory, value: &str) -> bool {
        self.morph_values
            .get(&category)
            .is_some_and(|values| values.contains(value))
    }
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn value_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn load_reference_lists(
    lemma_path: impl AsRef<Path>,
    pos_path: impl AsRef<Path>,
    morph_path: impl AsRef<Path>,
) -> Result<ReferenceSet, CorpusError> {
    let lemmas = value_lines(&read_text(lemma_path.as_ref())?)
        .map(|(_, l)| l.to_string())
        .collect();
    let pos_tags = value_lines(&read_text(pos_path.as_ref())?)
        .map(|(_, l)| l.to_string())
        .collect();

    let morph_path = morph_path.as_ref();
    let morph_text = read_text(morph_path)?;
    let mut morph_values: BTreeMap<MorphCategory, BTreeSet<String>> = BTreeMap::new();
    for (line, row) in value_lines(&morph_text) {
        let (category, value) =
            row.split_once('\t')
                .ok_or_else(|| CorpusError::MalformedReference {
                    path: morph_path.display().to_string(),
                    line,
                })?;
        let cat = MorphCategory::parse(category.trim()).ok_or_else(|| {
            CorpusError::UnknownCategory {
                path: morph_path.display().to_string(),
                line,
                category: category.trim().to_string(),
            }
        })?;
        morph_values
            .entry(cat)
            .or_default()
            .insert(value.trim().to_string());
    }
    ReferenceSet::new(lemmas, pos_tags, morph_values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub document: String,
    pub sentence: usize,
    pub token: usize,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub unallowed_lemmas: Vec<Finding>,
    pub unallowed_pos: Vec<Finding>,
    pub unallowed_morph: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.len() == 0
    }

    pub fn len(&self) -> usize {
        self.unallowed_lemmas.len() + self.unallowed_pos.len() + self.unallowed_morph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("kind\tdocument\tsentence\ttoken\tvalue\n");
        for (kind, list) in [
            ("lemma", &self.unallowed_lemmas),
            ("pos", &self.unallowed_pos),
            ("morph", &self.unallowed_morph),
        ] {
            for f in list {
                out.push_str(&format!(
                    "{kind}\t{}\t{}\t{}\t{}\n",
                    f.document, f.sentence, f.token, f.value
                ));
            }
        }
        out
    }
}

/// Individual `CATEGORY=value` pairs of a composite morph string. Empty
/// markers yield nothing.
pub fn morph_features(morph: &str) -> Vec<(&str, &str)> {
    let mut features = Vec::new();
    if morph == EMPTY {
        return features;
    }
    for segment in morph.split('+') {
        if segment == MORPH_EMPTY || segment == EMPTY || segment.is_empty() {
            continue;
        }
        for pair in segment.split('|') {
            if let Some((cat, value)) = pair.split_once('=') {
                features.push((cat, value));
            } else {
                features.push((pair, ""));
            }
        }
    }
    features
}

/// Lists every token whose lemma, any atomic POS tag, or any morphology
/// value is missing from the reference set. A contracted lemma (`a3+le`) is
/// reported when any of its parts is unlisted. Combinations of individually
/// allowed morph values are not checked.
pub fn validate(doc: &Document, refs: &ReferenceSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (si, sentence) in doc.sentences.iter().enumerate() {
        for (ti, token) in sentence.tokens.iter().enumerate() {
            let finding = |value: &str| Finding {
                document: doc.id.clone(),
                sentence: si,
                token: ti,
                value: value.to_string(),
            };
            if token.lemma.split('+').any(|l| !refs.lemmas.contains(l)) {
                report.unallowed_lemmas.push(finding(&token.lemma));
            }
            if token.pos != EMPTY {
                for tag in token.pos_segments() {
                    if !refs.pos_tags.contains(tag) {
                        report.unallowed_pos.push(finding(tag));
                    }
                }
            }
            for (cat, value) in morph_features(&token.morph) {
                let allowed = MorphCategory::parse(cat)
                    .is_some_and(|c| refs.allows_morph(c, value));
                if !allowed {
                    report.unallowed_morph.push(finding(&format!("{cat}={value}")));
                }
            }
        }
    }
    report
}

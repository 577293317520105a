//! Correction sessions: a working copy of one corpus plus the journal of
//! edits that produced it from the original file.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use histag::corpus::{parse_tsv, AnnotatedToken, Document};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 1000;
pub const DEFAULT_CONTEXT: usize = 3;
pub const MAX_CONTEXT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditColumn {
    Lemma,
    Pos,
    Morph,
}

impl EditColumn {
    pub fn parse(s: &str) -> Result<Self, ServiceError> {
        match s {
            "lemma" => Ok(EditColumn::Lemma),
            "pos" => Ok(EditColumn::Pos),
            "morph" => Ok(EditColumn::Morph),
            other => Err(ServiceError::BadRequest(format!(
                "column must be lemma, pos or morph, got `{other}`"
            ))),
        }
    }

    fn cell(self, token: &mut AnnotatedToken) -> &mut String {
        match self {
            EditColumn::Lemma => &mut token.lemma,
            EditColumn::Pos => &mut token.pos,
            EditColumn::Morph => &mut token.morph,
        }
    }
}

/// Column filters; a value ending in `*` is a prefix match. Coordinates
/// pin the query to one sentence or token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub morph: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<usize>,
}

enum Pattern<'a> {
    Exact(&'a str),
    Prefix(&'a str),
}

fn pattern(value: &str) -> Result<Pattern<'_>, ServiceError> {
    let (body, prefix) = match value.strip_suffix('*') {
        Some(body) => (body, true),
        None => (value, false),
    };
    if body.contains('*') {
        return Err(ServiceError::BadRequest(format!(
            "only a trailing `*` wildcard is supported: `{value}`"
        )));
    }
    Ok(if prefix { Pattern::Prefix(body) } else { Pattern::Exact(body) })
}

impl Pattern<'_> {
    fn matches(&self, value: &str) -> bool {
        match self {
            Pattern::Exact(p) => value == *p,
            Pattern::Prefix(p) => value.starts_with(p),
        }
    }
}

/// A checked query, ready to run against a document.
pub struct Matcher<'a> {
    columns: Vec<(fn(&AnnotatedToken) -> &str, Pattern<'a>)>,
    sentence: Option<usize>,
    token: Option<usize>,
}

impl Filters {
    pub fn matcher(&self) -> Result<Matcher<'_>, ServiceError> {
        let mut columns: Vec<(fn(&AnnotatedToken) -> &str, Pattern<'_>)> = Vec::new();
        let getters: [(&Option<String>, fn(&AnnotatedToken) -> &str); 4] = [
            (&self.form, |t| &t.form),
            (&self.lemma, |t| &t.lemma),
            (&self.pos, |t| &t.pos),
            (&self.morph, |t| &t.morph),
        ];
        for (value, get) in getters {
            if let Some(v) = value {
                columns.push((get, pattern(v)?));
            }
        }
        if columns.is_empty() && self.sentence.is_none() && self.token.is_none() {
            return Err(ServiceError::BadRequest("at least one filter is required".into()));
        }
        Ok(Matcher {
            columns,
            sentence: self.sentence,
            token: self.token,
        })
    }
}

impl Matcher<'_> {
    fn matches(&self, sentence: usize, token: usize, t: &AnnotatedToken) -> bool {
        self.sentence.is_none_or(|s| s == sentence)
            && self.token.is_none_or(|i| i == token)
            && self.columns.iter().all(|(get, p)| p.matches(get(t)))
    }

    /// Coordinates of every match in document order.
    pub fn find(&self, doc: &Document) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (si, s) in doc.sentences.iter().enumerate() {
            for (ti, t) in s.tokens.iter().enumerate() {
                if self.matches(si, ti, t) {
                    out.push((si, ti));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub sentence: usize,
    pub token: usize,
    pub old: String,
}

/// One applied batch edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: usize,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub query: Filters,
    pub column: EditColumn,
    pub value: String,
    pub changes: Vec<Change>,
}

fn apply(doc: &mut Document, entry: &JournalEntry) -> Result<(), String> {
    for c in &entry.changes {
        let token = doc
            .sentences
            .get_mut(c.sentence)
            .and_then(|s| s.tokens.get_mut(c.token))
            .ok_or_else(|| format!("entry {}: no token at {}:{}", entry.seq, c.sentence, c.token))?;
        let cell = entry.column.cell(token);
        if *cell != c.old {
            return Err(format!(
                "entry {}: expected `{}` at {}:{}, found `{cell}`",
                entry.seq, c.old, c.sentence, c.token
            ));
        }
        *cell = entry.value.clone();
    }
    Ok(())
}

/// Replays `journal` over a copy of `original`.
pub fn replay(original: &Document, journal: &[JournalEntry]) -> Result<Document, String> {
    let mut doc = original.clone();
    for entry in journal {
        apply(&mut doc, entry)?;
    }
    Ok(doc)
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub original: Document,
    pub working: Document,
    pub journal: Vec<JournalEntry>,
    journal_path: Option<PathBuf>,
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn read_journal(path: &Path) -> Result<Vec<JournalEntry>, ServiceError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ServiceError::Storage(format!("{}: {e}", path.display()))),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            // an append cut short by a crash
            Err(_) if i + 1 == lines.len() && !complete => {
                let mut kept = String::new();
                for e in &out {
                    kept.push_str(&serde_json::to_string(e).expect("entry serialises"));
                    kept.push('\n');
                }
                fs::write(path, kept).map_err(|e| ServiceError::Storage(e.to_string()))?;
            }
            Err(e) => {
                return Err(ServiceError::Storage(format!(
                    "{} line {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

impl Session {
    /// An in-memory session with no journal file.
    pub fn in_memory(id: impl Into<String>, doc: Document) -> Self {
        let id = id.into();
        let mut doc = doc;
        doc.id = id.clone();
        Session {
            id,
            working: doc.clone(),
            original: doc,
            journal: Vec::new(),
            journal_path: None,
        }
    }

    /// Loads `<dir>/<id>.tsv` and replays `<dir>/<id>.journal.jsonl`.
    pub fn open(dir: &Path, id: &str) -> Result<Self, ServiceError> {
        let tsv = dir.join(format!("{id}.tsv"));
        let bytes = fs::read(&tsv).map_err(|e| ServiceError::Storage(format!("{}: {e}", tsv.display())))?;
        let mut original = parse_tsv(&bytes).map_err(|e| ServiceError::Storage(format!("{}: {e}", tsv.display())))?;
        original.id = id.to_string();
        let journal_path = dir.join(format!("{id}.journal.jsonl"));
        let journal = read_journal(&journal_path)?;
        let working = replay(&original, &journal).map_err(ServiceError::Storage)?;
        Ok(Session {
            id: id.to_string(),
            original,
            working,
            journal,
            journal_path: Some(journal_path),
        })
    }

    /// Applies `value` to every token matching `query` in the current
    /// working document, all or nothing. Returns the number of tokens edited;
    /// nothing is journaled when there is no match.
    pub fn batch_edit(
        &mut self,
        query: &Filters,
        column: EditColumn,
        value: &str,
        expected_matches: Option<usize>,
    ) -> Result<usize, ServiceError> {
        let matches = query.matcher()?.find(&self.working);
        if let Some(expected) = expected_matches {
            if expected != matches.len() {
                return Err(ServiceError::Conflict {
                    expected,
                    found: matches.len(),
                });
            }
        }
        if matches.is_empty() {
            return Ok(0);
        }
        if value.is_empty() {
            return Err(ServiceError::BadRequest("value must be non-empty".into()));
        }
        let mut changes = Vec::with_capacity(matches.len());
        for &(s, t) in &matches {
            let mut token = self.working.sentences[s].tokens[t].clone();
            let cell = column.cell(&mut token);
            changes.push(Change {
                sentence: s,
                token: t,
                old: std::mem::replace(cell, value.to_string()),
            });
            token
                .check()
                .map_err(|e| ServiceError::BadRequest(format!("token {s}:{t}: {e}")))?;
        }
        let entry = JournalEntry {
            seq: self.journal.len(),
            timestamp: now_millis(),
            query: query.clone(),
            column,
            value: value.to_string(),
            changes,
        };
        if let Some(path) = &self.journal_path {
            let mut line = serde_json::to_string(&entry).expect("entry serialises");
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| ServiceError::Storage(format!("{}: {e}", path.display())))?;
        }
        apply(&mut self.working, &entry).map_err(ServiceError::Storage)?;
        self.journal.push(entry);
        Ok(matches.len())
    }
}

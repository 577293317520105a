//! Dataset preparation: sentence segmentation, Roman numeral normalisation,
//! morphology decomposition, capitalisation noise and train/dev/test
//! splitting.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Comment, Document, MorphCategory, Sentence, EMPTY, MORPH_EMPTY};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("unknown morphology category `{0}`")]
    UnknownCategory(String),
    #[error("malformed morphology segment `{0}`")]
    MalformedMorph(String),
    #[error("need at least {needed} sentences to split, got {got}")]
    TooFewSentences { needed: usize, got: usize },
    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    InvalidRatios([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentationMode {
    /// Cut after every strong punctuation token.
    Punctuation,
    /// Keep the blank-line boundaries of the source file.
    Line,
}

/// Segments a document into sentences. Tokens are conserved in order and
/// comments travel with the token they preceded.
pub fn segment_sentences(doc: &Document, mode: SegmentationMode) -> Vec<Sentence> {
    match mode {
        SegmentationMode::Line => doc.sentences.clone(),
        SegmentationMode::Punctuation => {
            let mut out = Vec::new();
            let mut current = Sentence::new(Vec::new());
            for sentence in &doc.sentences {
                let mut comments = sentence.comments.iter().peekable();
                for (i, token) in sentence.tokens.iter().enumerate() {
                    while let Some(c) = comments.next_if(|c| c.before_token <= i) {
                        current.comments.push(Comment {
                            before_token: current.len(),
                            text: c.text.clone(),
                        });
                    }
                    current.tokens.push(token.clone());
                    if token.is_strong_punctuation() {
                        out.push(std::mem::replace(&mut current, Sentence::new(Vec::new())));
                    }
                }
                for c in comments {
                    match out.last_mut() {
                        Some(last) if current.is_empty() => last.comments.push(Comment {
                            before_token: last.len(),
                            text: c.text.clone(),
                        }),
                        _ => current.comments.push(Comment {
                            before_token: current.len(),
                            text: c.text.clone(),
                        }),
                    }
                }
            }
            if !current.is_empty() {
                out.push(current);
            }
            out
        }
    }
}

const ROMAN_PLACES: [(char, char, char, u32); 3] = [
    ('C', 'D', 'M', 100),
    ('X', 'L', 'C', 10),
    ('I', 'V', 'X', 1),
];

/// Value of one decimal place written with `one`, `five` and `ten`. Accepts
/// the subtractive forms and the additive medieval ones (`IIII`, `VIIII`).
fn parse_place(chars: &[char], pos: &mut usize, one: char, five: char, ten: char) -> u32 {
    let at = |i: usize| chars.get(i).copied();
    if at(*pos) == Some(one) {
        if at(*pos + 1) == Some(ten) {
            *pos += 2;
            return 9;
        }
        if at(*pos + 1) == Some(five) {
            *pos += 2;
            return 4;
        }
    }
    let mut value = 0;
    if at(*pos) == Some(five) {
        value = 5;
        *pos += 1;
    }
    let mut ones = 0;
    while ones < 4 && at(*pos) == Some(one) {
        ones += 1;
        *pos += 1;
    }
    value + ones
}

/// Parses a Roman numeral (either case, not mixed) in 1..=3999.
pub fn parse_roman(s: &str) -> Option<u32> {
    let upper = s.to_ascii_uppercase();
    if s.is_empty() || (s != upper && s != s.to_ascii_lowercase()) {
        return None;
    }
    let chars: Vec<char> = upper.chars().collect();
    let mut pos = 0;
    let mut total = 0;
    while total < 3000 && chars.get(pos) == Some(&'M') {
        total += 1000;
        pos += 1;
    }
    for (one, five, ten, unit) in ROMAN_PLACES {
        total += unit * parse_place(&chars, &mut pos, one, five, ten);
    }
    (pos == chars.len() && total > 0).then_some(total)
}

/// Replaces a Roman numeral form by its decimal value.
///
/// Only dot-delimited forms (`.xiv.`, `.l.m.`) and bare all-uppercase forms
/// (`XIV`) are candidates; lowercase bare words such as `vi` or `mil` are
/// left alone. A trailing `.m.` or `.c.` multiplies the preceding numeral by
/// 1000 or 100.
pub fn normalize_roman(form: &str) -> String {
    normalize_numeral(form).unwrap_or_else(|| form.to_string())
}

fn normalize_numeral(form: &str) -> Option<String> {
    if form.len() >= 3 && form.starts_with('.') && form.ends_with('.') {
        let segments: Vec<&str> = form[1..form.len() - 1].split('.').collect();
        let value = match segments.as_slice() {
            [single] => parse_roman(single)?,
            [base, multiplier] => {
                let factor = match *multiplier {
                    "m" | "M" => 1000,
                    "c" | "C" => 100,
                    _ => return None,
                };
                parse_roman(base)? * factor
            }
            _ => return None,
        };
        return Some(value.to_string());
    }
    if form.chars().all(|c| "IVXLCDM".contains(c)) {
        return parse_roman(form).map(|v| v.to_string());
    }
    None
}

/// One value per morphology category in [`MorphCategory::ALL`] order; `_`
/// when the category is absent. Contractions hold `+`-joined per-segment
/// labels such as `empty+s`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MorphVector(pub [String; 7]);

impl Default for MorphVector {
    fn default() -> Self {
        MorphVector(std::array::from_fn(|_| EMPTY.to_string()))
    }
}

impl MorphVector {
    pub fn get(&self, category: MorphCategory) -> &str {
        &self.0[category.index()]
    }

    pub fn set(&mut self, category: MorphCategory, value: impl Into<String>) {
        self.0[category.index()] = value.into();
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|v| v == EMPTY)
    }
}

impl fmt::Display for MorphVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&join_morph(self))
    }
}

const SEGMENT_EMPTY: &str = "empty";

/// Output order of [`join_morph`].
pub const CANONICAL_ORDER: [MorphCategory; 7] = [
    MorphCategory::Nomb,
    MorphCategory::Genre,
    MorphCategory::Cas,
    MorphCategory::Degre,
    MorphCategory::Mode,
    MorphCategory::Temps,
    MorphCategory::Pers,
];

fn canonical_name(category: MorphCategory) -> &'static str {
    match category {
        MorphCategory::Nomb => "NOMB.",
        other => other.name(),
    }
}

type SegmentValues = [Option<String>; 7];

fn parse_segment(segment: &str) -> Result<SegmentValues, PreprocessError> {
    let mut values: SegmentValues = Default::default();
    if segment == MORPH_EMPTY || segment == EMPTY || segment.is_empty() {
        return Ok(values);
    }
    for pair in segment.split('|') {
        let (cat, value) = pair
            .split_once('=')
            .ok_or_else(|| PreprocessError::MalformedMorph(pair.to_string()))?;
        let cat = MorphCategory::parse(cat)
            .ok_or_else(|| PreprocessError::UnknownCategory(cat.to_string()))?;
        if value.is_empty() || value.contains('+') {
            return Err(PreprocessError::MalformedMorph(pair.to_string()));
        }
        values[cat.index()] = Some(value.to_string());
    }
    Ok(values)
}

/// Splits a composite morph string into one label per category.
pub fn split_morph(composite: &str) -> Result<MorphVector, PreprocessError> {
    let segments = composite
        .split('+')
        .map(parse_segment)
        .collect::<Result<Vec<_>, _>>()?;
    let mut vector = MorphVector::default();
    for cat in MorphCategory::ALL {
        let parts: Vec<Option<&String>> =
            segments.iter().map(|s| s[cat.index()].as_ref()).collect();
        if parts.iter().all(Option::is_none) {
            continue;
        }
        let label = parts
            .iter()
            .map(|p| p.map_or(SEGMENT_EMPTY, String::as_str))
            .collect::<Vec<_>>()
            .join("+");
        vector.set(cat, label);
    }
    Ok(vector)
}

/// Inverse of [`split_morph`], emitting categories in canonical order.
///
/// Vectors assembled from independent predictions may disagree on the
/// number of contraction segments; a label with fewer parts than the widest
/// one is right-aligned so that it describes the final segment(s).
pub fn join_morph(vector: &MorphVector) -> String {
    let width = vector
        .0
        .iter()
        .filter(|v| *v != EMPTY)
        .map(|v| v.split('+').count())
        .max()
        .unwrap_or(0);
    if width == 0 {
        return MORPH_EMPTY.to_string();
    }
    let mut segments: Vec<Vec<String>> = vec![Vec::new(); width];
    for cat in CANONICAL_ORDER {
        let label = vector.get(cat);
        if label == EMPTY {
            continue;
        }
        let parts: Vec<&str> = label.split('+').collect();
        let offset = width - parts.len();
        for (i, part) in parts.iter().enumerate() {
            if *part != SEGMENT_EMPTY {
                segments[offset + i].push(format!("{}={part}", canonical_name(cat)));
            }
        }
    }
    segments
        .into_iter()
        .map(|s| {
            if s.is_empty() {
                MORPH_EMPTY.to_string()
            } else {
                s.join("|")
            }
        })
        .collect::<Vec<_>>()
        .join("+")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Shuffles sentences with a seeded generator and cuts them into
/// train/dev/test. Dev and test get `round(ratio * n)` sentences, train the
/// remainder.
pub fn split_dataset(
    sentences: &[Sentence],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitSet, PreprocessError> {
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0)
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(PreprocessError::InvalidRatios(ratios));
    }
    let n = sentences.len();
    if n < 10 {
        return Err(PreprocessError::TooFewSentences { needed: 10, got: n });
    }
    let dev_len = (ratios[1] * n as f64).round() as usize;
    let test_len = (ratios[2] * n as f64).round() as usize;
    if dev_len == 0 || test_len == 0 || dev_len + test_len >= n {
        return Err(PreprocessError::TooFewSentences { needed: n + 1, got: n });
    }
    let train_len = n - dev_len - test_len;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| -> Vec<Sentence> {
        order[range].iter().map(|&i| sentences[i].clone()).collect()
    };
    Ok(SplitSet {
        train: take(0..train_len),
        dev: take(train_len..train_len + dev_len),
        test: take(train_len + dev_len..n),
        seed,
        ratios,
    })
}

/// Default per-sentence probability of capitalisation noise.
pub const DEFAULT_NOISE_PROBABILITY: f64 = 0.1;

/// With the given probability returns the sentence with every form fully
/// uppercased; gold columns are never touched.
pub fn apply_capitalization_noise<R: Rng + ?Sized>(
    sentence: &Sentence,
    probability: f64,
    rng: &mut R,
) -> Sentence {
    let mut out = sentence.clone();
    if probability > 0.0 && rng.random::<f64>() < probability {
        for token in &mut out.tokens {
            token.form = token.form.to_uppercase();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_tsv, AnnotatedToken};

    fn tok(form: &str, pos: &str) -> AnnotatedToken {
        AnnotatedToken::new(form, form, pos, "_")
    }

    #[test]
    fn segments_on_strong_punctuation() {
        let pos = ["NOMcom", "VERcjg", "PONfrt", "DETdef", "NOMcom", "ADVgen", "PONfrt"];
        let tokens = pos.iter().enumerate().map(|(i, p)| tok(&format!("w{i}"), p)).collect();
        let doc = Document::new("d", vec![Sentence::new(tokens)]);
        let out = segment_sentences(&doc, SegmentationMode::Punctuation);
        assert_eq!(out.iter().map(Sentence::len).collect::<Vec<_>>(), [3, 4]);
    }

    #[test]
    fn no_terminator_gives_one_sentence() {
        let doc = Document::new(
            "d",
            vec![Sentence::new(vec![tok("a", "PRE"), tok("b", "NOMcom")])],
        );
        assert_eq!(segment_sentences(&doc, SegmentationMode::Punctuation).len(), 1);
    }

    #[test]
    fn both_punctuation_spellings_terminate() {
        let doc = Document::new(
            "d",
            vec![Sentence::new(vec![
                tok("a", "NOMcom"),
                tok(".", "PONfrt"),
                tok("b", "NOMcom"),
                tok(".", "PUNfrt"),
                tok("c", "NOMcom"),
            ])],
        );
        let out = segment_sentences(&doc, SegmentationMode::Punctuation);
        assert_eq!(out.iter().map(Sentence::len).collect::<Vec<_>>(), [2, 2, 1]);
    }

    #[test]
    fn line_mode_keeps_boundaries() {
        let doc = parse_tsv(b"a\ta\tNOMcom\n.\t.\tPONfrt\nb\tb\tNOMcom\n\nc\tc\tNOMcom\n").unwrap();
        let out = segment_sentences(&doc, SegmentationMode::Line);
        assert_eq!(out, doc.sentences);
        let out = segment_sentences(&doc, SegmentationMode::Punctuation);
        assert_eq!(out.iter().map(Sentence::len).collect::<Vec<_>>(), [2, 2]);
    }

    #[test]
    fn roman_examples() {
        assert_eq!(normalize_roman(".l.m."), "50000");
        assert_eq!(normalize_roman(".iiii."), "4");
        assert_eq!(normalize_roman(".xiv."), "14");
        assert_eq!(normalize_roman(".xx.c."), "2000");
        assert_eq!(normalize_roman("XIV"), "14");
        assert_eq!(normalize_roman("la"), "la");
        assert_eq!(normalize_roman("vi"), "vi");
        assert_eq!(normalize_roman("mil"), "mil");
        assert_eq!(normalize_roman("Vi"), "Vi");
        assert_eq!(normalize_roman(".IIIII."), ".IIIII.");
        assert_eq!(normalize_roman(".x.v."), ".x.v.");
        assert_eq!(normalize_roman(".xV."), ".xV.");
        assert_eq!(normalize_roman("."), ".");
        assert_eq!(normalize_roman(".."), "..");
        assert_eq!(normalize_roman("..."), "...");
    }

    #[test]
    fn split_saint_morph() {
        let v = split_morph("NOMB.=s|GENRE=m|CAS=r|DEGRE=p").unwrap();
        assert_eq!(
            v.0,
            ["r", "p", "m", "_", "s", "_", "_"].map(String::from)
        );
        assert_eq!(join_morph(&v), "NOMB.=s|GENRE=m|CAS=r|DEGRE=p");
    }

    #[test]
    fn split_empty_markers() {
        assert!(split_morph("MORPH=empty").unwrap().is_empty());
        assert!(split_morph("_").unwrap().is_empty());
        assert_eq!(join_morph(&MorphVector::default()), "MORPH=empty");
    }

    #[test]
    fn split_contraction() {
        let v = split_morph("MORPH=empty+NOMB.=s|GENRE=m|CAS=r").unwrap();
        assert_eq!(v.get(MorphCategory::Nomb), "empty+s");
        assert_eq!(v.get(MorphCategory::Genre), "empty+m");
        assert_eq!(v.get(MorphCategory::Cas), "empty+r");
        assert_eq!(v.get(MorphCategory::Temps), "_");
        assert_eq!(join_morph(&v), "MORPH=empty+NOMB.=s|GENRE=m|CAS=r");
    }

    #[test]
    fn split_rejects_unknown_category() {
        assert_eq!(
            split_morph("ASPECT=p").unwrap_err(),
            PreprocessError::UnknownCategory("ASPECT".into())
        );
        assert!(matches!(
            split_morph("NOMB"),
            Err(PreprocessError::MalformedMorph(_))
        ));
    }

    #[test]
    fn join_pads_mismatched_predictions() {
        let mut v = MorphVector::default();
        v.set(MorphCategory::Nomb, "empty+s");
        v.set(MorphCategory::Genre, "m");
        assert_eq!(join_morph(&v), "MORPH=empty+NOMB.=s|GENRE=m");
    }

    fn sentences(n: usize) -> Vec<Sentence> {
        (0..n)
            .map(|i| Sentence::new(vec![tok(&format!("s{i}"), "NOMcom")]))
            .collect()
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(&sentences(100), DEFAULT_RATIOS, 42).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (80, 10, 10));
        let s = split_dataset(&sentences(99), DEFAULT_RATIOS, 42).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (79, 10, 10));
    }

    #[test]
    fn split_seeds() {
        let input = sentences(100);
        let a = split_dataset(&input, DEFAULT_RATIOS, 1).unwrap();
        let b = split_dataset(&input, DEFAULT_RATIOS, 2).unwrap();
        let a2 = split_dataset(&input, DEFAULT_RATIOS, 1).unwrap();
        assert_eq!(a, a2);
        assert_ne!(a.train, b.train);
        assert_eq!(a.train.len(), b.train.len());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_dataset(&sentences(9), DEFAULT_RATIOS, 0),
            Err(PreprocessError::TooFewSentences { .. })
        ));
        assert!(matches!(
            split_dataset(&sentences(20), [0.5, 0.2, 0.2], 0),
            Err(PreprocessError::InvalidRatios(_))
        ));
        assert!(matches!(
            split_dataset(&sentences(10), [0.9, 0.04, 0.06], 0),
            Err(PreprocessError::TooFewSentences { .. })
        ));
    }

    #[test]
    fn noise_probabilities() {
        let s = Sentence::new(vec![
            AnnotatedToken::new("veez", "vëoir", "VERcjg", "_"),
            AnnotatedToken::new("la", "il", "PROper", "_"),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(apply_capitalization_noise(&s, 0.0, &mut rng), s);
        let up = apply_capitalization_noise(&s, 1.0, &mut rng);
        assert_eq!(up.forms(), ["VEEZ", "LA"]);
        assert_eq!(up.tokens[0].lemma, "vëoir");
        assert_eq!(up.tokens[1].pos, "PROper");

        let n = 10_000;
        let hits = (0..n)
            .filter(|_| apply_capitalization_noise(&s, 0.5, &mut rng).tokens[0].form == "VEEZ")
            .count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }
}

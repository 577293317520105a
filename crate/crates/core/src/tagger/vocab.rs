use std::collections::HashMap;

use super::{TaggerError, TaskId};
use crate::corpus::Sentence;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
const SENTINELS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Dense string index with occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Index {
    items: Vec<String>,
    counts: Vec<u32>,
    lookup: HashMap<String, usize>,
}

impl Index {
    pub fn new() -> Self {
        Self::default()
    }

    /// An index starting with the padding, unknown, start and end entries.
    pub fn with_sentinels() -> Self {
        let mut index = Self::new();
        for s in SENTINELS {
            index.insert_with_count(s, 0);
        }
        index
    }

    pub fn insert(&mut self, item: &str) -> usize {
        self.insert_with_count(item, 1)
    }

    fn insert_with_count(&mut self, item: &str, count: u32) -> usize {
        if let Some(&i) = self.lookup.get(item) {
            self.counts[i] += count;
            return i;
        }
        self.items.push(item.to_string());
        self.counts.push(count);
        self.lookup.insert(item.to_string(), self.items.len() - 1);
        self.items.len() - 1
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.lookup.get(item).copied()
    }

    pub fn item(&self, index: usize) -> &str {
        &self.items[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }

    pub fn count(&self, index: usize) -> u32 {
        self.counts[index]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u32)> {
        self.items.iter().map(String::as_str).zip(self.counts.iter().copied())
    }

    pub(crate) fn from_entries(entries: Vec<(String, u32)>) -> Self {
        let mut index = Self::new();
        for (item, count) in entries {
            index.insert_with_count(&item, count);
        }
        index
    }

    /// Character ids of a word, unknown characters mapped to [`UNK`].
    pub fn encode_chars(&self, word: &str) -> Vec<usize> {
        word.chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.get(c.encode_utf8(&mut buf)).unwrap_or(UNK)
            })
            .collect()
    }
}

/// Input characters plus either the label set of a classification task or
/// the output alphabet of the lemma decoder. Built from training data only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub chars: Index,
    pub labels: Option<Index>,
    pub lemma_chars: Option<Index>,
}

impl Vocabularies {
    pub fn output_size(&self) -> usize {
        match (&self.labels, &self.lemma_chars) {
            (Some(l), _) => l.len(),
            (None, Some(c)) => c.len(),
            (None, None) => 0,
        }
    }
}

/// Builds vocabularies from the training split. When `with_uppercase` is
/// set the uppercase variants of every form character are added too, so
/// capitalisation noise does not produce unknown characters.
pub fn build_vocab(
    train: &[Sentence],
    task: TaskId,
    with_uppercase: bool,
) -> Result<Vocabularies, TaggerError> {
    if train.iter().all(Sentence::is_empty) {
        return Err(TaggerError::EmptySplit("train"));
    }
    let mut chars = Index::with_sentinels();
    let mut labels = Index::new();
    let mut lemma_chars = Index::with_sentinels();
    let mut buf = [0u8; 4];
    for token in train.iter().flat_map(|s| &s.tokens) {
        for c in token.form.chars() {
            chars.insert(c.encode_utf8(&mut buf));
        }
        match task {
            TaskId::Lemma => {
                for c in token.lemma.chars() {
                    lemma_chars.insert(c.encode_utf8(&mut buf));
                }
            }
            _ => {
                labels.insert(&task.gold_label(token)?);
            }
        }
    }
    if with_uppercase {
        let upper: Vec<String> = train
            .iter()
            .flat_map(|s| &s.tokens)
            .flat_map(|t| t.form.to_uppercase().chars().collect::<Vec<_>>())
            .map(String::from)
            .collect();
        for c in upper {
            if chars.get(&c).is_none() {
                chars.insert_with_count(&c, 0);
            }
        }
    }
    Ok(if task.is_generative() {
        Vocabularies {
            chars,
            labels: None,
            lemma_chars: Some(lemma_chars),
        }
    } else {
        Vocabularies {
            chars,
            labels: Some(labels),
            lemma_chars: None,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnnotatedToken;

    fn sentence(items: &[(&str, &str, &str)]) -> Sentence {
        Sentence::new(
            items
                .iter()
                .map(|(f, l, p)| AnnotatedToken::new(*f, *l, *p, "_"))
                .collect(),
        )
    }

    #[test]
    fn chars_and_sentinels() {
        let v = build_vocab(&[sentence(&[("a", "a", "X"), ("b", "b", "Y")])], TaskId::Pos, false)
            .unwrap();
        assert_eq!(v.chars.len(), 4 + 2);
        assert_eq!(v.chars.item(UNK), "<unk>");
        assert_eq!(v.chars.get("a"), Some(4));
    }

    #[test]
    fn label_count() {
        let s = sentence(&[
            ("a", "a", "NOMcom"),
            ("b", "b", "VERcjg"),
            ("c", "c", "PRE"),
            ("d", "d", "DETdef"),
            ("e", "e", "PONfrt"),
            ("f", "f", "PRE"),
        ]);
        let v = build_vocab(&[s], TaskId::Pos, false).unwrap();
        let labels = v.labels.unwrap();
        assert_eq!(labels.len(), 5);
        assert_eq!(labels.count(labels.get("PRE").unwrap()), 2);
    }

    #[test]
    fn unknown_char_maps_to_sentinel() {
        let v = build_vocab(&[sentence(&[("ab", "ab", "X")])], TaskId::Lemma, false).unwrap();
        assert_eq!(v.chars.encode_chars("abz"), vec![4, 5, UNK]);
        assert!(v.lemma_chars.is_some());
    }

    #[test]
    fn uppercase_variants() {
        let v = build_vocab(&[sentence(&[("ab", "ab", "X")])], TaskId::Pos, true).unwrap();
        assert!(v.chars.get("A").is_some());
        assert_eq!(v.chars.count(v.chars.get("A").unwrap()), 0);
    }

    #[test]
    fn empty_split() {
        assert!(matches!(
            build_vocab(&[], TaskId::Pos, false),
            Err(TaggerError::EmptySplit("train"))
        ));
    }
}

//! Synthetic corpora with a known generating grammar, used by tests and
//! demonstrations in place of the licensed historical corpora.
//!
//! The language is a toy verb paradigm: a subject pronoun selects one of
//! five suffixes, every verb lemma is its stem plus `er`, and sentences end
//! with strong punctuation.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedToken, Document, MorphCategory, Sentence, EMPTY};
use crate::preprocess::{join_morph, MorphVector};

/// Canonical suffix; lemmas are `stem + LEMMA_SUFFIX`.
pub const LEMMA_SUFFIX: &str = "er";

struct Person {
    pronoun: &'static str,
    pos: &'static str,
    suffix: &'static str,
    verb_pos: &'static str,
    mode: &'static str,
    pers: Option<&'static str>,
    nomb: Option<&'static str>,
}

const PERSONS: [Person; 5] = [
    Person { pronoun: "por", pos: "PRE", suffix: "er", verb_pos: "VERinf", mode: "inf", pers: None, nomb: None },
    Person { pronoun: "je", pos: "PROper", suffix: "e", verb_pos: "VERcjg", mode: "ind", pers: Some("1"), nomb: Some("s") },
    Person { pronoun: "tu", pos: "PROper", suffix: "es", verb_pos: "VERcjg", mode: "ind", pers: Some("2"), nomb: Some("s") },
    Person { pronoun: "nos", pos: "PROper", suffix: "ons", verb_pos: "VERcjg", mode: "ind", pers: Some("1"), nomb: Some("p") },
    Person { pronoun: "vos", pos: "PROper", suffix: "ez", verb_pos: "VERcjg", mode: "ind", pers: Some("2"), nomb: Some("p") },
];

/// The five inflection suffixes, in paradigm order.
pub const SUFFIXES: [&str; 5] = ["er", "e", "es", "ons", "ez"];

const ONSETS: [&str; 16] = ["b", "c", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "ch", "br", "tr"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ou"];
const CODAS: [&str; 6] = ["", "", "", "r", "s", "n"];

fn token(form: &str, lemma: &str, pos: &str, morph: &str) -> AnnotatedToken {
    AnnotatedToken::new(form, lemma, pos, morph)
}

fn morph(values: &[(MorphCategory, Option<&str>)]) -> String {
    let mut v = MorphVector::default();
    for (cat, value) in values {
        if let Some(value) = value {
            v.set(*cat, *value);
        }
    }
    if v.is_empty() {
        EMPTY.to_string()
    } else {
        join_morph(&v)
    }
}

/// A lexicon of verb stems over which sentences are generated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegularLanguage {
    pub stems: Vec<String>,
}

impl RegularLanguage {
    /// `n_stems` distinct stems of two or three syllables.
    pub fn new(n_stems: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stems = Vec::with_capacity(n_stems);
        let mut seen = std::collections::HashSet::new();
        while stems.len() < n_stems {
            let syllables = rng.random_range(2..=3);
            let mut stem = String::new();
            for i in 0..syllables {
                stem.push_str(ONSETS.choose(&mut rng).unwrap());
                stem.push_str(VOWELS.choose(&mut rng).unwrap());
                if i + 1 == syllables {
                    stem.push_str(["", "r", "s", "n", "l"].choose(&mut rng).unwrap());
                } else {
                    stem.push_str(CODAS.choose(&mut rng).unwrap());
                }
            }
            if seen.insert(stem.clone()) {
                stems.push(stem);
            }
        }
        RegularLanguage { stems }
    }

    pub fn lemma(stem: &str) -> String {
        format!("{stem}{LEMMA_SUFFIX}")
    }

    /// A clause: subject (or preposition) followed by the inflected verb.
    fn clause<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<AnnotatedToken>) {
        let person = PERSONS.choose(rng).unwrap();
        let stem = self.stems.choose(rng).unwrap();
        let subject_morph = morph(&[
            (MorphCategory::Pers, person.pers),
            (MorphCategory::Nomb, person.nomb),
        ]);
        out.push(token(person.pronoun, person.pronoun, person.pos, &subject_morph));
        let verb_morph = morph(&[
            (MorphCategory::Mode, Some(person.mode)),
            (MorphCategory::Pers, person.pers),
            (MorphCategory::Nomb, person.nomb),
        ]);
        out.push(token(
            &format!("{stem}{}", person.suffix),
            &Self::lemma(stem),
            person.verb_pos,
            &verb_morph,
        ));
    }

    /// `n` sentences of one to three clauses joined by `et`, each ending
    /// with a full stop.
    pub fn sentences(&self, n: usize, seed: u64) -> Vec<Sentence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut tokens = Vec::new();
                for i in 0..rng.random_range(1..=3) {
                    if i > 0 {
                        tokens.push(token("et", "et", "CONcoo", EMPTY));
                    }
                    self.clause(&mut rng, &mut tokens);
                }
                tokens.push(token(".", ".", "PONfrt", EMPTY));
                Sentence::new(tokens)
            })
            .collect()
    }

    pub fn document(&self, id: &str, n: usize, seed: u64) -> Document {
        Document::new(id, self.sentences(n, seed))
    }
}

/// Sentences whose POS is a function of the form alone.
pub fn separable_pos_corpus(n: usize, seed: u64) -> Vec<Sentence> {
    RegularLanguage::new(40, seed).sentences(n, seed.wrapping_add(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::split_morph;

    #[test]
    fn grammar_holds() {
        let lang = RegularLanguage::new(30, 1);
        assert_eq!(lang.stems.len(), 30);
        let sentences = lang.sentences(50, 2);
        for s in &sentences {
            assert_eq!(s.tokens.last().unwrap().pos, "PONfrt");
            for t in &s.tokens {
                t.check().unwrap();
                split_morph(&t.morph).unwrap();
                if t.pos.starts_with("VER") {
                    let stem = t.lemma.strip_suffix(LEMMA_SUFFIX).unwrap();
                    assert!(lang.stems.iter().any(|s| s == stem));
                    assert!(SUFFIXES.iter().any(|suf| t.form == format!("{stem}{suf}")));
                }
            }
        }
        assert_eq!(sentences, lang.sentences(50, 2));
    }

    #[test]
    fn pos_is_a_function_of_form() {
        let mut seen = std::collections::HashMap::new();
        for s in separable_pos_corpus(100, 4) {
            for t in s.tokens {
                assert_eq!(seen.entry(t.form.clone()).or_insert(t.pos.clone()), &t.pos);
            }
        }
    }
}

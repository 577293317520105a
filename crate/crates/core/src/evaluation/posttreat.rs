//! Rewrites predicted lemmas of a homograph family using the independently
//! predicted POS tag.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Sentence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostTreatmentRule {
    /// Predicted lemmas the rule may rewrite.
    pub family: BTreeSet<String>,
    pub pos: String,
    /// When set, the rule only fires if an earlier token of the sentence has
    /// one of these lemmas.
    pub cue: Option<BTreeSet<String>>,
    pub lemma: String,
}

/// Ordered rules; the first matching rule wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<PostTreatmentRule>,
}

impl Default for RuleSet {
    /// The *que* rules: PROrel → que2, ADVint → que3, CONsub after a
    /// negation (`ne … que` comparison) → que1, other CONsub and CONcoo →
    /// que4.
    fn default() -> Self {
        RuleSet::parse(DEFAULT_RULES).expect("built-in rules parse")
    }
}

pub const DEFAULT_RULES: &str = "\
# family\tpos\tcue\tlemma
que1,que2,que3,que4\tPROrel\t*\tque2
que1,que2,que3,que4\tADVint\t*\tque3
que1,que2,que3,que4\tCONsub\tne1,ne2\tque1
que1,que2,que3,que4\tCONsub\t*\tque4
que1,que2,que3,que4\tCONcoo\t*\tque4
";

fn list(cell: &str) -> BTreeSet<String> {
    cell.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl RuleSet {
    /// Parses `family<TAB>pos<TAB>cue<TAB>lemma` lines, where `family` and
    /// `cue` are comma-separated lemma lists and a cue of `*` means
    /// unconditional.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| EvalError::Rule {
                line: line_no,
                message: message.to_string(),
            };
            let cells: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [family, pos, cue, lemma] = cells.as_slice() else {
                return Err(err("expected 4 tab-separated cells"));
            };
            let family = list(family);
            if family.is_empty() || pos.is_empty() || lemma.is_empty() {
                return Err(err("family, pos and lemma must be non-empty"));
            }
            let cue = match *cue {
                "*" | "" => None,
                c => {
                    let cue = list(c);
                    if cue.iter().any(|c| family.contains(c)) {
                        return Err(err("cue lemmas may not belong to the rewritten family"));
                    }
                    Some(cue)
                }
            };
            rules.push(PostTreatmentRule {
                family,
                pos: pos.to_string(),
                cue,
                lemma: lemma.to_string(),
            });
        }
        Ok(RuleSet { rules })
    }

    fn rewrite(&self, sentence: &Sentence, index: usize) -> Option<&str> {
        let token = &sentence.tokens[index];
        self.rules
            .iter()
            .find(|r| {
                r.family.contains(&token.lemma)
                    && r.pos == token.pos
                    && r.cue.as_ref().is_none_or(|cue| {
                        sentence.tokens[..index].iter().any(|t| cue.contains(&t.lemma))
                    })
            })
            .map(|r| r.lemma.as_str())
    }

    /// Only the lemma column of matching tokens changes.
    pub fn apply(&self, sentence: &Sentence) -> Sentence {
        let mut out = sentence.clone();
        for i in 0..sentence.len() {
            if let Some(lemma) = self.rewrite(sentence, i) {
                out.tokens[i].lemma = lemma.to_string();
            }
        }
        out
    }
}

pub fn pos_lemma_posttreatment(pred: &[Sentence], rules: &RuleSet) -> Vec<Sentence> {
    pred.iter().map(|s| rules.apply(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnnotatedToken;

    fn s(tokens: &[(&str, &str, &str)]) -> Sentence {
        Sentence::new(
            tokens
                .iter()
                .map(|(f, l, p)| AnnotatedToken::new(*f, *l, *p, "_"))
                .collect(),
        )
    }

    #[test]
    fn relative_pronoun() {
        let rules = RuleSet::default();
        let out = rules.apply(&s(&[("que", "que4", "PROrel")]));
        assert_eq!(out.tokens[0].lemma, "que2");
        assert_eq!(out.tokens[0].pos, "PROrel");
    }

    #[test]
    fn outside_family_untouched() {
        let rules = RuleSet::default();
        let input = s(&[("cheval", "cheval", "PROrel"), ("cheval", "cheval", "CONsub")]);
        assert_eq!(rules.apply(&input), input);
    }

    #[test]
    fn negation_cue() {
        let rules = RuleSet::default();
        let out = rules.apply(&s(&[
            ("que", "que2", "CONsub"),
            ("ne", "ne1", "ADVneg"),
            ("que", "que2", "CONsub"),
        ]));
        assert_eq!(out.tokens[0].lemma, "que4");
        assert_eq!(out.tokens[2].lemma, "que1");
    }

    #[test]
    fn idempotent() {
        let rules = RuleSet::default();
        let input = s(&[
            ("ne", "ne2", "CONcoo"),
            ("que", "que1", "CONcoo"),
            ("que", "que3", "CONsub"),
            ("que", "que4", "ADVint"),
            ("que", "que4", "ADVgen"),
        ]);
        let once = rules.apply(&input);
        assert_eq!(rules.apply(&once), once);
    }

    #[test]
    fn malformed_rules() {
        assert!(matches!(
            RuleSet::parse("que1\tPROrel\tque2\n"),
            Err(EvalError::Rule { line: 1, .. })
        ));
        assert!(matches!(
            RuleSet::parse("# c\nque1,que2\tCONsub\tque1\tque2\n"),
            Err(EvalError::Rule { line: 2, .. })
        ));
        assert_eq!(RuleSet::default().rules.len(), 5);
    }
}

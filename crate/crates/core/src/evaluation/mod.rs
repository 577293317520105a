//! Test-set measurements: token classes, accuracy with macro precision and
//! recall, confusion tables, per-POS breakdowns, diversity indices,
//! sentence scores and the *que* analysis with its post-treatment.

mod confusion;
mod posttreat;
mod report;
mod tables;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedToken, Sentence};

pub use confusion::{confusion, error_concentration, ConfusionRow, ConfusionTable, ErrorConcentration, Threshold};
pub use posttreat::{pos_lemma_posttreatment, PostTreatmentRule, RuleSet};
pub use report::{evaluate, EvalOptions, EvaluationReport, TaskMetrics};
pub use tables::{
    lemma_by_pos_report, per_pos_report, que_cross_report, sentence_scores, shannon_diversity,
    Column, LemmaByPosReport, LemmaByPosRow, PerPosReport, PerPosRow, QueReport, QueRow,
    ScoreBin, SentenceScoreHistogram, MIN_REPORT_SUPPORT,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold has {gold} items but prediction has {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("sentence {sentence}: gold has {gold} tokens but prediction has {pred}")]
    SentenceMismatch {
        sentence: usize,
        gold: usize,
        pred: usize,
    },
    #[error("diversity index needs at least one positive count")]
    EmptyDistribution,
    #[error("rule file line {line}: {message}")]
    Rule { line: usize, message: String },
}

/// Which training-set relation a test token has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClass {
    /// The form occurs in the training split.
    pub known: bool,
    /// The form maps to at least two distinct gold lemmas in training.
    pub ambiguous: bool,
    /// The gold lemma never occurs in training.
    pub unknown_target: bool,
}

impl TokenClass {
    pub fn unknown(&self) -> bool {
        !self.known
    }

    pub fn in_subset(&self, subset: Subset) -> bool {
        match subset {
            Subset::All => true,
            Subset::Known => self.known,
            Subset::Unknown => !self.known,
            Subset::Ambiguous => self.ambiguous,
            Subset::UnknownTarget => self.unknown_target,
        }
    }
}

/// Flags every test token (in reading order) against the training split.
pub fn classify_tokens(train: &[Sentence], test: &[Sentence]) -> Vec<TokenClass> {
    let mut lemmas_by_form: HashMap<&str, HashSet<&str>> = HashMap::new();
    let mut train_lemmas: HashSet<&str> = HashSet::new();
    for t in train.iter().flat_map(|s| &s.tokens) {
        lemmas_by_form.entry(&t.form).or_default().insert(&t.lemma);
        train_lemmas.insert(&t.lemma);
    }
    test.iter()
        .flat_map(|s| &s.tokens)
        .map(|t| {
            let seen = lemmas_by_form.get(t.form.as_str());
            TokenClass {
                known: seen.is_some(),
                ambiguous: seen.is_some_and(|l| l.len() >= 2),
                unknown_target: !train_lemmas.contains(t.lemma.as_str()),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Known,
    Unknown,
    Ambiguous,
    UnknownTarget,
}

impl Subset {
    pub const ALL: [Subset; 5] = [
        Subset::All,
        Subset::Known,
        Subset::Unknown,
        Subset::Ambiguous,
        Subset::UnknownTarget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Known => "known",
            Subset::Unknown => "unknown",
            Subset::Ambiguous => "ambiguous",
            Subset::UnknownTarget => "unknown_target",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

/// Micro accuracy with precision, recall and F1 macro-averaged over the gold
/// classes present in the subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl SubsetMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
        }
    }
}

pub(crate) fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

pub(crate) fn check_aligned<A, B>(gold: &[A], pred: &[B]) -> Result<(), EvalError> {
    if gold.len() == pred.len() {
        Ok(())
    } else {
        Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        })
    }
}

/// Metrics over aligned gold and predicted labels.
pub fn subset_metrics<G: AsRef<str>, P: AsRef<str>>(
    gold: &[G],
    pred: &[P],
) -> Result<SubsetMetrics, EvalError> {
    check_aligned(gold, pred)?;
    let n = gold.len();
    if n == 0 {
        return Ok(SubsetMetrics::default());
    }
    let mut gold_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pred_counts: HashMap<&str, usize> = HashMap::new();
    let mut hits: HashMap<&str, usize> = HashMap::new();
    let mut correct = 0;
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        *gold_counts.entry(g).or_default() += 1;
        *pred_counts.entry(p).or_default() += 1;
        if g == p {
            correct += 1;
            *hits.entry(g).or_default() += 1;
        }
    }
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for (label, &support) in &gold_counts {
        let tp = hits.get(label).copied().unwrap_or(0) as f64;
        let predicted = pred_counts.get(label).copied().unwrap_or(0);
        let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let r = tp / support as f64;
        precision += p;
        recall += r;
        f1 += harmonic(p, r);
    }
    let k = gold_counts.len() as f64;
    Ok(SubsetMetrics {
        accuracy: correct as f64 / n as f64,
        precision: precision / k,
        recall: recall / k,
        f1: f1 / k,
        support: n,
    })
}

/// One task's metrics for every token subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub subsets: BTreeMap<Subset, SubsetMetrics>,
}

impl MetricsTable {
    pub fn get(&self, subset: Subset) -> SubsetMetrics {
        self.subsets.get(&subset).copied().unwrap_or_default()
    }

    /// Flat `subset_metric` → value map, e.g. `unknown_precision`.
    pub fn flatten(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for subset in Subset::ALL {
            let m = self.get(subset);
            for metric in Metric::ALL {
                out.insert(format!("{}_{}", subset.name(), metric.name()), m.get(metric));
            }
        }
        out
    }
}

pub fn score<G: AsRef<str>, P: AsRef<str>>(
    gold: &[G],
    pred: &[P],
    classes: &[TokenClass],
) -> Result<MetricsTable, EvalError> {
    check_aligned(gold, pred)?;
    check_aligned(gold, classes)?;
    let mut subsets = BTreeMap::new();
    for subset in Subset::ALL {
        let (g, p): (Vec<&str>, Vec<&str>) = gold
            .iter()
            .zip(pred)
            .zip(classes)
            .filter(|(_, c)| c.in_subset(subset))
            .map(|((g, p), _)| (g.as_ref(), p.as_ref()))
            .unzip();
        subsets.insert(subset, subset_metrics(&g, &p)?);
    }
    Ok(MetricsTable { subsets })
}

pub(crate) fn flatten_tokens(sentences: &[Sentence]) -> Vec<&AnnotatedToken> {
    sentences.iter().flat_map(|s| s.tokens.iter()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(pairs: &[(&str, &str)]) -> Sentence {
        Sentence::new(
            pairs
                .iter()
                .map(|(f, l)| AnnotatedToken::new(*f, *l, "_", "_"))
                .collect(),
        )
    }

    #[test]
    fn classes() {
        let train = [sent(&[("mes", "mes1"), ("mes", "mais1"), ("et", "et")])];
        let test = [sent(&[("et", "et"), ("mes", "mes1"), ("cheval", "cheval"), ("et", "e")])];
        let c = classify_tokens(&train, &test);
        assert!(c[0].known && !c[0].ambiguous && !c[0].unknown_target);
        assert!(c[1].known && c[1].ambiguous);
        assert!(c[2].unknown() && c[2].unknown_target);
        assert!(c[3].known && c[3].unknown_target);
    }

    #[test]
    fn perfect_predictions() {
        let gold = ["a", "b", "b", "c"];
        let m = subset_metrics(&gold, &gold).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn macro_over_gold_classes_only() {
        // "z" is predicted but never gold: it lowers a's precision only.
        let gold = ["a", "a", "b", "b"];
        let pred = ["a", "z", "b", "a"];
        let m = subset_metrics(&gold, &pred).unwrap();
        assert_eq!(m.accuracy, 0.5);
        // a: p = 1/2, r = 1/2; b: p = 1, r = 1/2
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!((m.recall - 0.5).abs() < 1e-15);
        let f1 = (harmonic(0.5, 0.5) + harmonic(1.0, 0.5)) / 2.0;
        assert!((m.f1 - f1).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            subset_metrics(&["a"], &["a", "b"]).unwrap_err(),
            EvalError::LengthMismatch { gold: 1, pred: 2 }
        );
    }
}

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::confusion::{confusion, error_concentration, ConfusionTable, ErrorConcentration, Threshold};
use super::tables::{
    lemma_by_pos_report, per_pos_report, que_cross_report, sentence_scores, Column,
    LemmaByPosReport, PerPosReport, QueReport, SentenceScoreHistogram, QUE_LEMMAS,
};
use super::{classify_tokens, flatten_tokens, score, EvalError, MetricsTable, Subset, TokenClass};
use crate::corpus::{MorphCategory, Sentence, EMPTY, MORPH_EMPTY};
use crate::preprocess::split_morph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub lemma_threshold: Threshold,
    pub pos_threshold: Threshold,
    pub sentence_columns: Vec<Column>,
    /// Lemma set whose internal confusions are measured.
    pub homograph_set: BTreeSet<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            lemma_threshold: Threshold::Greater(10),
            pos_threshold: Threshold::AtLeast(10),
            sentence_columns: vec![Column::Lemma],
            homograph_set: QUE_LEMMAS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub metrics: MetricsTable,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tokens: usize,
    pub known: usize,
    pub unknown: usize,
    pub ambiguous: usize,
    pub unknown_target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub class_counts: Option<ClassCounts>,
    pub tasks: Vec<TaskMetrics>,
    pub lemma_confusion: ConfusionTable,
    pub pos_confusion: ConfusionTable,
    pub error_concentration: ErrorConcentration,
    pub per_pos: PerPosReport,
    pub lemma_by_pos: LemmaByPosReport,
    pub sentence_scores: SentenceScoreHistogram,
    pub que: QueReport,
}

fn has_morph(value: &str) -> bool {
    value != EMPTY && value != MORPH_EMPTY && !value.is_empty()
}

/// Runs every measurement over aligned gold and predicted sentences. Without
/// a training split only the `all` subset is filled.
pub fn evaluate(
    train: Option<&[Sentence]>,
    gold: &[Sentence],
    pred: &[Sentence],
    options: &EvalOptions,
) -> Result<EvaluationReport, EvalError> {
    super::check_aligned(gold, pred)?;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::SentenceMismatch {
                sentence: i,
                gold: g.len(),
                pred: p.len(),
            });
        }
    }
    let gold_tokens = flatten_tokens(gold);
    let pred_tokens = flatten_tokens(pred);

    let (classes, class_counts) = match train {
        Some(train) => {
            let classes = classify_tokens(train, gold);
            let counts = ClassCounts {
                tokens: classes.len(),
                known: classes.iter().filter(|c| c.known).count(),
                unknown: classes.iter().filter(|c| !c.known).count(),
                ambiguous: classes.iter().filter(|c| c.ambiguous).count(),
                unknown_target: classes.iter().filter(|c| c.unknown_target).count(),
            };
            (classes, Some(counts))
        }
        None => (vec![TokenClass { known: true, ambiguous: false, unknown_target: false }; gold_tokens.len()], None),
    };
    let table = |g: &[&str], p: &[&str]| -> Result<MetricsTable, EvalError> {
        let mut t = score(g, p, &classes)?;
        if train.is_none() {
            t.subsets.retain(|s, _| *s == Subset::All);
        }
        Ok(t)
    };

    let gold_lemma: Vec<&str> = gold_tokens.iter().map(|t| t.lemma.as_str()).collect();
    let pred_lemma: Vec<&str> = pred_tokens.iter().map(|t| t.lemma.as_str()).collect();
    let gold_pos: Vec<&str> = gold_tokens.iter().map(|t| t.pos.as_str()).collect();
    let pred_pos: Vec<&str> = pred_tokens.iter().map(|t| t.pos.as_str()).collect();

    let mut tasks = vec![
        TaskMetrics {
            task: "lemma".into(),
            metrics: table(&gold_lemma, &pred_lemma)?,
        },
        TaskMetrics {
            task: "POS".into(),
            metrics: table(&gold_pos, &pred_pos)?,
        },
    ];
    if gold_tokens.iter().any(|t| has_morph(&t.morph)) {
        // Unparseable morph strings count as empty; validation reports them.
        let split = |tokens: &[&crate::corpus::AnnotatedToken]| -> Vec<_> {
            tokens
                .iter()
                .map(|t| split_morph(&t.morph).unwrap_or_default())
                .collect()
        };
        let gold_morph = split(&gold_tokens);
        let pred_morph = split(&pred_tokens);
        for cat in MorphCategory::ALL {
            let g: Vec<&str> = gold_morph.iter().map(|v| v.get(cat)).collect();
            let p: Vec<&str> = pred_morph.iter().map(|v| v.get(cat)).collect();
            tasks.push(TaskMetrics {
                task: cat.name().into(),
                metrics: table(&g, &p)?,
            });
        }
    }

    Ok(EvaluationReport {
        class_counts,
        tasks,
        lemma_confusion: confusion(&gold_lemma, &pred_lemma, options.lemma_threshold)?,
        pos_confusion: confusion(&gold_pos, &pred_pos, options.pos_threshold)?,
        error_concentration: error_concentration(&gold_lemma, &pred_lemma, &options.homograph_set)?,
        per_pos: per_pos_report(&gold_pos, &pred_pos)?,
        lemma_by_pos: lemma_by_pos_report(&gold_lemma, &pred_lemma, &gold_pos)?,
        sentence_scores: sentence_scores(gold, pred, &options.sentence_columns)?,
        que: que_cross_report(&gold_tokens, &pred_pos, &pred_lemma)?,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl EvaluationReport {
    /// Accuracy/precision/recall per task and subset, in percent.
    pub fn metrics_tsv(&self) -> String {
        let subsets = [Subset::All, Subset::Known, Subset::Unknown, Subset::Ambiguous];
        let mut out = String::from("task");
        for s in subsets {
            for m in ["acc", "pre", "rec"] {
                out.push_str(&format!("\t{}_{m}", s.name()));
            }
        }
        out.push('\n');
        for task in &self.tasks {
            out.push_str(&task.task);
            for s in subsets {
                let m = task.metrics.get(s);
                for v in [m.accuracy, m.precision, m.recall] {
                    out.push('\t');
                    out.push_str(&pct(v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn concentration_tsv(&self) -> String {
        let c = &self.error_concentration;
        format!(
            "measure\tvalue\n\
             total_errors\t{}\n\
             homograph_errors\t{}\n\
             homograph_fraction\t{}\n\
             single_error_lemmas\t{}\n\
             single_error_lemma_fraction\t{}\n\
             singleton_errors\t{}\n\
             singleton_error_fraction\t{}\n",
            c.total_errors,
            c.set_errors,
            pct(c.set_fraction),
            c.single_error_lemmas,
            pct(c.single_error_lemma_fraction),
            c.singleton_errors,
            pct(c.singleton_error_fraction),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Every report as `file name → contents`.
    pub fn render(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("metrics.tsv", self.metrics_tsv()),
            ("confusion_lemma.tsv", self.lemma_confusion.to_tsv()),
            ("confusion_pos.tsv", self.pos_confusion.to_tsv()),
            ("error_concentration.tsv", self.concentration_tsv()),
            ("per_pos.tsv", self.per_pos.to_tsv()),
            ("lemma_by_pos.tsv", self.lemma_by_pos.to_tsv()),
            ("sentence_scores.tsv", self.sentence_scores.to_tsv()),
            ("que.tsv", self.que.to_tsv()),
            ("report.json", self.to_json()),
        ])
    }
}

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{check_aligned, harmonic, EvalError};
use crate::corpus::{AnnotatedToken, Sentence};

/// Rows with a smaller support are left out of rendered reports.
pub const MIN_REPORT_SUPPORT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPosRow {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-label precision/recall/F1. `rows` keeps every label of gold or
/// prediction; rendering drops rows under [`MIN_REPORT_SUPPORT`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPosReport {
    pub rows: Vec<PerPosRow>,
}

impl PerPosReport {
    pub fn rendered_rows(&self) -> impl Iterator<Item = &PerPosRow> {
        self.rows.iter().filter(|r| r.support >= MIN_REPORT_SUPPORT)
    }

    pub fn row(&self, label: &str) -> Option<&PerPosRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pos\tprecision\trecall\tf1\tsupport\n");
        for r in self.rendered_rows() {
            out.push_str(&format!(
                "{}\t{:.2}\t{:.2}\t{:.2}\t{}\n",
                r.label, r.precision, r.recall, r.f1, r.support
            ));
        }
        out
    }
}

pub fn per_pos_report<G: AsRef<str>, P: AsRef<str>>(
    gold: &[G],
    pred: &[P],
) -> Result<PerPosReport, EvalError> {
    check_aligned(gold, pred)?;
    // (gold count, predicted count, hits)
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        counts.entry(g).or_default().0 += 1;
        counts.entry(p).or_default().1 += 1;
        if g == p {
            counts.entry(g).or_default().2 += 1;
        }
    }
    let rows = counts
        .into_iter()
        .map(|(label, (support, predicted, tp))| {
            let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
            PerPosRow {
                label: label.to_string(),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            }
        })
        .collect();
    Ok(PerPosReport { rows })
}

/// Shannon diversity `-Σ p ln p` of a frequency distribution.
pub fn shannon_diversity(counts: &[usize]) -> Result<f64, EvalError> {
    let total: usize = counts.iter().sum();
    if counts.is_empty() || counts.contains(&0) || total == 0 {
        return Err(EvalError::EmptyDistribution);
    }
    let total = total as f64;
    Ok(counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaByPosRow {
    pub pos: String,
    pub accuracy: f64,
    pub frequency: usize,
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaByPosReport {
    pub rows: Vec<LemmaByPosRow>,
}

impl LemmaByPosReport {
    pub fn row(&self, pos: &str) -> Option<&LemmaByPosRow> {
        self.rows.iter().find(|r| r.pos == pos)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pos\tlemma_accuracy\tfrequency\tlemma_sdi\n");
        for r in self.rows.iter().filter(|r| r.frequency >= MIN_REPORT_SUPPORT) {
            out.push_str(&format!(
                "{}\t{:.2}\t{}\t{:.2}\n",
                r.pos,
                100.0 * r.accuracy,
                r.frequency,
                r.diversity
            ));
        }
        out
    }
}

/// Lemma accuracy and gold-lemma diversity grouped by gold POS.
pub fn lemma_by_pos_report<G, P, T>(
    gold_lemma: &[G],
    pred_lemma: &[P],
    gold_pos: &[T],
) -> Result<LemmaByPosReport, EvalError>
where
    G: AsRef<str>,
    P: AsRef<str>,
    T: AsRef<str>,
{
    check_aligned(gold_lemma, pred_lemma)?;
    check_aligned(gold_lemma, gold_pos)?;
    let mut groups: BTreeMap<&str, (usize, BTreeMap<&str, usize>)> = BTreeMap::new();
    for ((g, p), pos) in gold_lemma.iter().zip(pred_lemma).zip(gold_pos) {
        let entry = groups.entry(pos.as_ref()).or_default();
        if g.as_ref() == p.as_ref() {
            entry.0 += 1;
        }
        *entry.1.entry(g.as_ref()).or_default() += 1;
    }
    let rows = groups
        .into_iter()
        .map(|(pos, (correct, lemmas))| {
            let counts: Vec<usize> = lemmas.values().copied().collect();
            let frequency: usize = counts.iter().sum();
            LemmaByPosRow {
                pos: pos.to_string(),
                accuracy: correct as f64 / frequency as f64,
                frequency,
                diversity: shannon_diversity(&counts).unwrap_or(0.0),
            }
        })
        .collect();
    Ok(LemmaByPosReport { rows })
}

/// Annotation column compared when scoring a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Lemma,
    Pos,
    Morph,
}

impl Column {
    pub fn value(self, token: &AnnotatedToken) -> &str {
        match self {
            Column::Lemma => &token.lemma,
            Column::Pos => &token.pos,
            Column::Morph => &token.morph,
        }
    }

    pub fn parse(s: &str) -> Option<Column> {
        match s.to_ascii_lowercase().as_str() {
            "lemma" => Some(Column::Lemma),
            "pos" => Some(Column::Pos),
            "morph" => Some(Column::Morph),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreBin {
    /// Score exactly 1.
    Perfect,
    /// [0.9, 1)
    AtLeast90,
    /// [0.8, 0.9)
    AtLeast80,
    /// below 0.8
    Below80,
}

impl ScoreBin {
    pub const ALL: [ScoreBin; 4] = [
        ScoreBin::Perfect,
        ScoreBin::AtLeast90,
        ScoreBin::AtLeast80,
        ScoreBin::Below80,
    ];

    pub fn of(score: f64) -> ScoreBin {
        if score >= 1.0 {
            ScoreBin::Perfect
        } else if score >= 0.9 {
            ScoreBin::AtLeast90
        } else if score >= 0.8 {
            ScoreBin::AtLeast80
        } else {
            ScoreBin::Below80
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ScoreBin::Perfect => "1",
            ScoreBin::AtLeast90 => "0.9-1",
            ScoreBin::AtLeast80 => "0.8-0.9",
            ScoreBin::Below80 => "<0.8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScoreHistogram {
    /// Fraction of fully correct words, per sentence.
    pub scores: Vec<f64>,
    pub correct_words: Vec<usize>,
    pub total_words: Vec<usize>,
    /// Counts in [`ScoreBin::ALL`] order.
    pub bins: [usize; 4],
}

impl SentenceScoreHistogram {
    pub fn count(&self, bin: ScoreBin) -> usize {
        self.bins[bin as usize]
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sentence_score\tsentences\n");
        for bin in ScoreBin::ALL {
            out.push_str(&format!("{}\t{}\n", bin.label(), self.count(bin)));
        }
        out
    }
}

/// Word-level sentence scores: a word counts as correct when every selected
/// column matches the gold annotation.
pub fn sentence_scores(
    gold: &[Sentence],
    pred: &[Sentence],
    columns: &[Column],
) -> Result<SentenceScoreHistogram, EvalError> {
    check_aligned(gold, pred)?;
    let mut hist = SentenceScoreHistogram {
        scores: Vec::with_capacity(gold.len()),
        correct_words: Vec::with_capacity(gold.len()),
        total_words: Vec::with_capacity(gold.len()),
        bins: [0; 4],
    };
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::SentenceMismatch {
                sentence: i,
                gold: g.len(),
                pred: p.len(),
            });
        }
        let correct = g
            .tokens
            .iter()
            .zip(&p.tokens)
            .filter(|(gt, pt)| columns.iter().all(|c| c.value(gt) == c.value(pt)))
            .count();
        let score = if g.is_empty() { 1.0 } else { correct as f64 / g.len() as f64 };
        hist.bins[ScoreBin::of(score) as usize] += 1;
        hist.scores.push(score);
        hist.correct_words.push(correct);
        hist.total_words.push(g.len());
    }
    Ok(hist)
}

pub const QUE_LEMMAS: [&str; 4] = ["que1", "que2", "que3", "que4"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueRow {
    pub lemma: String,
    pub frequency: usize,
    pub pos_accuracy: f64,
    pub lemma_accuracy: f64,
    pub combined_accuracy: f64,
    pub predicted_que4: f64,
    pub predicted_que2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueReport {
    pub rows: Vec<QueRow>,
}

impl QueReport {
    pub fn row(&self, lemma: &str) -> Option<&QueRow> {
        self.rows.iter().find(|r| r.lemma == lemma)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "gold\tfreq\tacc_pos\tacc_lemma\tcombined\tpred_que4\tpred_que2\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\n",
                r.lemma,
                r.frequency,
                100.0 * r.pos_accuracy,
                100.0 * r.lemma_accuracy,
                100.0 * r.combined_accuracy,
                100.0 * r.predicted_que4,
                100.0 * r.predicted_que2
            ));
        }
        out
    }
}

/// Lemma and POS accuracy for each gold *que* homograph.
pub fn que_cross_report<P: AsRef<str>, L: AsRef<str>>(
    gold: &[&AnnotatedToken],
    pred_pos: &[P],
    pred_lemma: &[L],
) -> Result<QueReport, EvalError> {
    check_aligned(gold, pred_pos)?;
    check_aligned(gold, pred_lemma)?;
    let present: BTreeSet<&str> = gold
        .iter()
        .map(|t| t.lemma.as_str())
        .filter(|l| QUE_LEMMAS.contains(l))
        .collect();
    let rows = QUE_LEMMAS
        .iter()
        .filter(|q| present.contains(*q))
        .map(|&que| {
            let (mut n, mut pos_ok, mut lem_ok, mut both, mut q4, mut q2) = (0, 0, 0, 0, 0, 0);
            for ((g, pp), pl) in gold.iter().zip(pred_pos).zip(pred_lemma) {
                if g.lemma != que {
                    continue;
                }
                n += 1;
                let p_ok = g.pos == pp.as_ref();
                let l_ok = g.lemma == pl.as_ref();
                pos_ok += p_ok as usize;
                lem_ok += l_ok as usize;
                both += (p_ok && l_ok) as usize;
                q4 += (pl.as_ref() == "que4") as usize;
                q2 += (pl.as_ref() == "que2") as usize;
            }
            let f = |x: usize| x as f64 / n as f64;
            QueRow {
                lemma: que.to_string(),
                frequency: n,
                pos_accuracy: f(pos_ok),
                lemma_accuracy: f(lem_ok),
                combined_accuracy: f(both),
                predicted_que4: f(q4),
                predicted_que2: f(q2),
            }
        })
        .collect();
    Ok(QueReport { rows })
}

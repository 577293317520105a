use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{check_aligned, EvalError};

/// Cell filter of a confusion table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Keep cells with a count strictly above the value.
    Greater(usize),
    /// Keep cells with a count of at least the value.
    AtLeast(usize),
}

impl Threshold {
    pub fn keeps(self, count: usize) -> bool {
        match self {
            Threshold::Greater(t) => count > t,
            Threshold::AtLeast(t) => count >= t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub gold: String,
    /// Every wrongly predicted token with this gold label, before filtering.
    pub errors: usize,
    /// Wrong predictions kept by the threshold, most frequent first.
    pub predictions: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub rows: Vec<ConfusionRow>,
}

impl ConfusionTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, gold: &str) -> Option<&ConfusionRow> {
        self.rows.iter().find(|r| r.gold == gold)
    }

    /// `gold, errors, prediction, frequency`; continuation lines leave the
    /// first two cells empty.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gold\terrors\tprediction\tfrequency\n");
        for row in &self.rows {
            for (i, (pred, freq)) in row.predictions.iter().enumerate() {
                if i == 0 {
                    out.push_str(&format!("{}\t{}\t{pred}\t{freq}\n", row.gold, row.errors));
                } else {
                    out.push_str(&format!("\t\t{pred}\t{freq}\n"));
                }
            }
        }
        out
    }
}

/// Error cells of the gold × prediction matrix. Rows whose cells are all
/// filtered out are dropped; rows are sorted by error count, descending.
pub fn confusion<G: AsRef<str>, P: AsRef<str>>(
    gold: &[G],
    pred: &[P],
    threshold: Threshold,
) -> Result<ConfusionTable, EvalError> {
    check_aligned(gold, pred)?;
    let mut cells: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g != p {
            *cells.entry(g).or_default().entry(p).or_default() += 1;
        }
    }
    let mut rows: Vec<ConfusionRow> = cells
        .into_iter()
        .filter_map(|(gold, preds)| {
            let errors = preds.values().sum();
            let mut predictions: Vec<(String, usize)> = preds
                .into_iter()
                .filter(|(_, c)| threshold.keeps(*c))
                .map(|(p, c)| (p.to_string(), c))
                .collect();
            predictions.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            (!predictions.is_empty()).then(|| ConfusionRow {
                gold: gold.to_string(),
                errors,
                predictions,
            })
        })
        .collect();
    rows.sort_by(|a, b| b.errors.cmp(&a.errors).then_with(|| a.gold.cmp(&b.gold)));
    Ok(ConfusionTable { rows })
}

/// How concentrated lemma errors are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorConcentration {
    pub total_errors: usize,
    /// Errors where gold and prediction both belong to the given lemma set.
    pub set_errors: usize,
    pub set_fraction: f64,
    /// Gold lemmas that are mispredicted exactly once.
    pub single_error_lemmas: usize,
    /// Share of all errors made on those lemmas.
    pub single_error_lemma_fraction: f64,
    /// Errors whose (gold, prediction) pair occurs only once.
    pub singleton_errors: usize,
    pub singleton_error_fraction: f64,
}

pub fn error_concentration<G: AsRef<str>, P: AsRef<str>>(
    gold: &[G],
    pred: &[P],
    lemma_set: &BTreeSet<String>,
) -> Result<ErrorConcentration, EvalError> {
    check_aligned(gold, pred)?;
    let mut by_lemma: HashMap<&str, usize> = HashMap::new();
    let mut by_pair: HashMap<(&str, &str), usize> = HashMap::new();
    let mut set_errors = 0;
    let mut total = 0;
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g == p {
            continue;
        }
        total += 1;
        *by_lemma.entry(g).or_default() += 1;
        *by_pair.entry((g, p)).or_default() += 1;
        if lemma_set.contains(g) && lemma_set.contains(p) {
            set_errors += 1;
        }
    }
    let single_error_lemmas = by_lemma.values().filter(|&&c| c == 1).count();
    let singleton_errors = by_pair.values().filter(|&&c| c == 1).count();
    let frac = |x: usize| if total == 0 { 0.0 } else { x as f64 / total as f64 };
    Ok(ErrorConcentration {
        total_errors: total,
        set_errors,
        set_fraction: frac(set_errors),
        single_error_lemmas,
        single_error_lemma_fraction: frac(single_error_lemmas),
        singleton_errors,
        singleton_error_fraction: frac(singleton_errors),
    })
}

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{RunRecord, RunStatus, SweepError};
use crate::evaluation::{Metric, Subset};

/// Which metrics take part in rank-sum selection and which one breaks ties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingPolicy {
    /// Metric names to leave out; a trailing `*` excludes a prefix.
    pub excluded: Vec<String>,
    /// Higher value wins a rank-sum tie.
    pub tie_break_metric: String,
}

impl RankingPolicy {
    /// Unknown-target metrics excluded; ties go to the task's target metric
    /// over all tokens.
    pub fn for_target(target: Metric) -> Self {
        RankingPolicy {
            excluded: vec![format!("{}_*", Subset::UnknownTarget.name())],
            tie_break_metric: format!("{}_{}", Subset::All.name(), target.name()),
        }
    }

    pub fn excludes(&self, metric: &str) -> bool {
        self.excluded.iter().any(|e| match e.strip_suffix('*') {
            Some(prefix) => metric.starts_with(prefix),
            None => metric == e,
        })
    }
}

impl Default for RankingPolicy {
    fn default() -> Self {
        RankingPolicy::for_target(Metric::Accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub selected: usize,
    /// Metrics that were ranked.
    pub metrics: Vec<String>,
    /// `(run id, rank sum)` for every successful run, best first.
    pub rank_sums: Vec<(usize, f64)>,
}

/// Descending fractional ranks: rank 1 is the highest value and tied values
/// share the mean of the ranks they span.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Picks the successful run with the lowest sum of per-metric ranks. Ties go
/// to the higher tie-break metric, then to the lower run id. A metric a run
/// did not report ranks it last.
pub fn rank_models(log: &[RunRecord], policy: &RankingPolicy) -> Result<Ranking, SweepError> {
    let runs: Vec<&RunRecord> = log.iter().filter(|r| r.status == RunStatus::Ok).collect();
    if runs.is_empty() {
        return Err(SweepError::NoSuccessfulRuns);
    }
    let metrics: Vec<String> = runs
        .iter()
        .flat_map(|r| r.scores.keys())
        .filter(|m| !policy.excludes(m))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if metrics.is_empty() {
        return Err(SweepError::NoMetrics);
    }
    let mut sums = vec![0.0; runs.len()];
    for metric in &metrics {
        let values: Vec<f64> = runs
            .iter()
            .map(|r| match r.scores.get(metric) {
                Some(v) if !v.is_nan() => *v,
                _ => f64::NEG_INFINITY,
            })
            .collect();
        for (sum, rank) in sums.iter_mut().zip(fractional_ranks(&values)) {
            *sum += rank;
        }
    }
    let tie = |r: &RunRecord| r.scores.get(&policy.tie_break_metric).copied().unwrap_or(f64::NEG_INFINITY);
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| {
        sums[a]
            .partial_cmp(&sums[b])
            .unwrap_or(Ordering::Equal)
            .then_with(|| tie(runs[b]).partial_cmp(&tie(runs[a])).unwrap_or(Ordering::Equal))
            .then_with(|| runs[a].run_id.cmp(&runs[b].run_id))
    });
    Ok(Ranking {
        selected: runs[order[0]].run_id,
        metrics,
        rank_sums: order.iter().map(|&i| (runs[i].run_id, sums[i])).collect(),
    })
}

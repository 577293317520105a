//! Hyperparameter grids, repeated seeded runs with a resumable log, and
//! rank-sum model selection.

mod rank;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{classify_tokens, score};
use crate::preprocess::SplitSet;
use crate::tagger::{parse_kv, save_model, train_with_observer, TaggerError, TaskId, TrainConfig};

pub use rank::{rank_models, RankingPolicy, Ranking};

pub const CEMB_SIZES: [usize; 4] = [100, 150, 200, 300];
pub const CEMB_LAYERS: [usize; 2] = [1, 2];
pub const HIDDEN_SIZES: [usize; 5] = [150, 200, 250, 300, 350];
/// Extra hidden size tried for lemmatisation only.
pub const LEMMA_EXTRA_HIDDEN: usize = 170;
pub const MIN_RUNS_PER_CONFIG: usize = 5;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("the grid is empty")]
    EmptyGrid,
    #[error("override `{0}` has no values")]
    EmptyOverride(String),
    #[error("invalid override: {0}")]
    InvalidOverride(String),
    #[error("at least {MIN_RUNS_PER_CONFIG} runs per configuration are required, got {0}")]
    TooFewRuns(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sweep log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("sweep log entry for configuration {config_index} does not match the grid")]
    GridMismatch { config_index: usize },
    #[error("no successful run to rank")]
    NoSuccessfulRuns,
    #[error("the ranking policy excludes every metric")]
    NoMetrics,
    #[error(transparent)]
    Tagger(#[from] TaggerError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SweepError + '_ {
    move |source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Grid sets plus shared settings applied to every configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridOverrides {
    pub cemb_sizes: Option<Vec<usize>>,
    pub cemb_layers: Option<Vec<usize>>,
    pub hidden_sizes: Option<Vec<usize>>,
    /// Other `TrainConfig` keys, e.g. `max_epochs`.
    pub settings: BTreeMap<String, String>,
}

impl GridOverrides {
    /// Parses `key=value` lines. `cemb_sizes`, `cemb_layers` and
    /// `hidden_sizes` take comma-separated lists; any other key is a
    /// training setting.
    pub fn parse(text: &str) -> Result<Self, SweepError> {
        let map = parse_kv(text).map_err(|e| SweepError::InvalidOverride(e.to_string()))?;
        let mut out = GridOverrides::default();
        for (key, value) in map {
            let list = || -> Result<Vec<usize>, SweepError> {
                let values: Vec<usize> = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| {
                        v.parse()
                            .map_err(|_| SweepError::InvalidOverride(format!("{key}: `{v}` is not a size")))
                    })
                    .collect::<Result<_, _>>()?;
                if values.is_empty() {
                    return Err(SweepError::EmptyOverride(key.clone()));
                }
                Ok(values)
            };
            match key.as_str() {
                "cemb_sizes" => out.cemb_sizes = Some(list()?),
                "cemb_layers" => out.cemb_layers = Some(list()?),
                "hidden_sizes" => out.hidden_sizes = Some(list()?),
                _ => {
                    out.settings.insert(key, value);
                }
            }
        }
        Ok(out)
    }
}

/// Every combination of character-embedding size, encoder depth and context
/// size, in that nesting order, with the shared hyperparameters.
pub fn generate_grid(task: TaskId, overrides: &GridOverrides) -> Result<Vec<TrainConfig>, SweepError> {
    let pick = |name: &str, o: &Option<Vec<usize>>, default: Vec<usize>| match o {
        Some(v) if v.is_empty() => Err(SweepError::EmptyOverride(name.to_string())),
        Some(v) => Ok(v.clone()),
        None => Ok(default),
    };
    let mut default_hidden = HIDDEN_SIZES.to_vec();
    if task == TaskId::Lemma {
        default_hidden.push(LEMMA_EXTRA_HIDDEN);
        default_hidden.sort_unstable();
    }
    let cembs = pick("cemb_sizes", &overrides.cemb_sizes, CEMB_SIZES.to_vec())?;
    let layers = pick("cemb_layers", &overrides.cemb_layers, CEMB_LAYERS.to_vec())?;
    let hiddens = pick("hidden_sizes", &overrides.hidden_sizes, default_hidden)?;

    let mut configs = Vec::new();
    for &cemb in &cembs {
        for &layer in &layers {
            for &hidden in &hiddens {
                let mut c = TrainConfig::new(task, cemb, layer, hidden);
                for (k, v) in &overrides.settings {
                    if k == "task" {
                        return Err(SweepError::InvalidOverride("the task cannot be overridden".into()));
                    }
                    c.set(k, v)?;
                }
                c.validate()?;
                configs.push(c);
            }
        }
    }
    Ok(configs)
}

/// Seed of one run, derived from the base seed and its grid coordinates.
pub fn derive_seed(base: u64, config_index: usize, run_index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ config_index as u64) ^ run_index as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One line of the sweep log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub config_index: usize,
    pub run_index: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Dev scores keyed `subset_metric`.
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<String>,
}

/// What a trainer reports for one successful run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub scores: BTreeMap<String, f64>,
    pub model_path: Option<String>,
}

/// Identity of one run handed to the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunJob {
    pub run_id: usize,
    pub config_index: usize,
    pub run_index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub runs_per_config: usize,
    pub base_seed: u64,
    /// Runs trained concurrently.
    pub workers: usize,
    /// Stop after this many new runs; the rest is left for a resume.
    pub max_new_runs: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            runs_per_config: MIN_RUNS_PER_CONFIG,
            base_seed: 0,
            workers: 1,
            max_new_runs: None,
        }
    }
}

/// Reads a sweep log. A truncated final line (an interrupted append) is
/// ignored; any other unreadable line is an error.
pub fn read_log(path: &Path) -> Result<Vec<RunRecord>, SweepError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() && !complete => break,
            Err(e) => {
                return Err(SweepError::CorruptLog {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn rewrite_log(path: &Path, rows: &[RunRecord]) -> Result<(), SweepError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("record serialises"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Trains every configuration `runs_per_config` times, appending one JSON
/// line per run to `log_path`. Runs already in the log are skipped, so an
/// interrupted sweep continues where it stopped. A trainer error marks the
/// run failed and the sweep goes on. Returns the full log.
pub fn run_sweep<T>(
    grid: &[TrainConfig],
    options: &SweepOptions,
    log_path: &Path,
    trainer: T,
) -> Result<Vec<RunRecord>, SweepError>
where
    T: Fn(&TrainConfig, &RunJob) -> Result<RunOutput, String> + Sync,
{
    if grid.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    if options.runs_per_config < MIN_RUNS_PER_CONFIG {
        return Err(SweepError::TooFewRuns(options.runs_per_config));
    }
    let mut log = read_log(log_path)?;
    let on_disk = fs::read_to_string(log_path).unwrap_or_default();
    if !on_disk.is_empty() && !on_disk.ends_with('\n') {
        rewrite_log(log_path, &log)?;
    }
    let mut done = BTreeSet::new();
    for r in &log {
        if grid.get(r.config_index).is_none_or(|c| {
            let mut c = c.clone();
            c.seed = r.seed;
            c != r.config
        }) {
            return Err(SweepError::GridMismatch {
                config_index: r.config_index,
            });
        }
        done.insert((r.config_index, r.run_index));
    }

    let mut pending: Vec<RunJob> = Vec::new();
    for config_index in 0..grid.len() {
        for run_index in 0..options.runs_per_config {
            if !done.contains(&(config_index, run_index)) {
                pending.push(RunJob {
                    run_id: config_index * options.runs_per_config + run_index,
                    config_index,
                    run_index,
                    seed: derive_seed(options.base_seed, config_index, run_index),
                });
            }
        }
    }
    if let Some(max) = options.max_new_runs {
        pending.truncate(max);
    }

    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(log_path)
        .map_err(io_err(log_path))?;
    let run_one = |job: &RunJob| -> RunRecord {
        let mut config = grid[job.config_index].clone();
        config.seed = job.seed;
        let outcome = trainer(&config, job);
        let (status, error, output) = match outcome {
            Ok(o) => (RunStatus::Ok, None, o),
            Err(e) => (RunStatus::Failed, Some(e), RunOutput::default()),
        };
        RunRecord {
            run_id: job.run_id,
            config_index: job.config_index,
            run_index: job.run_index,
            seed: job.seed,
            config,
            status,
            error,
            scores: output.scores,
            model_path: output.model_path,
        }
    };
    for chunk in pending.chunks(options.workers.max(1)) {
        let records: Vec<RunRecord> = if chunk.len() == 1 {
            vec![run_one(&chunk[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|job| s.spawn(|| run_one(job))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("sweep worker panicked"))
                    .collect()
            })
        };
        for record in records {
            let mut line = serde_json::to_string(&record).expect("record serialises");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io_err(log_path))?;
            file.flush().map_err(io_err(log_path))?;
            log.push(record);
        }
    }
    Ok(log)
}

/// A trainer for [`run_sweep`] that trains on `splits.train`, scores the dev
/// split per token class and, when `model_dir` is given, saves each model as
/// `run_<id>.htgm`.
pub fn neural_trainer<'a>(
    splits: &'a SplitSet,
    model_dir: Option<&'a Path>,
) -> impl Fn(&TrainConfig, &RunJob) -> Result<RunOutput, String> + Sync + 'a {
    let dev: Vec<_> = splits.dev.iter().filter(|s| !s.is_empty()).cloned().collect();
    let classes = classify_tokens(&splits.train, &dev);
    move |config, job| {
        let model = train_with_observer(config, &splits.train, &dev, |_| {}).map_err(|e| e.to_string())?;
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for sentence in &dev {
            for t in &sentence.tokens {
                gold.push(config.task.gold_label(t).map_err(|e| e.to_string())?);
            }
            pred.extend(model.predict_task(&sentence.forms()).map_err(|e| e.to_string())?);
        }
        let table = score(&gold, &pred, &classes).map_err(|e| e.to_string())?;
        let model_path = match model_dir {
            Some(dir) => {
                let path = dir.join(format!("run_{}.htgm", job.run_id));
                save_model(&model, &path).map_err(|e| e.to_string())?;
                Some(path.display().to_string())
            }
            None => None,
        };
        Ok(RunOutput {
            scores: table.flatten(),
            model_path,
        })
    }
}

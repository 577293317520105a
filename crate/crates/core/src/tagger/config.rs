use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TaggerError;
use crate::corpus::{AnnotatedToken, MorphCategory};
use crate::evaluation::Metric;
use crate::preprocess::{split_morph, DEFAULT_NOISE_PROBABILITY};

/// One separately trained prediction task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TaskId {
    Lemma,
    Pos,
    Morph(MorphCategory),
}

impl TaskId {
    pub const ALL: [TaskId; 9] = [
        TaskId::Lemma,
        TaskId::Pos,
        TaskId::Morph(MorphCategory::Cas),
        TaskId::Morph(MorphCategory::Degre),
        TaskId::Morph(MorphCategory::Genre),
        TaskId::Morph(MorphCategory::Mode),
        TaskId::Morph(MorphCategory::Nomb),
        TaskId::Morph(MorphCategory::Pers),
        TaskId::Morph(MorphCategory::Temps),
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Lemma => "LEMMA",
            TaskId::Pos => "POS",
            TaskId::Morph(c) => c.name(),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            TaskId::Lemma => 0,
            TaskId::Pos => 1,
            TaskId::Morph(c) => 2 + c.index() as u8,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<TaskId> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn is_generative(self) -> bool {
        self == TaskId::Lemma
    }

    /// The gold value this task learns to predict.
    pub fn gold_label(self, token: &AnnotatedToken) -> Result<String, TaggerError> {
        Ok(match self {
            TaskId::Lemma => token.lemma.clone(),
            TaskId::Pos => token.pos.clone(),
            TaskId::Morph(c) => split_morph(&token.morph)?.get(c).to_string(),
        })
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = TaggerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|t| t.name() == upper)
            .ok_or_else(|| TaggerError::InvalidConfig(format!("unknown task `{s}`")))
    }
}

impl From<TaskId> for String {
    fn from(t: TaskId) -> String {
        t.name().to_string()
    }
}

impl TryFrom<String> for TaskId {
    type Error = TaggerError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

pub const DEFAULT_DROPOUT: f64 = 0.32;
pub const DEFAULT_LEARNING_RATE: f64 = 0.0049;
pub const DEFAULT_LR_PATIENCE: usize = 2;
pub const DEFAULT_EARLY_STOP_PATIENCE: usize = 5;
pub const DEFAULT_LR_DECAY: f64 = 0.6;
pub const DEFAULT_MAX_EPOCHS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskId,
    /// Character embedding width.
    pub cemb_size: usize,
    /// Depth of the character encoder (1 or 2).
    pub cemb_layers: usize,
    /// Width of the sentence context encoder.
    pub hidden_size: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    /// Epochs without dev improvement before the learning rate decays.
    pub lr_patience: usize,
    pub lr_decay: f64,
    /// Epochs without dev improvement before training stops.
    pub early_stop_patience: usize,
    pub target_metric: Metric,
    pub max_epochs: usize,
    pub seed: u64,
    pub noise_probability: f64,
    pub batch_size: usize,
}

impl TrainConfig {
    /// Shared defaults with the given sizes; precision is tracked for
    /// lemmatisation and accuracy for everything else.
    pub fn new(task: TaskId, cemb_size: usize, cemb_layers: usize, hidden_size: usize) -> Self {
        TrainConfig {
            task,
            cemb_size,
            cemb_layers,
            hidden_size,
            dropout: DEFAULT_DROPOUT,
            learning_rate: DEFAULT_LEARNING_RATE,
            lr_patience: DEFAULT_LR_PATIENCE,
            lr_decay: DEFAULT_LR_DECAY,
            early_stop_patience: DEFAULT_EARLY_STOP_PATIENCE,
            target_metric: if task == TaskId::Lemma {
                Metric::Precision
            } else {
                Metric::Accuracy
            },
            max_epochs: DEFAULT_MAX_EPOCHS,
            seed: 0,
            noise_probability: DEFAULT_NOISE_PROBABILITY,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    /// Best configuration per task found by the reference sweep on Old
    /// French.
    pub fn recommended(task: TaskId) -> Self {
        use MorphCategory::*;
        let (layers, cemb, hidden) = match task {
            TaskId::Lemma => (2, 300, 150),
            TaskId::Pos => (2, 200, 350),
            TaskId::Morph(Cas) => (2, 150, 150),
            TaskId::Morph(Degre) => (2, 200, 250),
            TaskId::Morph(Genre) => (2, 200, 250),
            TaskId::Morph(Mode) => (2, 150, 200),
            TaskId::Morph(Nomb) => (1, 200, 250),
            TaskId::Morph(Pers) => (2, 150, 350),
            TaskId::Morph(Temps) => (2, 200, 350),
        };
        Self::new(task, cemb, layers, hidden)
    }

    pub fn validate(&self) -> Result<(), TaggerError> {
        let bad = |msg: String| Err(TaggerError::InvalidConfig(msg));
        if !(1..=2).contains(&self.cemb_layers) {
            return bad(format!("cemb_layers must be 1 or 2, got {}", self.cemb_layers));
        }
        if self.cemb_size == 0 || self.hidden_size == 0 || self.batch_size == 0 {
            return bad("sizes must be positive".into());
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return bad("patiences must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.noise_probability) {
            return bad(format!("noise_probability must be in [0, 1], got {}", self.noise_probability));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]".into());
        }
        Ok(())
    }

    /// Flat `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("task", self.task.to_string()),
            ("cemb_size", self.cemb_size.to_string()),
            ("cemb_layers", self.cemb_layers.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("dropout", self.dropout.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("lr_patience", self.lr_patience.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("early_stop_patience", self.early_stop_patience.to_string()),
            ("target_metric", self.target_metric.name().to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("noise_probability", self.noise_probability.to_string()),
            ("batch_size", self.batch_size.to_string()),
        ]
    }

    /// Parses `key=value` lines. `task` is required unless a default task is
    /// given; missing sizes fall back to the recommended configuration.
    pub fn from_kv(text: &str, default_task: Option<TaskId>) -> Result<Self, TaggerError> {
        let map = parse_kv(text)?;
        let task = match map.get("task") {
            Some(t) => t.parse()?,
            None => default_task
                .ok_or_else(|| TaggerError::InvalidConfig("missing `task`".into()))?,
        };
        let mut config = TrainConfig::recommended(task);
        for (key, value) in &map {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TaggerError> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, TaggerError> {
            value
                .trim()
                .parse()
                .map_err(|_| TaggerError::InvalidConfig(format!("bad value for {key}: `{value}`")))
        }
        match key {
            "task" => self.task = value.parse()?,
            "cemb_size" => self.cemb_size = num(key, value)?,
            "cemb_layers" => self.cemb_layers = num(key, value)?,
            "hidden_size" => self.hidden_size = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "lr_patience" => self.lr_patience = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "early_stop_patience" => self.early_stop_patience = num(key, value)?,
            "target_metric" => {
                self.target_metric = Metric::parse(value.trim()).ok_or_else(|| {
                    TaggerError::InvalidConfig(format!("unknown metric `{value}`"))
                })?
            }
            "max_epochs" => self.max_epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "noise_probability" => self.noise_probability = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            other => return Err(TaggerError::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, TaggerError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            TaggerError::InvalidConfig(format!("line {}: expected key=value", i + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

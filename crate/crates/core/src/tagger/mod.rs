//! Per-task neural taggers: one lemma decoder and one classifier per POS or
//! morphological category, each trained separately.

mod config;
mod model;
mod network;
mod train;
mod vocab;

use std::path::PathBuf;

use thiserror::Error;

use crate::preprocess::PreprocessError;

pub use config::{
    parse_kv, TaskId, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_DROPOUT, DEFAULT_EARLY_STOP_PATIENCE,
    DEFAULT_LEARNING_RATE, DEFAULT_LR_DECAY, DEFAULT_LR_PATIENCE, DEFAULT_MAX_EPOCHS,
};
pub use model::{
    model_file_name, model_from_bytes, model_to_bytes,
    load_model, save_model, ModelSet, PredictedAnnotations, TokenPrediction, TrainedModel,
    MODEL_VERSION,
};
pub use network::{Dims, Dropout, Network, OutputKind, Target};
pub use train::{train, train_with_observer, EpochRecord, PlateauTracker, StepOutcome};
pub use vocab::{build_vocab, Index, Vocabularies, BOS, EOS, PAD, UNK};

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("cannot predict an empty sentence")]
    EmptySentence,
    #[error("model is for task {found}, expected {expected}")]
    TaskMismatch { expected: TaskId, found: TaskId },
    #[error("corrupt model file: {0}")]
    Format(String),
    #[error("unsupported model file version {found}")]
    VersionMismatch { found: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Morph(#[from] PreprocessError),
}

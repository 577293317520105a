//! Lemmatisation, POS and morphology tagging for historical languages:
//! corpus handling, preprocessing, per-task neural taggers, hyperparameter
//! sweeps and evaluation reports.

pub mod corpus;
pub mod evaluation;
pub mod nn;
pub mod preprocess;
pub mod tagger;
pub mod sweep;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::train::{network_dims, EpochRecord};
use super::vocab::{Index, Vocabularies};
use super::{TaggerError, TaskId, TrainConfig};
use crate::corpus::{AnnotatedToken, Document, MorphCategory, Sentence, EMPTY};
use crate::nn::{ParamStore, Tensor};
use crate::preprocess::{join_morph, MorphVector};

pub const MODEL_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"HTGM";
pub const MODEL_EXTENSION: &str = "htgm";

/// A trained single-task model. Prediction never mutates it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub vocab: Vocabularies,
    pub params: ParamStore<f32>,
    pub log: Vec<EpochRecord>,
    pub(crate) network: Network,
}

impl TrainedModel {
    pub(crate) fn from_parts(
        config: TrainConfig,
        vocab: Vocabularies,
        network: Network,
        params: ParamStore<f32>,
        log: Vec<EpochRecord>,
    ) -> Self {
        TrainedModel {
            config,
            vocab,
            params,
            log,
            network,
        }
    }

    pub fn task(&self) -> TaskId {
        self.config.task
    }

    /// The label set of a classifier, `None` for the lemma decoder.
    pub fn labels(&self) -> Option<&Index> {
        self.vocab.labels.as_ref()
    }

    /// One predicted value per form for this model's task.
    pub fn predict_task<S: AsRef<str>>(&self, forms: &[S]) -> Result<Vec<String>, TaggerError> {
        decode_values(self, forms)
    }

    /// Predictions for one sentence with only this model's column filled.
    pub fn predict_sentence<S: AsRef<str>>(
        &self,
        forms: &[S],
    ) -> Result<PredictedAnnotations, TaggerError> {
        let values = self.predict_task(forms)?;
        let mut out = PredictedAnnotations::empty(forms);
        out.fill(self.task(), values);
        Ok(out)
    }
}

pub(crate) fn decode_values<S: AsRef<str>>(
    model: &TrainedModel,
    forms: &[S],
) -> Result<Vec<String>, TaggerError> {
    if forms.is_empty() {
        return Err(TaggerError::EmptySentence);
    }
    let words: Vec<Vec<usize>> = forms
        .iter()
        .map(|f| {
            let ids = model.vocab.chars.encode_chars(f.as_ref());
            if ids.is_empty() {
                vec![super::vocab::UNK]
            } else {
                ids
            }
        })
        .collect();
    Ok(match (&model.vocab.labels, &model.vocab.lemma_chars) {
        (Some(labels), _) => model
            .network
            .predict_labels(&model.params, &words)
            .into_iter()
            .map(|i| labels.item(i).to_string())
            .collect(),
        (None, Some(chars)) => model
            .network
            .predict_lemmas(&model.params, &words)
            .into_iter()
            .map(|ids| ids.into_iter().map(|i| chars.item(i)).collect())
            .collect(),
        (None, None) => unreachable!("vocabulary without outputs"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPrediction {
    pub form: String,
    pub lemma: Option<String>,
    pub pos: Option<String>,
    pub morph: BTreeMap<MorphCategory, String>,
}

impl TokenPrediction {
    /// Composite morph string from the per-category predictions.
    pub fn composite_morph(&self) -> String {
        let mut v = MorphVector::default();
        for (cat, value) in &self.morph {
            v.set(*cat, value.clone());
        }
        join_morph(&v)
    }

    pub fn to_token(&self) -> AnnotatedToken {
        AnnotatedToken::new(
            self.form.clone(),
            self.lemma.clone().unwrap_or_else(|| EMPTY.into()),
            self.pos.clone().unwrap_or_else(|| EMPTY.into()),
            if self.morph.is_empty() {
                EMPTY.to_string()
            } else {
                self.composite_morph()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedAnnotations {
    pub tokens: Vec<TokenPrediction>,
}

impl PredictedAnnotations {
    fn empty<S: AsRef<str>>(forms: &[S]) -> Self {
        PredictedAnnotations {
            tokens: forms
                .iter()
                .map(|f| TokenPrediction {
                    form: f.as_ref().to_string(),
                    lemma: None,
                    pos: None,
                    morph: BTreeMap::new(),
                })
                .collect(),
        }
    }

    fn fill(&mut self, task: TaskId, values: Vec<String>) {
        for (token, value) in self.tokens.iter_mut().zip(values) {
            match task {
                TaskId::Lemma => token.lemma = Some(value),
                TaskId::Pos => token.pos = Some(value),
                TaskId::Morph(c) => {
                    token.morph.insert(c, value);
                }
            }
        }
    }

    pub fn to_sentence(&self) -> Sentence {
        Sentence::new(self.tokens.iter().map(TokenPrediction::to_token).collect())
    }
}

// ---- binary container ----

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn index(&mut self, index: &Index) {
        self.u32(index.len() as u32);
        for (item, count) in index.entries() {
            self.str(item);
            self.u32(count);
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TaggerError> {
        if self.data.len() - self.pos < n {
            return Err(TaggerError::Format("unexpected end of file".into()));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, TaggerError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, TaggerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, TaggerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, TaggerError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| TaggerError::Format("invalid UTF-8 string".into()))
    }
    fn index(&mut self) -> Result<Index, TaggerError> {
        let n = self.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            entries.push((self.str()?, self.u32()?));
        }
        let index = Index::from_entries(entries);
        if index.len() != n {
            return Err(TaggerError::Format("duplicate vocabulary entry".into()));
        }
        Ok(index)
    }
}

/// Serialises a model. The same model always yields the same bytes.
pub fn model_to_bytes(model: &TrainedModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(MODEL_VERSION);
    w.u8(model.task().code());
    w.str(&model.config.to_kv());
    w.index(&model.vocab.chars);
    match (&model.vocab.labels, &model.vocab.lemma_chars) {
        (Some(labels), _) => {
            w.u8(0);
            w.index(labels);
        }
        (None, Some(chars)) => {
            w.u8(1);
            w.index(chars);
        }
        (None, None) => unreachable!("vocabulary without outputs"),
    }
    w.u32(model.log.len() as u32);
    for r in &model.log {
        w.u32(r.epoch as u32);
        w.f64(r.loss);
        w.f64(r.dev_score);
        w.f64(r.learning_rate);
        w.u8(r.improved as u8);
    }
    w.u32(model.params.len() as u32);
    for (name, t) in model.params.iter() {
        w.str(name);
        w.u32(t.rows as u32);
        w.u32(t.cols as u32);
        for v in &t.data {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

/// Parses a model; with `expected` set, a model for another task is an
/// error.
pub fn model_from_bytes(bytes: &[u8], expected: Option<TaskId>) -> Result<TrainedModel, TaggerError> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
        return Err(TaggerError::Format("not a model file".into()));
    }
    let mut r = Reader { data: bytes, pos: 4 };
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(TaggerError::VersionMismatch { found: version });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(TaggerError::Format("checksum mismatch (truncated or corrupt)".into()));
    }
    let mut r = Reader { data: body, pos: r.pos };
    let code = r.u8()?;
    let task = TaskId::from_code(code).ok_or_else(|| TaggerError::Format(format!("unknown task code {code}")))?;
    if let Some(expected) = expected {
        if expected != task {
            return Err(TaggerError::TaskMismatch { expected, found: task });
        }
    }
    let config = TrainConfig::from_kv(&r.str()?, None)?;
    if config.task != task {
        return Err(TaggerError::Format("task code and config disagree".into()));
    }
    let chars = r.index()?;
    let vocab = match r.u8()? {
        0 => Vocabularies {
            chars,
            labels: Some(r.index()?),
            lemma_chars: None,
        },
        1 => Vocabularies {
            chars,
            labels: None,
            lemma_chars: Some(r.index()?),
        },
        k => return Err(TaggerError::Format(format!("unknown output kind {k}"))),
    };
    if task.is_generative() != vocab.lemma_chars.is_some() {
        return Err(TaggerError::Format("output vocabulary does not fit the task".into()));
    }
    let n_log = r.u32()? as usize;
    let mut log = Vec::with_capacity(n_log.min(1 << 16));
    for _ in 0..n_log {
        log.push(EpochRecord {
            epoch: r.u32()? as usize,
            loss: r.f64()?,
            dev_score: r.f64()?,
            learning_rate: r.f64()?,
            improved: r.u8()? != 0,
        });
    }

    let mut params = ParamStore::<f32>::new();
    let network = Network::build(network_dims(&config, &vocab), &mut params, &mut ChaCha8Rng::seed_from_u64(0));
    let n_params = r.u32()? as usize;
    if n_params != params.len() {
        return Err(TaggerError::Format(format!(
            "expected {} parameter arrays, found {n_params}",
            params.len()
        )));
    }
    let expected_shapes: Vec<(String, usize, usize)> = params
        .iter()
        .map(|(n, t)| (n.to_string(), t.rows, t.cols))
        .collect();
    for ((name, rows, cols), slot) in expected_shapes.into_iter().zip(params.tensors_mut()) {
        let found = r.str()?;
        let (fr, fc) = (r.u32()? as usize, r.u32()? as usize);
        if found != name || fr != rows || fc != cols {
            return Err(TaggerError::Format(format!(
                "parameter {found} ({fr}x{fc}) where {name} ({rows}x{cols}) was expected"
            )));
        }
        let raw = r.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *slot = Tensor { rows, cols, data };
    }
    if r.pos != body.len() {
        return Err(TaggerError::Format("trailing bytes".into()));
    }
    Ok(TrainedModel::from_parts(config, vocab, network, params, log))
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<(), TaggerError> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(model)).map_err(|source| TaggerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>, expected: Option<TaskId>) -> Result<TrainedModel, TaggerError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TaggerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_bytes(&bytes, expected)
}

/// Conventional file name of a task's model inside a model directory.
pub fn model_file_name(task: TaskId) -> String {
    format!("{}.{MODEL_EXTENSION}", task.name().to_ascii_lowercase())
}

/// The models of several tasks applied together.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    pub models: BTreeMap<TaskId, TrainedModel>,
}

impl ModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: TrainedModel) {
        self.models.insert(model.task(), model);
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Loads every `<task>.htgm` file found in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TaggerError> {
        let dir = dir.as_ref();
        let mut set = ModelSet::new();
        for task in TaskId::ALL {
            let path: PathBuf = dir.join(model_file_name(task));
            if path.is_file() {
                set.insert(load_model(&path, Some(task))?);
            }
        }
        Ok(set)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), TaggerError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| TaggerError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (task, model) in &self.models {
            save_model(model, dir.join(model_file_name(*task)))?;
        }
        Ok(())
    }

    pub fn predict_sentence<S: AsRef<str>>(
        &self,
        forms: &[S],
    ) -> Result<PredictedAnnotations, TaggerError> {
        if forms.is_empty() {
            return Err(TaggerError::EmptySentence);
        }
        let mut out = PredictedAnnotations::empty(forms);
        for (task, model) in &self.models {
            out.fill(*task, model.predict_task(forms)?);
        }
        Ok(out)
    }

    /// Tags every sentence of `doc`, keeping comments and layout.
    pub fn tag_document(&self, doc: &Document) -> Result<Document, TaggerError> {
        let mut out = doc.clone();
        for sentence in &mut out.sentences {
            if sentence.is_empty() {
                continue;
            }
            let tagged = self.predict_sentence(&sentence.forms())?.to_sentence();
            sentence.tokens = tagged.tokens;
        }
        Ok(out)
    }
}

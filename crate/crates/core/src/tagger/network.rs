//! Network layout and forward computations.
//!
//! Characters are embedded and run through a bidirectional LSTM (one or two
//! layers); the final states of both directions form the word vector. A
//! bidirectional LSTM over word vectors gives each token a context vector.
//! Classification tasks put a single linear layer on the context vector.
//! Lemmatisation decodes characters with an LSTM that starts from the
//! context vector and attends over the character encoder states.

use rand::{Rng, RngCore};

use super::vocab::{BOS, EOS, PAD, UNK};
use crate::nn::{Graph, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    /// Classifier over this many labels.
    Classes(usize),
    /// Character decoder with this output alphabet size (sentinels included).
    Lemma(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_chars: usize,
    pub cemb_size: usize,
    pub cemb_layers: usize,
    pub hidden_size: usize,
    pub output: OutputKind,
}

impl Dims {
    /// Per-direction width of the character encoder.
    pub fn char_hidden(&self) -> usize {
        self.cemb_size.div_ceil(2)
    }

    /// Per-direction width of the context encoder.
    pub fn context_half(&self) -> usize {
        self.hidden_size.div_ceil(2)
    }

    pub fn word_dim(&self) -> usize {
        2 * self.char_hidden()
    }

    pub fn context_dim(&self) -> usize {
        2 * self.context_half()
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmLayer {
    weight: ParamId,
    bias: ParamId,
    hidden: usize,
}

impl LstmLayer {
    fn build<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), 4 * hidden, input + hidden, scale, rng);
        let mut bias = Tensor::zeros(4 * hidden, 1);
        for v in &mut bias.data[hidden..2 * hidden] {
            *v = F::one();
        }
        let bias = store.push(format!("{name}.bias"), bias);
        LstmLayer {
            weight,
            bias,
            hidden,
        }
    }

    fn step<F: Real>(&self, g: &mut Graph<'_, F>, input: Var, h: Var, c: Var) -> (Var, Var) {
        let x = g.concat(&[input, h]);
        let z = g.affine(self.weight, Some(self.bias), x);
        let hc = g.lstm_cell(z, c);
        (g.slice(hc, 0, self.hidden), g.slice(hc, self.hidden, self.hidden))
    }

    /// Hidden states per position, in input order.
    fn run<F: Real>(&self, g: &mut Graph<'_, F>, inputs: &[Var], reverse: bool) -> Vec<Var> {
        let mut h = g.zeros(self.hidden);
        let mut c = g.zeros(self.hidden);
        let mut out = vec![h; inputs.len()];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..inputs.len()).rev())
        } else {
            Box::new(0..inputs.len())
        };
        for t in order {
            (h, c) = self.step(g, inputs[t], h, c);
            out[t] = h;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct BiLstm {
    forward: LstmLayer,
    backward: LstmLayer,
}

struct BiOutput {
    states: Vec<Var>,
    last_forward: Var,
    last_backward: Var,
}

impl BiLstm {
    fn build<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        BiLstm {
            forward: LstmLayer::build(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: LstmLayer::build(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    fn run<F: Real>(&self, g: &mut Graph<'_, F>, inputs: &[Var]) -> BiOutput {
        let fwd = self.forward.run(g, inputs, false);
        let bwd = self.backward.run(g, inputs, true);
        let states = fwd.iter().zip(&bwd).map(|(f, b)| g.concat(&[*f, *b])).collect();
        BiOutput {
            states,
            last_forward: fwd[fwd.len() - 1],
            last_backward: bwd[0],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Decoder {
    out_embedding: ParamId,
    init_weight: ParamId,
    init_bias: ParamId,
    key_weight: ParamId,
    query_weight: ParamId,
    query_bias: ParamId,
    score_weight: ParamId,
    cell: LstmLayer,
    out_weight: ParamId,
    out_bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
enum Head {
    Classifier { weight: ParamId, bias: ParamId },
    Decoder(Decoder),
}

/// Dropout settings for a training forward pass.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Per-sentence training targets.
pub enum Target<'a> {
    Labels(&'a [usize]),
    /// Output character ids of each lemma, without the end marker.
    Lemmas(&'a [Vec<usize>]),
}

pub struct Encoded {
    /// Top character-encoder state per character, per word.
    pub char_states: Vec<Vec<Var>>,
    pub context: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Network {
    dims: Dims,
    char_embedding: ParamId,
    char_layers: Vec<BiLstm>,
    context: BiLstm,
    head: Head,
}

fn dropout<F: Real>(g: &mut Graph<'_, F>, v: Var, d: &mut Option<&mut Dropout<'_>>) -> Var {
    match d {
        Some(d) => g.dropout(v, d.p, &mut *d.rng),
        None => v,
    }
}

fn argmax<F: Real>(values: &[F], skip: &[usize]) -> usize {
    let mut best = usize::MAX;
    for (i, v) in values.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        if best == usize::MAX || *v > values[best] {
            best = i;
        }
    }
    best
}

impl Network {
    /// Creates and initialises all parameters in `store`. The order of
    /// creation is fixed, so the same dims always produce the same names.
    pub fn build<F: Real, R: Rng + ?Sized>(
        dims: Dims,
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Self {
        let char_embedding = store.add_uniform("char_embedding", dims.n_chars, dims.cemb_size, 0.1, rng);
        let ch = dims.char_hidden();
        let char_layers = (0..dims.cemb_layers)
            .map(|l| {
                let input = if l == 0 { dims.cemb_size } else { dims.word_dim() };
                BiLstm::build(store, &format!("char_encoder.{l}"), input, ch, rng)
            })
            .collect();
        let context = BiLstm::build(store, "context", dims.word_dim(), dims.context_half(), rng);
        let linear_scale = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let head = match dims.output {
            OutputKind::Classes(n) => Head::Classifier {
                weight: store.add_uniform(
                    "classifier.weight",
                    n,
                    dims.context_dim(),
                    linear_scale(dims.context_dim()),
                    rng,
                ),
                bias: store.add_zeros("classifier.bias", n, 1),
            },
            OutputKind::Lemma(n) => {
                let hd = dims.hidden_size;
                let enc = dims.word_dim();
                Head::Decoder(Decoder {
                    out_embedding: store.add_uniform("decoder.embedding", n, dims.cemb_size, 0.1, rng),
                    init_weight: store.add_uniform(
                        "decoder.init.weight",
                        hd,
                        dims.context_dim(),
                        linear_scale(dims.context_dim()),
                        rng,
                    ),
                    init_bias: store.add_zeros("decoder.init.bias", hd, 1),
                    key_weight: store.add_uniform("attention.key", hd, enc, linear_scale(enc), rng),
                    query_weight: store.add_uniform("attention.query", hd, hd, linear_scale(hd), rng),
                    query_bias: store.add_zeros("attention.query.bias", hd, 1),
                    score_weight: store.add_uniform("attention.score", 1, hd, linear_scale(hd), rng),
                    cell: LstmLayer::build(store, "decoder.cell", dims.cemb_size + enc, hd, rng),
                    out_weight: store.add_uniform(
                        "decoder.out.weight",
                        n,
                        hd + enc,
                        linear_scale(hd + enc),
                        rng,
                    ),
                    out_bias: store.add_zeros("decoder.out.bias", n, 1),
                })
            }
        };
        Network {
            dims,
            char_embedding,
            char_layers,
            context,
            head,
        }
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn encode<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        words: &[Vec<usize>],
        mut drop: Option<&mut Dropout<'_>>,
    ) -> Encoded {
        let mut char_states = Vec::with_capacity(words.len());
        let mut word_vectors = Vec::with_capacity(words.len());
        for word in words {
            assert!(!word.is_empty(), "words must have at least one character");
            let mut inputs: Vec<Var> = word
                .iter()
                .map(|&c| {
                    let e = g.row(self.char_embedding, c);
                    dropout(g, e, &mut drop)
                })
                .collect();
            let mut last = None;
            for layer in &self.char_layers {
                let out = layer.run(g, &inputs);
                last = Some((out.last_forward, out.last_backward));
                inputs = out.states;
            }
            let (f, b) = last.expect("at least one character layer");
            let w = g.concat(&[f, b]);
            word_vectors.push(dropout(g, w, &mut drop));
            char_states.push(inputs);
        }
        let context = self
            .context
            .run(g, &word_vectors)
            .states
            .into_iter()
            .map(|c| dropout(g, c, &mut drop))
            .collect();
        Encoded {
            char_states,
            context,
        }
    }

    /// Summed cross-entropy over all predictions of one sentence and the
    /// number of predictions it covers.
    pub fn loss<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        words: &[Vec<usize>],
        target: Target<'_>,
        drop: Option<&mut Dropout<'_>>,
    ) -> (Var, usize) {
        let enc = self.encode(g, words, drop);
        let mut terms = Vec::new();
        match (&self.head, target) {
            (Head::Classifier { weight, bias }, Target::Labels(labels)) => {
                assert_eq!(labels.len(), words.len());
                for (ctx, &label) in enc.context.iter().zip(labels) {
                    let logits = g.affine(*weight, Some(*bias), *ctx);
                    terms.push(g.cross_entropy(logits, label));
                }
            }
            (Head::Decoder(d), Target::Lemmas(lemmas)) => {
                assert_eq!(lemmas.len(), words.len());
                for (i, lemma) in lemmas.iter().enumerate() {
                    let mut state = self.decoder_start(g, d, enc.context[i], &enc.char_states[i]);
                    let mut prev = BOS;
                    for &next in lemma.iter().chain(std::iter::once(&EOS)) {
                        let logits = self.decoder_step(g, d, &mut state, &enc.char_states[i], prev);
                        terms.push(g.cross_entropy(logits, next));
                        prev = next;
                    }
                }
            }
            _ => panic!("target kind does not match the network head"),
        }
        let n = terms.len();
        (g.sum(&terms), n)
    }

    fn decoder_start<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        d: &Decoder,
        context: Var,
        states: &[Var],
    ) -> DecoderState {
        let z = g.affine(d.init_weight, Some(d.init_bias), context);
        let h = g.tanh(z);
        let c = g.zeros(self.dims.hidden_size);
        let keys = states.iter().map(|s| g.affine(d.key_weight, None, *s)).collect();
        DecoderState { h, c, keys }
    }

    fn decoder_step<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        d: &Decoder,
        state: &mut DecoderState,
        states: &[Var],
        prev: usize,
    ) -> Var {
        let query = g.affine(d.query_weight, Some(d.query_bias), state.h);
        let scores: Vec<Var> = state
            .keys
            .iter()
            .map(|k| {
                let s = g.add(*k, query);
                let t = g.tanh(s);
                g.affine(d.score_weight, None, t)
            })
            .collect();
        let scores = g.concat(&scores);
        let weights = g.softmax(scores);
        let attended = g.weighted_sum(weights, states);
        let emb = g.row(d.out_embedding, prev);
        let input = g.concat(&[emb, attended]);
        let (h, c) = d.cell.step(g, input, state.h, state.c);
        state.h = h;
        state.c = c;
        let features = g.concat(&[h, attended]);
        g.affine(d.out_weight, Some(d.out_bias), features)
    }

    /// Highest scoring label per word.
    pub fn predict_labels<F: Real>(&self, params: &ParamStore<F>, words: &[Vec<usize>]) -> Vec<usize> {
        let Head::Classifier { weight, bias } = self.head else {
            panic!("predict_labels on a lemma decoder");
        };
        let mut g = Graph::new(params);
        let enc = self.encode(&mut g, words, None);
        enc.context
            .iter()
            .map(|ctx| {
                let logits = g.affine(weight, Some(bias), *ctx);
                argmax(g.value(logits), &[])
            })
            .collect()
    }

    /// Greedy character decoding, at most `2 * len + 5` characters per word.
    pub fn predict_lemmas<F: Real>(
        &self,
        params: &ParamStore<F>,
        words: &[Vec<usize>],
    ) -> Vec<Vec<usize>> {
        let Head::Decoder(d) = self.head else {
            panic!("predict_lemmas on a classifier");
        };
        let mut g = Graph::new(params);
        let enc = self.encode(&mut g, words, None);
        (0..words.len())
            .map(|i| {
                let mut state = self.decoder_start(&mut g, &d, enc.context[i], &enc.char_states[i]);
                let mut prev = BOS;
                let mut out = Vec::new();
                for _ in 0..2 * words[i].len() + 5 {
                    let logits = self.decoder_step(&mut g, &d, &mut state, &enc.char_states[i], prev);
                    let next = argmax(g.value(logits), &[PAD, UNK, BOS]);
                    if next == EOS {
                        break;
                    }
                    out.push(next);
                    prev = next;
                }
                out
            })
            .collect()
    }
}

struct DecoderState {
    h: Var,
    c: Var,
    keys: Vec<Var>,
}

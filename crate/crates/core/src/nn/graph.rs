//! Tape-based reverse-mode differentiation over vectors.
//!
//! Every node holds a dense vector value. Parameters live outside the tape
//! in a [`ParamStore`]; [`Graph::backward`] accumulates into a store of the
//! same shape.

use rand::Rng;

use super::params::{real, ParamId, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Constant,
    Param(ParamId),
    Row(ParamId, usize),
    Affine {
        weight: ParamId,
        bias: Option<ParamId>,
        input: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    /// Inverted dropout; the mask already includes the `1/(1-p)` scale.
    Dropout(Var, Vec<F>),
    /// LSTM cell nonlinearity: gate pre-activations `[i f g o]` and previous
    /// cell state to `[h c]`.
    LstmCell {
        gates: Var,
        cell: Var,
    },
    Softmax(Var),
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    /// Negative log-likelihood of `target` under softmax(logits). Stores
    /// the probabilities.
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<F>,
    },
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node<F> {
    value: Vec<F>,
    op: Op<F>,
}

pub struct Graph<'p, F: Real> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
}

/// Dot product with independent partial sums so the loop vectorises.
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    let mut lanes = [F::zero(); 8];
    let chunks = a.len() / 8 * 8;
    for (ca, cb) in a[..chunks].chunks_exact(8).zip(b[..chunks].chunks_exact(8)) {
        for k in 0..8 {
            lanes[k] += ca[k] * cb[k];
        }
    }
    let mut total = lanes.iter().fold(F::zero(), |s, v| s + *v);
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        total += *x * *y;
    }
    total
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    fn push(&mut self, value: Vec<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Vec<F>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![F::zero(); n])
    }

    /// The whole parameter tensor as a flat vector.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).data.clone();
        self.push(value, Op::Param(id))
    }

    /// One row of an embedding matrix.
    pub fn row(&mut self, id: ParamId, row: usize) -> Var {
        let value = self.params.get(id).row(row).to_vec();
        self.push(value, Op::Row(id, row))
    }

    /// `weight * input + bias`.
    pub fn affine(&mut self, weight: ParamId, bias: Option<ParamId>, input: Var) -> Var {
        let w = self.params.get(weight);
        let x = &self.nodes[input.0].value;
        assert_eq!(w.cols, x.len(), "affine shape mismatch");
        let mut out = match bias {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![F::zero(); w.rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(w.row(r), x);
        }
        self.push(
            out,
            Op::Affine {
                weight,
                bias,
                input,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        self.push(value, Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| sigmoid(*x)).collect();
        self.push(value, Op::Sigmoid(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::with_capacity(parts.iter().map(|p| self.value(*p).len()).sum());
        for p in parts {
            value.extend_from_slice(self.value(*p));
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a)[start..start + len].to_vec();
        self.push(value, Op::Slice(a, start))
    }

    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = real::<F>(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        let value = self.value(a).iter().zip(&mask).map(|(x, m)| *x * *m).collect();
        self.push(value, Op::Dropout(a, mask))
    }

    /// Returns `[h c]` for gate pre-activations `[i f g o]` and the previous
    /// cell state.
    pub fn lstm_cell(&mut self, gates: Var, cell: Var) -> Var {
        let z = self.value(gates);
        let c_prev = self.value(cell);
        let h = c_prev.len();
        assert_eq!(z.len(), 4 * h, "lstm gate size mismatch");
        let mut out = vec![F::zero(); 2 * h];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            let c = f * c_prev[k] + i * g;
            out[h + k] = c;
            out[k] = o * c.tanh();
        }
        self.push(out, Op::LstmCell { gates, cell })
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = self.value(weights);
        assert_eq!(w.len(), items.len());
        let dim = self.value(items[0]).len();
        let mut value = vec![F::zero(); dim];
        for (wi, item) in w.iter().zip(items) {
            for (o, x) in value.iter_mut().zip(self.value(*item)) {
                *o += *wi * *x;
            }
        }
        self.push(
            value,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let probs = softmax(self.value(logits));
        let loss = -(probs[target].max(F::min_positive_value())).ln();
        self.push(
            vec![loss],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        )
    }

    pub fn sum(&mut self, items: &[Var]) -> Var {
        let mut total = F::zero();
        for v in items {
            total += self.scalar(*v);
        }
        self.push(vec![total], Op::Sum(items.to_vec()))
    }

    /// Backpropagates `scale * d(output)/d(params)` into `grads`, which must
    /// have the shapes of the parameter store.
    pub fn backward(&self, output: Var, scale: F, grads: &mut ParamStore<F>) {
        let mut adj: Vec<Vec<F>> = (0..=output.0).map(|_| Vec::new()).collect();
        adj[output.0] = vec![scale; self.nodes[output.0].value.len()];

        fn acc<F: Real>(adj: &mut [Vec<F>], v: Var, len: usize) -> &mut Vec<F> {
            let slot = &mut adj[v.0];
            if slot.is_empty() {
                *slot = vec![F::zero(); len];
            }
            slot
        }

        for idx in (0..=output.0).rev() {
            if adj[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (d, gi) in grads.get_mut(*id).data.iter_mut().zip(&g) {
                        *d += *gi;
                    }
                }
                Op::Row(id, row) => {
                    let t = grads.get_mut(*id);
                    let cols = t.cols;
                    for (d, gi) in t.data[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *d += *gi;
                    }
                }
                Op::Affine {
                    weight,
                    bias,
                    input,
                } => {
                    let x = &self.nodes[input.0].value;
                    if let Some(b) = bias {
                        for (d, gi) in grads.get_mut(*b).data.iter_mut().zip(&g) {
                            *d += *gi;
                        }
                    }
                    let gw = grads.get_mut(*weight);
                    let cols = gw.cols;
                    for (r, gi) in g.iter().enumerate() {
                        if gi.is_zero() {
                            continue;
                        }
                        for (d, xv) in gw.data[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                            *d += *gi * *xv;
                        }
                    }
                    let w = self.params.get(*weight);
                    let gx = acc(&mut adj, *input, x.len());
                    for (r, gi) in g.iter().enumerate() {
                        if gi.is_zero() {
                            continue;
                        }
                        for (d, wv) in gx.iter_mut().zip(w.row(r)) {
                            *d += *gi * *wv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let t = acc(&mut adj, *v, g.len());
                        for (d, gi) in t.iter_mut().zip(&g) {
                            *d += *gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<F> = g.iter().zip(bv).map(|(x, y)| *x * *y).collect();
                    let gb: Vec<F> = g.iter().zip(av).map(|(x, y)| *x * *y).collect();
                    for (d, v) in acc(&mut adj, *a, g.len()).iter_mut().zip(ga) {
                        *d += v;
                    }
                    for (d, v) in acc(&mut adj, *b, g.len()).iter_mut().zip(gb) {
                        *d += v;
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let t = acc(&mut adj, *a, g.len());
                    for ((d, gi), yv) in t.iter_mut().zip(&g).zip(y) {
                        *d += *gi * (F::one() - *yv * *yv);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let t = acc(&mut adj, *a, g.len());
                    for ((d, gi), yv) in t.iter_mut().zip(&g).zip(y) {
                        *d += *gi * *yv * (F::one() - *yv);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let t = acc(&mut adj, *p, len);
                        for (d, gi) in t.iter_mut().zip(&g[offset..offset + len]) {
                            *d += *gi;
                        }
                        offset += len;
                    }
                }
                Op::Slice(a, start) => {
                    let len = self.nodes[a.0].value.len();
                    let t = acc(&mut adj, *a, len);
                    for (d, gi) in t[*start..start + g.len()].iter_mut().zip(&g) {
                        *d += *gi;
                    }
                }
                Op::Dropout(a, mask) => {
                    let t = acc(&mut adj, *a, g.len());
                    for ((d, gi), m) in t.iter_mut().zip(&g).zip(mask) {
                        *d += *gi * *m;
                    }
                }
                Op::LstmCell { gates, cell } => {
                    let z = &self.nodes[gates.0].value;
                    let c_prev = &self.nodes[cell.0].value;
                    let h = c_prev.len();
                    let mut gz = vec![F::zero(); 4 * h];
                    let mut gc = vec![F::zero(); h];
                    for k in 0..h {
                        let i = sigmoid(z[k]);
                        let f = sigmoid(z[h + k]);
                        let gg = z[2 * h + k].tanh();
                        let o = sigmoid(z[3 * h + k]);
                        let c = node.value[h + k];
                        let tc = c.tanh();
                        let dh = g[k];
                        let dc = g[h + k] + dh * o * (F::one() - tc * tc);
                        let d_o = dh * tc;
                        let d_i = dc * gg;
                        let d_g = dc * i;
                        let d_f = dc * c_prev[k];
                        gc[k] = dc * f;
                        gz[k] = d_i * i * (F::one() - i);
                        gz[h + k] = d_f * f * (F::one() - f);
                        gz[2 * h + k] = d_g * (F::one() - gg * gg);
                        gz[3 * h + k] = d_o * o * (F::one() - o);
                    }
                    for (d, v) in acc(&mut adj, *gates, 4 * h).iter_mut().zip(gz) {
                        *d += v;
                    }
                    for (d, v) in acc(&mut adj, *cell, h).iter_mut().zip(gc) {
                        *d += v;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: F = g.iter().zip(y).fold(F::zero(), |s, (gi, yi)| s + *gi * *yi);
                    let t = acc(&mut adj, *a, g.len());
                    for ((d, gi), yi) in t.iter_mut().zip(&g).zip(y) {
                        *d += *yi * (*gi - dot);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.nodes[weights.0].value.clone();
                    let mut gw = vec![F::zero(); items.len()];
                    for (j, item) in items.iter().enumerate() {
                        let x = &self.nodes[item.0].value;
                        gw[j] = g.iter().zip(x).fold(F::zero(), |s, (gi, xi)| s + *gi * *xi);
                        let t = acc(&mut adj, *item, x.len());
                        for (d, gi) in t.iter_mut().zip(&g) {
                            *d += w[j] * *gi;
                        }
                    }
                    for (d, v) in acc(&mut adj, *weights, items.len()).iter_mut().zip(gw) {
                        *d += v;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let t = acc(&mut adj, *logits, probs.len());
                    for (k, (d, p)) in t.iter_mut().zip(probs).enumerate() {
                        let indicator = if k == *target { F::one() } else { F::zero() };
                        *d += g[0] * (*p - indicator);
                    }
                }
                Op::Sum(items) => {
                    for v in items {
                        acc(&mut adj, *v, 1)[0] += g[0];
                    }
                }
            }
        }
    }
}

pub fn softmax<F: Real>(x: &[F]) -> Vec<F> {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = x.iter().map(|v| (*v - max).exp()).collect();
    let total = exps.iter().copied().fold(F::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / total).collect()
}

//! Wengert-list reverse-mode differentiation over small dense f64 buffers.
//!
//! Every operation appends a node holding its forward value. [`Tape::gradients`]
//! replays the list backwards; [`Tape::backward`] additionally accumulates the
//! parameter gradients into a [`ParamStore`].

use super::tensor::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    AddN(Vec<Var>),
    Linear { w: Var, b: Option<Var>, x: Var },
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    Dot(Var, Var),
    Norm(Var),
    LogSoftmax(Var),
    MulScalar { x: Var, s: Var },
    AttentionPool {
        query: Var,
        keys: Vec<Var>,
        values: Vec<Var>,
        heads: usize,
        weights: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::AddN(..) => "add_n",
            Op::Linear { .. } => "linear",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Square(..) => "square",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::Dot(..) => "dot",
            Op::Norm(..) => "norm",
            Op::LogSoftmax(..) => "log_softmax",
            Op::MulScalar { .. } => "mul_scalar",
            Op::AttentionPool { .. } => "attention_pool",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
}

/// Gradients of one scalar with respect to every node of a tape, stored
/// back to back.
#[derive(Debug, Clone)]
pub struct Gradients {
    data: Vec<f64>,
    offsets: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.slice(v).to_vec()
    }

    fn slice(&self, v: Var) -> &[f64] {
        &self.data[self.offsets[v.0]..self.offsets[v.0 + 1]]
    }
}

/// Write side of the reverse pass: gradient slots of the nodes before the
/// one being propagated.
struct Sink<'a> {
    data: &'a mut [f64],
    offsets: &'a [usize],
    touched: &'a mut [bool],
}

impl Sink<'_> {
    fn slot(&mut self, v: Var) -> &mut [f64] {
        self.touched[v.0] = true;
        &mut self.data[self.offsets[v.0]..self.offsets[v.0 + 1]]
    }

    fn acc(&mut self, v: Var, f: impl Fn(usize) -> f64) {
        for (k, s) in self.slot(v).iter_mut().enumerate() {
            *s += f(k);
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// tanh through one `exp`; libm's version goes through `expm1` and is
/// several times slower. Absolute error stays near machine epsilon.
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op });
        Var(self.nodes.len() - 1)
    }

    fn vec(&mut self, value: Vec<f64>, op: Op) -> Var {
        let n = value.len();
        self.push(value, n, 1, op)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let node = &self.nodes[v.0];
        assert_eq!(node.value.len(), 1, "scalar() on a node of length {}", node.value.len());
        node.value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// A vector leaf. Gradients are still computed for it, which is how input
    /// sensitivities are obtained.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.vec(value, Op::Leaf)
    }

    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.vec(vec![value], Op::Leaf)
    }

    /// Copy of `v` that carries no gradient back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.leaf(value)
    }

    /// Registers a parameter tensor (once per tape) and returns its node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.params.len() <= id.index() {
            self.params.resize(id.index() + 1, None);
        }
        if let Some(v) = self.params[id.index()] {
            return v;
        }
        let t = store.tensor(id);
        let (rows, cols) = (t.rows(), t.cols());
        let v = self.push(t.values().to_vec(), rows, cols, Op::Param(id));
        self.params[id.index()] = Some(v);
        v
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(x.len(), y.len(), "{}: length mismatch {} vs {}", op.name(), x.len(), y.len());
        let value = x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect();
        self.vec(value, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.iter().map(|&p| f(p)).collect();
        self.vec(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |p, q| p / q, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |p| p * c, Op::Scale(a, c))
    }

    /// `a + c` elementwise for a constant vector `c` (or a scalar broadcast
    /// when `c` has length one).
    pub fn offset(&mut self, a: Var, c: &[f64]) -> Var {
        let x = &self.nodes[a.0].value;
        let value: Vec<f64> = if c.len() == 1 {
            x.iter().map(|&p| p + c[0]).collect()
        } else {
            assert_eq!(x.len(), c.len(), "offset: length mismatch");
            x.iter().zip(c).map(|(&p, &q)| p + q).collect()
        };
        self.vec(value, Op::Offset(a))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let n = self.dim(xs[0]);
        let mut value = vec![0.0; n];
        for &x in xs {
            let v = &self.nodes[x.0].value;
            assert_eq!(v.len(), n, "add_n: length mismatch");
            for (acc, &p) in value.iter_mut().zip(v) {
                *acc += p;
            }
        }
        self.vec(value, Op::AddN(xs.to_vec()))
    }

    /// `w · x + b` for a row-major `w` of shape `[out, in]`.
    pub fn linear(&mut self, w: Var, b: Option<Var>, x: Var) -> Var {
        let (wn, xn) = (&self.nodes[w.0], &self.nodes[x.0]);
        let (m, n) = (wn.rows, wn.cols);
        assert_eq!(xn.value.len(), n, "linear: weight is {m}x{n}, input has {}", xn.value.len());
        let mut out = match b {
            Some(b) => {
                let bv = &self.nodes[b.0].value;
                assert_eq!(bv.len(), m, "linear: bias length");
                bv.clone()
            }
            None => vec![0.0; m],
        };
        let wv = &wn.value;
        let xv = &xn.value;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv[i * n..(i + 1) * n];
            *o += dot(row, xv);
        }
        self.vec(out, Op::Linear { w, b, x })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |p| p * p, Op::Square(a))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let mut value = Vec::new();
        for &x in xs {
            value.extend_from_slice(&self.nodes[x.0].value);
        }
        self.vec(value, Op::Concat(xs.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[x.0].value[start..start + len].to_vec();
        self.vec(value, Op::Slice { x, start })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.vec(vec![s], Op::Sum(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(x.len(), y.len(), "dot: length mismatch");
        let s = x.iter().zip(y).map(|(p, q)| p * q).sum();
        self.vec(vec![s], Op::Dot(a, b))
    }

    /// Euclidean norm. The gradient at the origin is taken as zero.
    pub fn norm(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().map(|p| p * p).sum::<f64>().sqrt();
        self.vec(vec![s], Op::Norm(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.iter().map(|p| (p - max).exp()).sum::<f64>().ln();
        let value = v.iter().map(|p| p - lse).collect();
        self.vec(value, Op::LogSoftmax(x))
    }

    /// Vector `x` times scalar node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        let c = self.scalar(s);
        self.unary(x, |p| p * c, Op::MulScalar { x, s })
    }

    /// Multi-head attention of a single query over a set of key/value vectors.
    ///
    /// Each head uses a contiguous `dim / heads` slice of the query, keys and
    /// values; scores are scaled by `1/sqrt(dim / heads)` and softmax-normalized
    /// over the set. The output concatenates the per-head weighted value sums,
    /// so it is invariant to the order of `(keys[i], values[i])` pairs.
    pub fn attention_pool(&mut self, query: Var, keys: &[Var], values: &[Var], heads: usize) -> Var {
        assert!(!keys.is_empty(), "attention_pool over an empty set");
        assert_eq!(keys.len(), values.len(), "attention_pool: keys/values count");
        let d = self.dim(query);
        assert!(heads > 0 && d % heads == 0, "attention_pool: {d} not divisible by {heads} heads");
        let dh = d / heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let n = keys.len();
        let q = &self.nodes[query.0].value;
        let mut weights = vec![0.0; heads * n];
        let mut out = vec![0.0; d];
        for h in 0..heads {
            let r = h * dh..(h + 1) * dh;
            let scores: Vec<f64> = keys
                .iter()
                .map(|k| {
                    let kv = &self.nodes[k.0].value;
                    assert_eq!(kv.len(), d, "attention_pool: key width");
                    q[r.clone()].iter().zip(&kv[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * inv
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (i, e) in exps.iter().enumerate() {
                let a = e / z;
                weights[h * n + i] = a;
                let vv = &self.nodes[values[i].0].value;
                assert_eq!(vv.len(), d, "attention_pool: value width");
                for j in r.clone() {
                    out[j] += a * vv[j];
                }
            }
        }
        self.vec(
            out,
            Op::AttentionPool {
                query,
                keys: keys.to_vec(),
                values: values.to_vec(),
                heads,
                weights,
            },
        )
    }

    /// Reverse pass from a scalar `loss`. Fails if `loss` is not a scalar or
    /// if any recorded value is non-finite, naming the first offending node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        self.reverse(loss, |_| true)
    }

    fn reverse(&self, loss: Var, want: impl Fn(ParamId) -> bool) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward from a node of length {}",
                self.nodes[loss.0].value.len()
            )));
        }
        let nodes = &self.nodes[..=loss.0];
        if let Some((i, node)) = nodes.iter().enumerate().find(|(_, n)| n.value.iter().any(|p| !p.is_finite())) {
            return Err(Error::NonFinite { op: node.op.name(), node: i });
        }
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        offsets.push(0);
        for n in nodes {
            offsets.push(offsets.last().copied().unwrap_or(0) + n.value.len());
        }
        let skip: Vec<bool> = nodes.iter().map(|n| matches!(n.op, Op::Param(id) if !want(id))).collect();
        let mut data = vec![0.0; offsets[nodes.len()]];
        let mut touched = vec![false; nodes.len()];
        data[offsets[loss.0]] = 1.0;
        touched[loss.0] = true;
        for i in (0..=loss.0).rev() {
            if !touched[i] {
                continue;
            }
            let (lo, hi) = data.split_at_mut(offsets[i]);
            let g = &hi[..offsets[i + 1] - offsets[i]];
            let mut sink = Sink { data: lo, offsets: &offsets, touched: &mut touched[..i] };
            self.propagate(i, g, &mut sink, &skip);
        }
        Ok(Gradients { data, offsets })
    }

    /// Reverse pass that adds every parameter gradient into `store`.
    /// Repeated calls accumulate.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_for(loss, store, |_| true)
    }

    /// Like [`backward`](Self::backward) but only parameters accepted by
    /// `want` receive gradients; the others are treated as constants, which
    /// saves their weight-gradient work.
    pub fn backward_for(&self, loss: Var, store: &mut ParamStore, want: impl Fn(ParamId) -> bool) -> Result<()> {
        let grads = self.reverse(loss, &want)?;
        for (i, node) in self.nodes[..=loss.0].iter().enumerate() {
            if let Op::Param(id) = node.op {
                if want(id) {
                    store.accumulate_grad(id, grads.slice(Var(i)));
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], sink: &mut Sink, skip: &[bool]) {
        let node = &self.nodes[i];
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let n = g.len();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                sink.acc(*a, |k| g[k]);
                sink.acc(*b, |k| g[k]);
            }
            Op::Sub(a, b) => {
                sink.acc(*a, |k| g[k]);
                sink.acc(*b, |k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                sink.acc(*a, |k| g[k] * y[k]);
                sink.acc(*b, |k| g[k] * x[k]);
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                sink.acc(*a, |k| g[k] / y[k]);
                sink.acc(*b, |k| -g[k] * x[k] / (y[k] * y[k]));
            }
            Op::Scale(a, c) => sink.acc(*a, |k| g[k] * c),
            Op::Offset(a) => sink.acc(*a, |k| g[k]),
            Op::AddN(xs) => {
                for &x in xs {
                    sink.acc(x, |k| g[k]);
                }
            }
            Op::Linear { w, b, x } => {
                let wn = &self.nodes[w.0];
                let cols = wn.cols;
                let (wv, xv) = (&wn.value, val(*x));
                if !skip[w.0] {
                    let slot = sink.slot(*w);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            let row = &mut slot[r * cols..(r + 1) * cols];
                            for (s, &p) in row.iter_mut().zip(xv) {
                                *s += gr * p;
                            }
                        }
                    }
                }
                if !skip[x.0] {
                    let slot = sink.slot(*x);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            let row = &wv[r * cols..(r + 1) * cols];
                            for (s, &p) in slot.iter_mut().zip(row) {
                                *s += gr * p;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    sink.acc(*b, |k| g[k]);
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                sink.acc(*a, |k| g[k] * (1.0 - y[k] * y[k]));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                sink.acc(*a, |k| g[k] * y[k] * (1.0 - y[k]));
            }
            Op::Softplus(a) => {
                let x = val(*a);
                sink.acc(*a, |k| g[k] * sigmoid(x[k]));
            }
            Op::Exp(a) => {
                let y = &node.value;
                sink.acc(*a, |k| g[k] * y[k]);
            }
            Op::Ln(a) => {
                let x = val(*a);
                sink.acc(*a, |k| g[k] / x[k]);
            }
            Op::Square(a) => {
                let x = val(*a);
                sink.acc(*a, |k| 2.0 * g[k] * x[k]);
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let m = self.nodes[x.0].value.len();
                    sink.acc(x, |k| g[off + k]);
                    off += m;
                }
            }
            Op::Slice { x, start } => {
                for (s, &gk) in sink.slot(*x)[*start..*start + n].iter_mut().zip(g) {
                    *s += gk;
                }
            }
            Op::Sum(x) => {
                sink.acc(*x, |_| g[0]);
            }
            Op::Dot(a, b) => {
                let (x, y) = (val(*a), val(*b));
                sink.acc(*a, |k| g[0] * y[k]);
                sink.acc(*b, |k| g[0] * x[k]);
            }
            Op::Norm(x) => {
                let xv = val(*x);
                let r = node.value[0];
                if r > 0.0 {
                    sink.acc(*x, |k| g[0] * xv[k] / r);
                }
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let gs: f64 = g.iter().sum();
                sink.acc(*x, |k| g[k] - y[k].exp() * gs);
            }
            Op::MulScalar { x, s } => {
                let xv = val(*x);
                let c = self.nodes[s.0].value[0];
                sink.acc(*x, |k| g[k] * c);
                let gs: f64 = g.iter().zip(xv).map(|(p, q)| p * q).sum();
                sink.acc(*s, |_| gs);
            }
            Op::AttentionPool { query, keys, values, heads, weights } => {
                let d = n;
                let dh = d / heads;
                let inv = 1.0 / (dh as f64).sqrt();
                let m = keys.len();
                let q = val(*query).to_vec();
                let mut gq = vec![0.0; d];
                for h in 0..*heads {
                    let r = h * dh..(h + 1) * dh;
                    let a = &weights[h * m..(h + 1) * m];
                    let ga: Vec<f64> = values
                        .iter()
                        .map(|v| {
                            let vv = val(*v);
                            r.clone().map(|j| g[j] * vv[j]).sum::<f64>()
                        })
                        .collect();
                    let mean: f64 = a.iter().zip(&ga).map(|(p, q)| p * q).sum();
                    for i in 0..m {
                        let gs = a[i] * (ga[i] - mean) * inv;
                        let kv = val(keys[i]).to_vec();
                        for j in r.clone() {
                            gq[j] += gs * kv[j];
                        }
                        let ai = a[i];
                        let rr = r.clone();
                        sink.acc(keys[i], |k| if rr.contains(&k) { gs * q[k] } else { 0.0 });
                        let rr = r.clone();
                        sink.acc(values[i], |k| if rr.contains(&k) { ai * g[k] } else { 0.0 });
                    }
                }
                sink.acc(*query, |k| gq[k]);
            }
        }
    }
}

/// Dot product with split accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += p[k] * q[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.scalar_leaf(3.0);
        let y = t.mul(x, x);
        let g = t.gradients(y).unwrap();
        assert_eq!(g.wrt(x), vec![6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.scalar_leaf(3.0);
        let c = t.scalar_leaf(5.0);
        let g = t.gradients(c).unwrap();
        assert_eq!(g.wrt(x), vec![0.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, 2.0]);
        assert!(matches!(t.gradients(x), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_names_first_offending_op() {
        let mut t = Tape::new();
        let x = t.scalar_leaf(-1.0);
        let y = t.ln(x);
        let z = t.scale(y, 2.0);
        match t.gradients(z) {
            Err(Error::NonFinite { op, node }) => {
                assert_eq!(op, "ln");
                assert_eq!(node, 1);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn norm_gradient_at_origin_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(vec![0.0, 0.0]);
        let r = t.norm(x);
        assert_eq!(t.scalar(r), 0.0);
        assert_eq!(t.gradients(r).unwrap().wrt(x), vec![0.0, 0.0]);
    }

    #[test]
    fn tanh_matches_libm() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01;
            assert!((tanh(x) - x.tanh()).abs() < 4e-16, "{x}");
        }
        assert_eq!(tanh(1e3), 1.0);
        assert_eq!(tanh(-1e3), -1.0);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}


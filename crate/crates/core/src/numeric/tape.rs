//! Reverse-mode differentiation over vector-valued nodes.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every operation applied
//! to its [`Var`]s. [`Tape::backward`] replays the record in reverse and
//! accumulates parameter gradients into a [`Gradients`] store.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::ops;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors. Biases and vectors are stored as `n x 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

/// Gradient accumulator, one optional dense buffer per parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Gradient for `id`, or `None` when nothing reached it.
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, with untouched parameters reported as zeros.
    pub fn get_or_zeros(&self, id: ParamId, store: &ParamStore) -> Matrix {
        self.get(id).cloned().unwrap_or_else(|| {
            let (r, c) = store.get(id).shape();
            Matrix::zeros(r, c)
        })
    }

    pub fn entry(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Matrix {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn touched(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn clear(&mut self) {
        self.grads.clear();
    }
}

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Row(ParamId, usize),
    Affine {
        w: ParamId,
        x: usize,
        b: Option<ParamId>,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Scale(usize, Vec<f64>),
    ScalarMul(usize, f64),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Dot(usize, usize),
    Sum(usize),
    SoftmaxCrossEntropy {
        logits: usize,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

pub struct Tape<'p> {
    id: u64,
    params: &'p ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            params,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage("variable was not recorded on this tape".into()));
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(Op::Constant, values)
    }

    /// Whole parameter tensor, flattened, as a traced leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).data().to_vec();
        self.push(Op::Param(id), value)
    }

    /// One row of a parameter matrix, e.g. an embedding lookup.
    pub fn row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let m = self.params.get(id);
        if row >= m.rows() {
            return Err(Error::domain(format!(
                "row {row} out of range for {} with {} rows",
                self.params.name(id),
                m.rows()
            )));
        }
        let value = m.row(row).to_vec();
        Ok(self.push(Op::Row(id, row), value))
    }

    /// `W x + b` with `W` and `b` taken from the parameter store.
    pub fn affine(&mut self, w: ParamId, x: Var, b: Option<ParamId>) -> Result<Var> {
        let xi = self.idx(x)?;
        let wm = self.params.get(w);
        let xv = &self.nodes[xi].value;
        let value = match b {
            Some(b) => wm.affine(xv, self.params.get(b).data())?,
            None => wm.matvec(xv)?,
        };
        Ok(self.push(Op::Affine { w, x: xi, b }, value))
    }

    fn binary_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (la, lb) = (self.nodes[a].value.len(), self.nodes[b].value.len());
        if la != lb {
            return Err(Error::shape(op, format!("len {la}"), format!("len {lb}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.binary_shape("add", ai, bi)?;
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(ai, bi), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.binary_shape("mul", ai, bi)?;
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&self.nodes[bi].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul(ai, bi), value))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = ops::sigmoid_vec(&self.nodes[ai].value);
        Ok(self.push(Op::Sigmoid(ai), value))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = ops::tanh_vec(&self.nodes[ai].value);
        Ok(self.push(Op::Tanh(ai), value))
    }

    /// Elementwise product with a constant vector (dropout masks).
    pub fn scale(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let ai = self.idx(a)?;
        if factors.len() != self.nodes[ai].value.len() {
            return Err(Error::shape(
                "scale",
                format!("len {}", self.nodes[ai].value.len()),
                format!("factors {}", factors.len()),
            ));
        }
        let value = self.nodes[ai]
            .value
            .iter()
            .zip(&factors)
            .map(|(x, f)| x * f)
            .collect();
        Ok(self.push(Op::Scale(ai, factors), value))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.iter().map(|x| x * c).collect();
        Ok(self.push(Op::ScalarMul(ai, c), value))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let idxs = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let slices: Vec<&[f64]> = idxs.iter().map(|&i| &self.nodes[i].value[..]).collect();
        let value = ops::concat(&slices);
        Ok(self.push(Op::Concat(idxs), value))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ai = self.idx(a)?;
        let n = self.nodes[ai].value.len();
        if start + len > n {
            return Err(Error::shape(
                "slice",
                format!("len {n}"),
                format!("range {start}..{}", start + len),
            ));
        }
        let value = self.nodes[ai].value[start..start + len].to_vec();
        Ok(self.push(Op::Slice(ai, start), value))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.binary_shape("dot", ai, bi)?;
        let value = vec![ops::dot(&self.nodes[ai].value, &self.nodes[bi].value)];
        Ok(self.push(Op::Dot(ai, bi), value))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = vec![self.nodes[ai].value.iter().sum()];
        Ok(self.push(Op::Sum(ai), value))
    }

    /// `-log softmax(logits)[label - 1]`, fused for a stable gradient.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let li = self.idx(logits)?;
        let probs = ops::softmax(&self.nodes[li].value)?;
        let loss = ops::cross_entropy(&probs, label)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits: li,
                label,
                probs,
            },
            vec![loss],
        ))
    }

    /// Reverse pass from a scalar node. A tape can be replayed once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let mut grads = Gradients::new();
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but accumulates into an existing store.
    pub fn backward_into(&mut self, loss: Var, grads: &mut Gradients) -> Result<()> {
        let li = self.idx(loss)?;
        if self.consumed {
            return Err(Error::Usage(
                "backward already ran on this tape; record a new one".into(),
            ));
        }
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got length {}",
                self.nodes[li].value.len()
            )));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        adj[li] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
            adj[i].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=li).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let shape = self.params.get(*id).shape();
                    ops::axpy(1.0, &g, grads.entry(*id, shape).data_mut());
                }
                Op::Row(id, row) => {
                    let shape = self.params.get(*id).shape();
                    ops::axpy(1.0, &g, grads.entry(*id, shape).row_mut(*row));
                }
                Op::Affine { w, x, b } => {
                    let wm = self.params.get(*w);
                    let xv = &self.nodes[*x].value;
                    ops::outer_acc(&g, xv, grads.entry(*w, wm.shape()).data_mut());
                    if let Some(b) = b {
                        let shape = self.params.get(*b).shape();
                        ops::axpy(1.0, &g, grads.entry(*b, shape).data_mut());
                    }
                    let dx = acc(&mut adj, *x, xv.len());
                    ops::matvec_t_acc(wm.data(), wm.cols(), &g, dx);
                }
                Op::Add(a, b) => {
                    ops::axpy(1.0, &g, acc(&mut adj, *a, g.len()));
                    ops::axpy(1.0, &g, acc(&mut adj, *b, g.len()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let da: Vec<f64> = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(g, x)| g * x).collect();
                    ops::axpy(1.0, &da, acc(&mut adj, *a, g.len()));
                    ops::axpy(1.0, &db, acc(&mut adj, *b, g.len()));
                }
                Op::Sigmoid(a) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    ops::axpy(1.0, &d, acc(&mut adj, *a, g.len()));
                }
                Op::Tanh(a) => {
                    let d: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    ops::axpy(1.0, &d, acc(&mut adj, *a, g.len()));
                }
                Op::Scale(a, f) => {
                    let d: Vec<f64> = g.iter().zip(f).map(|(g, f)| g * f).collect();
                    ops::axpy(1.0, &d, acc(&mut adj, *a, g.len()));
                }
                Op::ScalarMul(a, c) => {
                    ops::axpy(*c, &g, acc(&mut adj, *a, g.len()));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        ops::axpy(1.0, &g[off..off + n], acc(&mut adj, p, n));
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.nodes[*a].value.len();
                    let da = acc(&mut adj, *a, n);
                    ops::axpy(1.0, &g, &mut da[*start..*start + g.len()]);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let n = av.len();
                    ops::axpy(g[0], bv, acc(&mut adj, *a, n));
                    ops::axpy(g[0], av, acc(&mut adj, *b, n));
                }
                Op::Sum(a) => {
                    let n = self.nodes[*a].value.len();
                    acc(&mut adj, *a, n).iter_mut().for_each(|x| *x += g[0]);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let dl = acc(&mut adj, *logits, probs.len());
                    for (k, p) in probs.iter().enumerate() {
                        let onehot = if k + 1 == *label { 1.0 } else { 0.0 };
                        dl[k] += g[0] * (p - onehot);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap());
        let unused = store.add("unused", Matrix::column(vec![1.0, 2.0]));
        let mut tape = Tape::new(&store);
        let x = tape.constant(vec![3.0, 4.0, 5.0]);
        let y = tape.affine(w, x, None).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0, 5.0]);
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused, &store).data(), &[0.0, 0.0]);
    }

    #[test]
    fn second_backward_is_a_usage_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::column(vec![1.0, 2.0]));
        let mut tape = Tape::new(&store);
        let p = tape.param(w);
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_on_foreign_var_is_a_usage_error() {
        let store = ParamStore::new();
        let mut a = Tape::new(&store);
        let mut b = Tape::new(&store);
        let v = a.constant(vec![1.0]);
        assert!(matches!(b.backward(v), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_needs_scalar() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let v = t.constant(vec![1.0, 2.0]);
        assert!(matches!(t.backward(v), Err(Error::Usage(_))));
    }

    #[test]
    fn row_lookup_gradient_is_sparse() {
        let mut store = ParamStore::new();
        let e = store.add("emb", Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 3.0]]).unwrap());
        let mut t = Tape::new(&store);
        let r = t.row(e, 1).unwrap();
        let d = t.dot(r, r).unwrap();
        let g = t.backward(d).unwrap();
        assert_eq!(g.get(e).unwrap().data(), &[0.0, 0.0, 4.0, 6.0]);
        let mut t = Tape::new(&store);
        assert!(t.row(e, 2).is_err());
    }
}

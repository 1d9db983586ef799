//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes in topological
//! order. Parameters are borrowed from a [`ParamStore`] rather than copied,
//! and embedding lookups through [`OpKind::Gather`] produce row-sparse
//! gradients so large vocabularies do not allocate a dense gradient per
//! instance.
//!
//! Reductions that run across the option axis (softmax normalisers and
//! [`OpKind::WeightedSum`]) sum their terms in sorted order. That makes their
//! forward values exactly invariant under permutation of the terms, which the
//! model relies on for option permutation equivariance.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds accepted by [`Graph::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    /// `[m,k] x [k] -> [m]`
    MatVec,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// Elementwise quotient.
    Div,
    /// Concatenates vectors and scalars into one vector.
    Concat,
    /// Stacks equal-length vectors as the rows of a matrix.
    Stack,
    /// Contiguous sub-vector.
    Slice { start: usize, len: usize },
    /// Inner product of two vectors, yielding a scalar.
    Dot,
    /// `scalar * tensor`
    Scale,
    /// Multiplies by a fixed constant.
    ScaleConst(f64),
    Sigmoid,
    Tanh,
    /// Softmax of a vector, or of every row of a matrix.
    Softmax,
    Transpose,
    /// Sum of all entries, yielding a scalar.
    Sum,
    SelectRow(usize),
    /// Row lookup `[v,d] -> [ids.len(), d]`; rows equal to `pad` receive no gradient.
    Gather { ids: Vec<usize>, pad: Option<usize> },
    /// `sum_i w_i * S[i,:]` for `S: [n,l]`, `w: [n]`.
    WeightedSum,
    /// `-log softmax(scores)[gold]`.
    CrossEntropy { gold: usize },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::MatVec => "matvec",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise-mul",
            OpKind::Div => "div",
            OpKind::Concat => "concat",
            OpKind::Stack => "stack",
            OpKind::Slice { .. } => "slice",
            OpKind::Dot => "dot",
            OpKind::Scale => "scale",
            OpKind::ScaleConst(_) => "scale-const",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Softmax => "softmax",
            OpKind::Transpose => "transpose",
            OpKind::Sum => "sum",
            OpKind::SelectRow(_) => "select-row",
            OpKind::Gather { .. } => "gather",
            OpKind::WeightedSum => "weighted-sum",
            OpKind::CrossEntropy { .. } => "cross-entropy",
        }
    }
}

#[derive(Clone, Debug)]
enum Source {
    Leaf,
    Param(ParamId),
    Op(OpKind, Vec<Var>),
}

#[derive(Clone, Debug)]
struct Node {
    source: Source,
    shape: Vec<usize>,
    /// Empty for parameter leaves, whose values live in the store.
    value: Vec<f64>,
    requires_grad: bool,
}

/// Sum with terms in ascending order, so the result does not depend on the
/// order the terms were supplied in.
pub fn order_invariant_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Max-subtracted softmax with an order-invariant normaliser.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let mut terms = exps.clone();
    let z = order_invariant_sum(&mut terms);
    exps.into_iter().map(|e| e / z).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut terms: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    max + order_invariant_sum(&mut terms).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    /// Row-sparse gradient of a matrix parameter with `width` columns.
    Rows { width: usize, rows: BTreeMap<usize, Vec<f64>> },
}

impl ParamGrad {
    /// Adds this gradient into a dense buffer of the parameter's size.
    pub fn add_into(&self, out: &mut [f64]) {
        match self {
            ParamGrad::Dense(g) => out.iter_mut().zip(g).for_each(|(o, g)| *o += g),
            ParamGrad::Rows { width, rows } => {
                for (&r, g) in rows {
                    out[r * width..(r + 1) * width].iter_mut().zip(g).for_each(|(o, g)| *o += g);
                }
            }
        }
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.add_into(&mut out);
        out
    }

    fn values_mut(&mut self) -> Box<dyn Iterator<Item = &mut f64> + '_> {
        match self {
            ParamGrad::Dense(g) => Box::new(g.iter_mut()),
            ParamGrad::Rows { rows, .. } => Box::new(rows.values_mut().flatten()),
        }
    }

    fn values(&self) -> Box<dyn Iterator<Item = &f64> + '_> {
        match self {
            ParamGrad::Dense(g) => Box::new(g.iter()),
            ParamGrad::Rows { rows, .. } => Box::new(rows.values().flatten()),
        }
    }

    fn accumulate(&mut self, other: &ParamGrad) {
        match (&mut *self, other) {
            (ParamGrad::Dense(a), _) => other.add_into(a),
            (ParamGrad::Rows { rows, .. }, ParamGrad::Rows { rows: other_rows, .. }) => {
                for (r, g) in other_rows {
                    match rows.get_mut(r) {
                        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, g)| *a += g),
                        None => {
                            rows.insert(*r, g.clone());
                        }
                    }
                }
            }
            (ParamGrad::Rows { .. }, ParamGrad::Dense(d)) => {
                let mut dense = d.clone();
                self.add_into(&mut dense);
                *self = ParamGrad::Dense(dense);
            }
        }
    }
}

/// Result of [`Graph::backward`]: parameter gradients plus gradients of
/// free leaves created with [`Graph::variable`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    params: BTreeMap<ParamId, ParamGrad>,
    leaves: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn param(&self, id: ParamId) -> Option<&ParamGrad> {
        self.params.get(&id)
    }

    /// Dense gradient of `id`; zeros when the parameter did not participate.
    pub fn dense(&self, store: &ParamStore, id: ParamId) -> Vec<f64> {
        let len = store.get(id).numel();
        self.params.get(&id).map_or_else(|| vec![0.0; len], |g| g.to_dense(len))
    }

    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.leaves.get(&var).map(Vec::as_slice)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &ParamGrad)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Name → dense gradient for every trainable parameter in the store.
    pub fn named(&self, store: &ParamStore) -> BTreeMap<String, Vec<f64>> {
        store
            .ids()
            .filter(|&id| store.is_trainable(id))
            .map(|id| (store.name(id).to_string(), self.dense(store, id)))
            .collect()
    }

    /// Sums `other` into `self` (parameter gradients only).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.params {
            match self.params.get_mut(id) {
                Some(acc) => acc.accumulate(g),
                None => {
                    self.params.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.params.values_mut() {
            g.values_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.params.values().flat_map(|g| g.values()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// First parameter holding a non-finite gradient entry.
    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.params.iter().find(|(_, g)| g.values().any(|v| !v.is_finite())).map(|(id, _)| *id)
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut ParamGrad)> {
        self.params.iter_mut().map(|(k, v)| (*k, v))
    }
}

/// A computation graph rebuilt for every forward pass.
pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    frozen: Option<&'p dyn Fn(ParamId) -> bool>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store: Some(store), nodes: Vec::new(), param_nodes: HashMap::new(), frozen: None }
    }

    /// A graph without a parameter store; only free leaves are available.
    pub fn detached() -> Self {
        Self { store: None, nodes: Vec::new(), param_nodes: HashMap::new(), frozen: None }
    }

    /// Extra freeze predicate consulted in addition to the store's trainable flags.
    pub fn with_frozen(mut self, frozen: &'p dyn Fn(ParamId) -> bool) -> Self {
        self.frozen = Some(frozen);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn store(&self) -> Option<&'p ParamStore> {
        self.store
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.source {
            Source::Param(id) => self.store.expect("param node without store").get(id).data(),
            _ => &node.value,
        }
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NumericDomain { op: "leaf", detail: "leaf contains NaN or Inf".into() });
        }
        let shape = t.shape().to_vec();
        self.nodes.push(Node { source: Source::Leaf, shape, value: t.into_data(), requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push_leaf(t, false)
    }

    /// A free leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.push_leaf(t, true)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let store = self.store.expect("Graph::param requires a parameter store");
        let frozen = self.frozen.is_some_and(|f| f(id));
        let tensor = store.get(id);
        self.nodes.push(Node {
            source: Source::Param(id),
            shape: tensor.shape().to_vec(),
            value: Vec::new(),
            requires_grad: store.is_trainable(id) && !frozen,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    /// Applies `kind` to `inputs`, recording a node.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let (shape, value) = self.forward(&kind, inputs)?;
        if let Some(bad) = value.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericDomain {
                op: kind.name(),
                detail: format!("produced non-finite value {bad}"),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { source: Source::Op(kind, inputs.to_vec()), shape, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mismatch(&self, kind: &OpKind, inputs: &[Var]) -> Error {
        Error::Shape { op: kind.name(), shapes: inputs.iter().map(|v| self.shape(*v).to_vec()).collect() }
    }

    fn forward(&self, kind: &OpKind, inputs: &[Var]) -> Result<(Vec<usize>, Vec<f64>)> {
        let arity = match kind {
            OpKind::Concat | OpKind::Stack => None,
            OpKind::MatMul
            | OpKind::MatVec
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::Dot
            | OpKind::Scale
            | OpKind::WeightedSum => Some(2),
            _ => Some(1),
        };
        match arity {
            Some(n) if inputs.len() != n => return Err(self.mismatch(kind, inputs)),
            None if inputs.is_empty() => return Err(self.mismatch(kind, inputs)),
            _ => {}
        }
        let sh = |i: usize| self.shape(inputs[i]);
        let val = |i: usize| self.value(inputs[i]);
        let bad = || self.mismatch(kind, inputs);

        Ok(match kind {
            OpKind::MatMul => {
                let (a, b) = (sh(0), sh(1));
                if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                    return Err(bad());
                }
                let (m, k, n) = (a[0], a[1], b[1]);
                let (av, bv) = (val(0), val(1));
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let orow = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        let brow = &bv[p * n..(p + 1) * n];
                        orow.iter_mut().zip(brow).for_each(|(o, b)| *o += aip * b);
                    }
                }
                (vec![m, n], out)
            }
            OpKind::MatVec => {
                let (a, v) = (sh(0), sh(1));
                if a.len() != 2 || v.len() != 1 || a[1] != v[0] {
                    return Err(bad());
                }
                let (m, k) = (a[0], a[1]);
                let (av, vv) = (val(0), val(1));
                let out = (0..m).map(|i| av[i * k..(i + 1) * k].iter().zip(vv).map(|(a, b)| a * b).sum()).collect();
                (vec![m], out)
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                if sh(0) != sh(1) {
                    return Err(bad());
                }
                let f: fn(f64, f64) -> f64 = match kind {
                    OpKind::Add => |a, b| a + b,
                    OpKind::Sub => |a, b| a - b,
                    OpKind::Mul => |a, b| a * b,
                    _ => |a, b| a / b,
                };
                (sh(0).to_vec(), val(0).iter().zip(val(1)).map(|(a, b)| f(*a, *b)).collect())
            }
            OpKind::Concat => {
                if inputs.iter().any(|v| self.shape(*v).len() > 1) {
                    return Err(bad());
                }
                let out: Vec<f64> = inputs.iter().flat_map(|v| self.value(*v).iter().copied()).collect();
                (vec![out.len()], out)
            }
            OpKind::Stack => {
                let first = sh(0).to_vec();
                if first.len() != 1 || inputs.iter().any(|v| self.shape(*v) != first.as_slice()) {
                    return Err(bad());
                }
                let out = inputs.iter().flat_map(|v| self.value(*v).iter().copied()).collect();
                (vec![inputs.len(), first[0]], out)
            }
            OpKind::Slice { start, len } => {
                let s = sh(0);
                if s.len() != 1 || start + len > s[0] {
                    return Err(bad());
                }
                (vec![*len], val(0)[*start..start + len].to_vec())
            }
            OpKind::Dot => {
                if sh(0).len() != 1 || sh(0) != sh(1) {
                    return Err(bad());
                }
                (Vec::new(), vec![val(0).iter().zip(val(1)).map(|(a, b)| a * b).sum()])
            }
            OpKind::Scale => {
                if self.value(inputs[0]).len() != 1 || !sh(0).is_empty() {
                    return Err(bad());
                }
                let s = val(0)[0];
                (sh(1).to_vec(), val(1).iter().map(|v| s * v).collect())
            }
            OpKind::ScaleConst(c) => (sh(0).to_vec(), val(0).iter().map(|v| c * v).collect()),
            OpKind::Sigmoid => (sh(0).to_vec(), val(0).iter().map(|v| sigmoid(*v)).collect()),
            OpKind::Tanh => (sh(0).to_vec(), val(0).iter().map(|v| v.tanh()).collect()),
            OpKind::Softmax => {
                let s = sh(0);
                if s.is_empty() || s.len() > 2 || s.last() == Some(&0) {
                    return Err(bad());
                }
                let cols = *s.last().unwrap();
                let out = val(0).chunks(cols).flat_map(softmax).collect();
                (s.to_vec(), out)
            }
            OpKind::Transpose => {
                let s = sh(0);
                if s.len() != 2 {
                    return Err(bad());
                }
                let (r, c) = (s[0], s[1]);
                let v = val(0);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = v[i * c + j];
                    }
                }
                (vec![c, r], out)
            }
            OpKind::Sum => (Vec::new(), vec![val(0).iter().sum()]),
            OpKind::SelectRow(i) => {
                let s = sh(0);
                if s.len() != 2 || *i >= s[0] {
                    return Err(bad());
                }
                let c = s[1];
                (vec![c], val(0)[i * c..(i + 1) * c].to_vec())
            }
            OpKind::Gather { ids, .. } => {
                let s = sh(0);
                if s.len() != 2 {
                    return Err(bad());
                }
                let (rows, c) = (s[0], s[1]);
                if let Some(pos) = ids.iter().position(|&id| id >= rows) {
                    return Err(Error::OutOfRange(format!(
                        "gather id {} at position {pos} exceeds {rows} rows",
                        ids[pos]
                    )));
                }
                let v = val(0);
                let out = ids.iter().flat_map(|&id| v[id * c..(id + 1) * c].iter().copied()).collect();
                (vec![ids.len(), c], out)
            }
            OpKind::WeightedSum => {
                let (m, w) = (sh(0), sh(1));
                if m.len() != 2 || w.len() != 1 || m[0] != w[0] {
                    return Err(bad());
                }
                let (n, l) = (m[0], m[1]);
                let (mv, wv) = (val(0), val(1));
                let mut terms = vec![0.0; n];
                let out = (0..l)
                    .map(|j| {
                        for i in 0..n {
                            terms[i] = wv[i] * mv[i * l + j];
                        }
                        order_invariant_sum(&mut terms)
                    })
                    .collect();
                (vec![l], out)
            }
            OpKind::CrossEntropy { gold } => {
                let s = sh(0);
                if s.len() != 1 {
                    return Err(bad());
                }
                if *gold >= s[0] {
                    return Err(Error::OutOfRange(format!("gold index {gold} with {} scores", s[0])));
                }
                let v = val(0);
                (Vec::new(), vec![log_sum_exp(v) - v[*gold]])
            }
        })
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape { op: "backward", shapes: vec![self.shape(loss).to_vec()] });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut sparse: BTreeMap<ParamId, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        let mut out = Gradients::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.source {
                Source::Leaf => {
                    out.leaves.insert(Var(idx), g);
                }
                Source::Param(id) => {
                    out.params.insert(*id, ParamGrad::Dense(g));
                }
                Source::Op(kind, inputs) => {
                    self.backward_op(kind, inputs, &node.value, &g, &mut grads, &mut sparse);
                }
            }
        }

        for (id, rows) in sparse {
            let width = self.store.expect("sparse gradient without store").get(id).cols();
            let rows = ParamGrad::Rows { width, rows };
            match out.params.get_mut(&id) {
                Some(dense) => dense.accumulate(&rows),
                None => {
                    out.params.insert(id, rows);
                }
            }
        }
        Ok(out)
    }

    fn backward_op(
        &self,
        kind: &OpKind,
        inputs: &[Var],
        y: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        sparse: &mut BTreeMap<ParamId, BTreeMap<usize, Vec<f64>>>,
    ) {
        let needs = |i: usize| self.nodes[inputs[i].0].requires_grad;
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            let v = inputs[i];
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
            f(buf);
        };
        let val = |i: usize| self.value(inputs[i]);
        let sh = |i: usize| self.shape(inputs[i]);

        match kind {
            OpKind::MatMul => {
                let (m, k, n) = (sh(0)[0], sh(0)[1], sh(1)[1]);
                let (a, b) = (val(0), val(1));
                acc(0, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &b[p * n..(p + 1) * n];
                            ga[i * k + p] += g[i * n..(i + 1) * n].iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(1, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = a[i * k + p];
                            gb[p * n..(p + 1) * n].iter_mut().zip(grow).for_each(|(o, x)| *o += aip * x);
                        }
                    }
                });
            }
            OpKind::MatVec => {
                let (m, k) = (sh(0)[0], sh(0)[1]);
                let (a, v) = (val(0), val(1));
                acc(0, &mut |ga| {
                    for i in 0..m {
                        ga[i * k..(i + 1) * k].iter_mut().zip(v).for_each(|(o, x)| *o += g[i] * x);
                    }
                });
                acc(1, &mut |gv| {
                    for i in 0..m {
                        gv.iter_mut().zip(&a[i * k..(i + 1) * k]).for_each(|(o, x)| *o += g[i] * x);
                    }
                });
            }
            OpKind::Add => {
                acc(0, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                acc(1, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o += x));
            }
            OpKind::Sub => {
                acc(0, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                acc(1, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            OpKind::Mul => {
                let (a, b) = (val(0), val(1));
                acc(0, &mut |ga| ga.iter_mut().zip(g).zip(b).for_each(|((o, x), b)| *o += x * b));
                acc(1, &mut |gb| gb.iter_mut().zip(g).zip(a).for_each(|((o, x), a)| *o += x * a));
            }
            OpKind::Div => {
                let (a, b) = (val(0), val(1));
                acc(0, &mut |ga| ga.iter_mut().zip(g).zip(b).for_each(|((o, x), b)| *o += x / b));
                acc(1, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] -= g[i] * a[i] / (b[i] * b[i]);
                    }
                });
            }
            OpKind::Concat | OpKind::Stack => {
                let mut offset = 0;
                for i in 0..inputs.len() {
                    let len = self.value(inputs[i]).len();
                    let part = &g[offset..offset + len];
                    acc(i, &mut |gi| gi.iter_mut().zip(part).for_each(|(o, x)| *o += x));
                    offset += len;
                }
            }
            OpKind::Slice { start, len } => {
                acc(0, &mut |gi| gi[*start..start + len].iter_mut().zip(g).for_each(|(o, x)| *o += x));
            }
            OpKind::Dot => {
                let (a, b) = (val(0), val(1));
                acc(0, &mut |ga| ga.iter_mut().zip(b).for_each(|(o, b)| *o += g[0] * b));
                acc(1, &mut |gb| gb.iter_mut().zip(a).for_each(|(o, a)| *o += g[0] * a));
            }
            OpKind::Scale => {
                let (s, v) = (val(0)[0], val(1));
                acc(0, &mut |gs| gs[0] += g.iter().zip(v).map(|(x, v)| x * v).sum::<f64>());
                acc(1, &mut |gv| gv.iter_mut().zip(g).for_each(|(o, x)| *o += s * x));
            }
            OpKind::ScaleConst(c) => {
                acc(0, &mut |gi| gi.iter_mut().zip(g).for_each(|(o, x)| *o += c * x));
            }
            OpKind::Sigmoid => {
                acc(0, &mut |gi| gi.iter_mut().zip(g).zip(y).for_each(|((o, x), y)| *o += x * y * (1.0 - y)));
            }
            OpKind::Tanh => {
                acc(0, &mut |gi| gi.iter_mut().zip(g).zip(y).for_each(|((o, x), y)| *o += x * (1.0 - y * y)));
            }
            OpKind::Softmax => {
                let cols = *sh(0).last().unwrap();
                acc(0, &mut |gi| {
                    for ((gr, yr), outr) in g.chunks(cols).zip(y.chunks(cols)).zip(gi.chunks_mut(cols)) {
                        let inner: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            outr[j] += yr[j] * (gr[j] - inner);
                        }
                    }
                });
            }
            OpKind::Transpose => {
                let (r, c) = (sh(0)[0], sh(0)[1]);
                acc(0, &mut |gi| {
                    for i in 0..r {
                        for j in 0..c {
                            gi[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            OpKind::Sum => {
                acc(0, &mut |gi| gi.iter_mut().for_each(|o| *o += g[0]));
            }
            OpKind::SelectRow(i) => {
                let c = sh(0)[1];
                acc(0, &mut |gi| gi[i * c..(i + 1) * c].iter_mut().zip(g).for_each(|(o, x)| *o += x));
            }
            OpKind::Gather { ids, pad } => {
                if !needs(0) {
                    return;
                }
                let c = sh(0)[1];
                let rows = ids.iter().enumerate().filter(|(_, id)| Some(**id) != *pad);
                if let Source::Param(pid) = self.nodes[inputs[0].0].source {
                    let map = sparse.entry(pid).or_default();
                    for (pos, &id) in rows {
                        let part = &g[pos * c..(pos + 1) * c];
                        let row = map.entry(id).or_insert_with(|| vec![0.0; c]);
                        row.iter_mut().zip(part).for_each(|(o, x)| *o += x);
                    }
                } else {
                    let rows: Vec<_> = rows.collect();
                    acc(0, &mut |gi| {
                        for &(pos, &id) in &rows {
                            let part = &g[pos * c..(pos + 1) * c];
                            gi[id * c..(id + 1) * c].iter_mut().zip(part).for_each(|(o, x)| *o += x);
                        }
                    });
                }
            }
            OpKind::WeightedSum => {
                let (n, l) = (sh(0)[0], sh(0)[1]);
                let (m, w) = (val(0), val(1));
                acc(0, &mut |gm| {
                    for i in 0..n {
                        gm[i * l..(i + 1) * l].iter_mut().zip(g).for_each(|(o, x)| *o += w[i] * x);
                    }
                });
                acc(1, &mut |gw| {
                    for i in 0..n {
                        gw[i] += m[i * l..(i + 1) * l].iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
            OpKind::CrossEntropy { gold } => {
                let p = softmax(val(0));
                acc(0, &mut |gi| {
                    for (j, pj) in p.iter().enumerate() {
                        let target = if j == *gold { 1.0 } else { 0.0 };
                        gi[j] += g[0] * (pj - target);
                    }
                });
            }
        }
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn matvec(&mut self, a: Var, v: Var) -> Result<Var> {
        self.apply(OpKind::MatVec, &[a, v])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Div, &[a, b])
    }
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::Concat, parts)
    }
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        self.apply(OpKind::Stack, rows)
    }
    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(OpKind::Slice { start, len }, &[v])
    }
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Dot, &[a, b])
    }
    pub fn scale(&mut self, s: Var, v: Var) -> Result<Var> {
        self.apply(OpKind::Scale, &[s, v])
    }
    pub fn scale_const(&mut self, v: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::ScaleConst(c), &[v])
    }
    pub fn sigmoid(&mut self, v: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[v])
    }
    pub fn tanh(&mut self, v: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[v])
    }
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        self.apply(OpKind::Softmax, &[v])
    }
    pub fn transpose(&mut self, v: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[v])
    }
    pub fn sum(&mut self, v: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[v])
    }
    pub fn select_row(&mut self, m: Var, i: usize) -> Result<Var> {
        self.apply(OpKind::SelectRow(i), &[m])
    }
    pub fn gather(&mut self, table: Var, ids: &[usize], pad: Option<usize>) -> Result<Var> {
        self.apply(OpKind::Gather { ids: ids.to_vec(), pad }, &[table])
    }
    pub fn weighted_sum(&mut self, rows: Var, weights: Var) -> Result<Var> {
        self.apply(OpKind::WeightedSum, &[rows, weights])
    }
    pub fn cross_entropy(&mut self, scores: Var, gold: usize) -> Result<Var> {
        self.apply(OpKind::CrossEntropy { gold }, &[scores])
    }

    /// Rows of a matrix node as separate vector nodes.
    pub fn rows(&mut self, m: Var) -> Result<Vec<Var>> {
        let shape = self.shape(m);
        if shape.len() != 2 {
            return Err(Error::Shape { op: "rows", shapes: vec![shape.to_vec()] });
        }
        (0..shape[0]).map(|i| self.select_row(m, i)).collect()
    }

    /// Splits a vector node into consecutive pieces of the given lengths.
    pub fn split(&mut self, v: Var, lens: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(lens.len());
        for &len in lens {
            out.push(self.slice(v, start, len)?);
            start += len;
        }
        Ok(out)
    }
}

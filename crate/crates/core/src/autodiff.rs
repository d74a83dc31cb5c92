// SPDX-License-Identifier: Apache-2.0

//! Tape-based reverse-mode differentiation over flat `f64` vectors.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably and records every op as a
//! node. Forward values are computed eagerly. [`Graph::backward`] replays
//! the tape in reverse and accumulates parameter gradients into a reusable
//! [`Gradients`] buffer, which the caller then folds into the store with
//! [`ParamStore::accumulate`]. Embedding lookups produce per-row gradients so
//! untouched table rows never see an update.
//!
//! Frozen evaluation uses the same graph without calling `backward`; a graph
//! only reads the store, so any number of them may run concurrently.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{CdpError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{self, PROB_CLAMP};

static NEXT_GRAPH: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of a particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    graph: u32,
    idx: u32,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather { table: ParamId, row: usize },
    Affine { w: Var, b: Var, x: Var },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    LinComb(Vec<(f64, Var)>),
    Concat(Vec<Var>),
    Mean(Vec<Var>),
    Softmax(Var),
    Mix { weights: Var, parts: Vec<Var> },
    Sigmoid(Var),
    Sum(Var),
    Mse(Var, Var),
    Bce { p: Var, y: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// Empty for `Param` and `Gather`, whose values live in the store.
    value: Vec<f64>,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    id: u32,
}

/// Reusable gradient accumulator filled by [`Graph::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    dense: Vec<Vec<f64>>,
    live: Vec<bool>,
    rows: BTreeMap<(ParamId, usize), Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        for (buf, live) in self.dense.iter_mut().zip(self.live.iter_mut()) {
            if *live {
                buf.fill(0.0);
                *live = false;
            }
        }
        self.rows.clear();
    }

    fn dense_mut(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        let i = id.index();
        if self.dense.len() <= i {
            self.dense.resize_with(i + 1, Vec::new);
            self.live.resize(i + 1, false);
        }
        if self.dense[i].len() != len {
            self.dense[i] = vec![0.0; len];
        }
        self.live[i] = true;
        &mut self.dense[i]
    }

    fn row_mut(&mut self, id: ParamId, row: usize, len: usize) -> &mut [f64] {
        self.rows
            .entry((id, row))
            .or_insert_with(|| vec![0.0; len])
    }

    /// Dense gradient buffers of parameters reached by a backward pass.
    pub fn dense_buffers(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.dense
            .iter()
            .zip(&self.live)
            .enumerate()
            .filter(|(_, (_, live))| **live)
            .map(|(i, (buf, _))| (ParamId(i), buf.as_slice()))
    }

    /// Per-row gradients of embedding lookups, ordered by (table, row).
    pub fn row_buffers(&self) -> impl Iterator<Item = ((ParamId, usize), &[f64])> {
        self.rows.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn dense(&self, id: ParamId) -> Option<&[f64]> {
        let i = id.index();
        (i < self.live.len() && self.live[i]).then(|| self.dense[i].as_slice())
    }

    pub fn row(&self, id: ParamId, row: usize) -> Option<&[f64]> {
        self.rows.get(&(id, row)).map(Vec::as_slice)
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(64),
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node { op, value });
        Var { graph: self.id, idx }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.idx as usize >= self.nodes.len() {
            return Err(CdpError::Usage(
                "variable was not recorded on this graph".into(),
            ));
        }
        Ok(v.idx as usize)
    }

    /// Value of a recorded variable.
    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.idx as usize];
        match node.op {
            Op::Param(id) => self.store.get(id).value.data(),
            Op::Gather { table, row } => self.store.get(table).value.row(row),
            _ => &node.value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.value(v).len()
    }

    // -- leaves -------------------------------------------------------------

    pub fn constant(&mut self, data: Vec<f64>) -> Var {
        self.push(Op::Constant, data)
    }

    /// Copies the current value as a constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let data = self.value(v).to_vec();
        self.constant(data)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), Vec::new())
    }

    /// Row `row` of a rank-2 parameter table.
    pub fn gather(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let shape = self.store.get(table).value.shape();
        if shape.len() != 2 || row >= shape[0] {
            return Err(CdpError::Usage(format!(
                "row {row} out of range for table of shape {shape:?}"
            )));
        }
        Ok(self.push(Op::Gather { table, row }, Vec::new()))
    }

    // -- ops ----------------------------------------------------------------

    /// `W·x + b`, with `W` stored row-major as `b.len() × x.len()`.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let (m, n) = (self.dim(b), self.dim(x));
        let wl = self.dim(w);
        if let Op::Param(id) = self.nodes[w.idx as usize].op {
            let shape = self.store.get(id).value.shape();
            if shape != [m, n] {
                return Err(CdpError::dim("affine weight", &[m, n], shape));
            }
        } else if wl != m * n {
            return Err(CdpError::dim("affine weight", &[m * n], &[wl]));
        }
        let mut out = vec![0.0; m];
        tensor::affine_into(self.value(w), self.value(b), self.value(x), &mut out);
        Ok(self.push(Op::Affine { w, b, x }, out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.max(0.0)).collect();
        self.push(Op::Relu(x), out)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(CdpError::dim(what, &[va.len()], &[vb.len()]));
        }
        let out = va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect();
        let op = match what {
            "add" => Op::Add(a, b),
            "sub" => Op::Sub(a, b),
            _ => Op::Mul(a, b),
        };
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y)
    }

    /// `Σ_k c_k · v_k` with constant coefficients.
    pub fn lin_comb(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let n = terms
            .first()
            .map(|&(_, v)| self.dim(v))
            .ok_or_else(|| CdpError::Usage("empty linear combination".into()))?;
        let mut out = vec![0.0; n];
        for &(c, v) in terms {
            let val = self.value(v);
            if val.len() != n {
                return Err(CdpError::dim("linear combination term", &[n], &[val.len()]));
            }
            axpy(&mut out, c, val);
        }
        Ok(self.push(Op::LinComb(terms.to_vec()), out))
    }

    pub fn scale(&mut self, v: Var, c: f64) -> Var {
        self.lin_comb(&[(c, v)]).expect("single-term combination")
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|&p| self.dim(p)).sum();
        let mut out = Vec::with_capacity(total);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(Op::Concat(parts.to_vec()), out)
    }

    /// Arithmetic mean of equally sized vectors.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&v| self.dim(v))
            .ok_or_else(|| CdpError::Usage("mean of zero vectors".into()))?;
        let mut out = vec![0.0; n];
        for &p in parts {
            let val = self.value(p);
            if val.len() != n {
                return Err(CdpError::dim("mean operand", &[n], &[val.len()]));
            }
            for (o, v) in out.iter_mut().zip(val) {
                *o += v;
            }
        }
        let inv = 1.0 / parts.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(Op::Mean(parts.to_vec()), out))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = vec![0.0; self.dim(x)];
        tensor::softmax_into(self.value(x), &mut out);
        self.push(Op::Softmax(x), out)
    }

    /// `Σ_j weights[j] · parts[j]`.
    pub fn mix(&mut self, weights: Var, parts: &[Var]) -> Result<Var> {
        let k = self.dim(weights);
        if k != parts.len() || k == 0 {
            return Err(CdpError::dim("mix weights", &[parts.len()], &[k]));
        }
        let n = self.dim(parts[0]);
        let mut out = vec![0.0; n];
        for (j, &p) in parts.iter().enumerate() {
            let val = self.value(p);
            if val.len() != n {
                return Err(CdpError::dim("mix part", &[n], &[val.len()]));
            }
            let w = self.value(weights)[j];
            axpy(&mut out, w, val);
        }
        Ok(self.push(
            Op::Mix {
                weights,
                parts: parts.to_vec(),
            },
            out,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| tensor::sigmoid_scalar(v)).collect();
        self.push(Op::Sigmoid(x), out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(Op::Sum(x), vec![s])
    }

    /// Mean squared error, a scalar node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (a, b) = (self.value(pred), self.value(target));
        if a.len() != b.len() {
            return Err(CdpError::dim("mse operands", &[a.len()], &[b.len()]));
        }
        let l = tensor::mse_slices(a, b);
        Ok(self.push(Op::Mse(pred, target), vec![l]))
    }

    /// Binary cross-entropy of a scalar probability node against label `y`.
    pub fn bce(&mut self, p: Var, y: f64) -> Result<Var> {
        if self.dim(p) != 1 {
            return Err(CdpError::dim("bce probability", &[1], &[self.dim(p)]));
        }
        let l = tensor::bce_scalar(self.scalar(p), y);
        Ok(self.push(Op::Bce { p, y }, vec![l]))
    }

    // -- backward -----------------------------------------------------------

    /// Accumulates `d loss / d param` for every parameter reachable from the
    /// scalar `loss` into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        let top = self.check(loss)?;
        if self.dim(loss) != 1 {
            return Err(CdpError::Usage(format!(
                "backward needs a scalar loss, got length {}",
                self.dim(loss)
            )));
        }
        if !self.scalar(loss).is_finite() {
            return Err(CdpError::NonFinite("loss".into()));
        }

        let mut adj: Vec<Vec<f64>> = (0..=top).map(|_| Vec::new()).collect();
        adj[top] = vec![1.0];

        for i in (0..=top).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let buf = grads.dense_mut(*id, g.len());
                    axpy(buf, 1.0, &g);
                }
                Op::Gather { table, row } => {
                    let buf = grads.row_mut(*table, *row, g.len());
                    axpy(buf, 1.0, &g);
                }
                Op::Affine { w, b, x } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let n = xv.len();
                    // dx = Wᵀ g
                    {
                        let gx = self.slot(&mut adj, *x);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                axpy(gx, gr, &wv[r * n..(r + 1) * n]);
                            }
                        }
                    }
                    // dW = g xᵀ
                    match self.nodes[w.idx as usize].op {
                        Op::Param(id) => {
                            let buf = grads.dense_mut(id, g.len() * n);
                            outer_acc(buf, &g, xv);
                        }
                        _ => {
                            let gw = self.slot(&mut adj, *w);
                            outer_acc(gw, &g, xv);
                        }
                    }
                    self.route(&mut adj, grads, *b, &g, 1.0);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = self.slot(&mut adj, *x);
                    for ((d, &gi), &xi) in gx.iter_mut().zip(&g).zip(xv) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.route(&mut adj, grads, *a, &g, 1.0);
                    self.route(&mut adj, grads, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.route(&mut adj, grads, *a, &g, 1.0);
                    self.route(&mut adj, grads, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    self.route(&mut adj, grads, *a, &ga, 1.0);
                    self.route(&mut adj, grads, *b, &gb, 1.0);
                }
                Op::LinComb(terms) => {
                    for &(c, v) in terms {
                        self.route(&mut adj, grads, v, &g, c);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.dim(p);
                        self.route(&mut adj, grads, p, &g[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Mean(parts) => {
                    let inv = 1.0 / parts.len() as f64;
                    for &p in parts {
                        self.route(&mut adj, grads, p, &g, inv);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner = tensor::dot(&g, y);
                    let gx: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi * (gi - inner)).collect();
                    self.route(&mut adj, grads, *x, &gx, 1.0);
                }
                Op::Mix { weights, parts } => {
                    let wv = self.value(*weights);
                    let gw: Vec<f64> = parts.iter().map(|&p| tensor::dot(&g, self.value(p))).collect();
                    for (j, &p) in parts.iter().enumerate() {
                        self.route(&mut adj, grads, p, &g, wv[j]);
                    }
                    self.route(&mut adj, grads, *weights, &gw, 1.0);
                }
                Op::Sigmoid(x) => {
                    let gx: Vec<f64> = node
                        .value
                        .iter()
                        .zip(&g)
                        .map(|(s, gi)| gi * s * (1.0 - s))
                        .collect();
                    self.route(&mut adj, grads, *x, &gx, 1.0);
                }
                Op::Sum(x) => {
                    let gx = vec![g[0]; self.dim(*x)];
                    self.route(&mut adj, grads, *x, &gx, 1.0);
                }
                Op::Mse(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let k = 2.0 * g[0] / va.len() as f64;
                    let diff: Vec<f64> = va.iter().zip(vb).map(|(x, y)| k * (x - y)).collect();
                    self.route(&mut adj, grads, *a, &diff, 1.0);
                    self.route(&mut adj, grads, *b, &diff, -1.0);
                }
                Op::Bce { p, y } => {
                    let pv = self.scalar(*p);
                    let d = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pv) {
                        -y / pv + (1.0 - y) / (1.0 - pv)
                    } else {
                        0.0
                    };
                    self.route(&mut adj, grads, *p, &[g[0] * d], 1.0);
                }
            }
        }
        Ok(())
    }

    /// Adjoint buffer for a non-parameter node, allocated on first use.
    fn slot<'b>(&self, adj: &'b mut [Vec<f64>], v: Var) -> &'b mut [f64] {
        let i = v.idx as usize;
        if adj[i].is_empty() {
            adj[i] = vec![0.0; self.dim(v)];
        }
        &mut adj[i]
    }

    /// Adds `c · g` into the adjoint of `v`, writing parameter leaves straight
    /// into the gradient accumulator.
    fn route(&self, adj: &mut [Vec<f64>], grads: &mut Gradients, v: Var, g: &[f64], c: f64) {
        match self.nodes[v.idx as usize].op {
            Op::Constant => {}
            Op::Param(id) => axpy(grads.dense_mut(id, g.len()), c, g),
            Op::Gather { table, row } => axpy(grads.row_mut(table, row, g.len()), c, g),
            _ => axpy(self.slot(adj, v), c, g),
        }
    }
}

fn outer_acc(dst: &mut [f64], g: &[f64], x: &[f64]) {
    let n = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr != 0.0 {
            axpy(&mut dst[r * n..(r + 1) * n], gr, x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{ParamGroup, Parameter};
    use crate::tensor::Tensor;

    fn store_with(values: &[(&str, Vec<usize>, Vec<f64>)]) -> (ParamStore, Vec<ParamId>) {
        let mut store = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, s, d)| {
                store
                    .add(Parameter::new(
                        *n,
                        ParamGroup::Dense,
                        Tensor::new(s.clone(), d.clone()).unwrap(),
                    ))
                    .unwrap()
            })
            .collect();
        (store, ids)
    }

    #[test]
    fn sum_gives_all_ones() {
        let (store, ids) = store_with(&[("p", vec![3], vec![0.2, -1.0, 4.0])]);
        let mut g = Graph::new(&store);
        let p = g.param(ids[0]);
        let l = g.sum(p);
        let mut grads = Gradients::new();
        g.backward(l, &mut grads).unwrap();
        assert_eq!(grads.dense(ids[0]).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mse_against_zero() {
        let (store, ids) = store_with(&[("p", vec![3], vec![3.0, -1.5, 0.5])]);
        let mut g = Graph::new(&store);
        let p = g.param(ids[0]);
        let z = g.constant(vec![0.0; 3]);
        let l = g.mse(p, z).unwrap();
        let mut grads = Gradients::new();
        g.backward(l, &mut grads).unwrap();
        let expect: Vec<f64> = [3.0, -1.5, 0.5].iter().map(|v| 2.0 * v / 3.0).collect();
        assert_eq!(grads.dense(ids[0]).unwrap(), expect.as_slice());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let (mut store, ids) = store_with(&[("p", vec![2], vec![1.0, 2.0])]);
        let mut grads = Gradients::new();
        {
            let mut g = Graph::new(&store);
            let p = g.param(ids[0]);
            let l = g.sum(p);
            g.backward(l, &mut grads).unwrap();
            g.backward(l, &mut grads).unwrap();
        }
        store.accumulate(&grads);
        store.accumulate(&grads);
        assert_eq!(store.get(ids[0]).grad.data(), &[4.0, 4.0]);
    }

    #[test]
    fn foreign_variable_is_usage_error() {
        let (store, ids) = store_with(&[("p", vec![2], vec![1.0, 2.0])]);
        let mut a = Graph::new(&store);
        let pa = a.param(ids[0]);
        let la = a.sum(pa);
        let b = Graph::new(&store);
        let err = b.backward(la, &mut Gradients::new()).unwrap_err();
        assert!(matches!(err, CdpError::Usage(_)));
        // non-scalar loss
        let err = a.backward(pa, &mut Gradients::new()).unwrap_err();
        assert!(matches!(err, CdpError::Usage(_)));
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let (store, ids) = store_with(&[("p", vec![3], vec![-1.0, 0.0, 2.0])]);
        let mut g = Graph::new(&store);
        let p = g.param(ids[0]);
        let r = g.relu(p);
        let l = g.sum(r);
        let mut grads = Gradients::new();
        g.backward(l, &mut grads).unwrap();
        assert_eq!(grads.dense(ids[0]).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn affine_shape_checked() {
        let (store, ids) = store_with(&[
            ("w", vec![2, 3], vec![0.0; 6]),
            ("b", vec![2], vec![0.0; 2]),
        ]);
        let mut g = Graph::new(&store);
        let w = g.param(ids[0]);
        let b = g.param(ids[1]);
        let x = g.constant(vec![1.0, 2.0]);
        assert!(matches!(g.affine(w, b, x), Err(CdpError::Dimension { .. })));
    }
}

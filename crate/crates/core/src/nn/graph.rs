//! Tape-based reverse-mode differentiation over the small op set the
//! forecasting networks need.
//!
//! A [`Graph`] borrows a [`ParamStore`] immutably while recording, so any
//! number of graphs may evaluate the same parameters concurrently. Gradients
//! come back as a detached [`Gradients`] value that the owner of the store
//! applies afterwards.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::tensor::{matmul_at_into, matmul_bt_into};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a recorded value. Only valid for the graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Relu(usize),
    Tanh(usize),
    Concat(Vec<usize>),
    Gather(usize, Arc<[usize]>),
    ScatterAdd(usize, Arc<[usize]>),
    /// Source rows reduced by max into segments; stores the winning source row
    /// per output element.
    SegmentMax(usize, Vec<usize>),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Square(usize),
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

/// Multiply-add counts attributed to the tag active when each product ran.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopCounter {
    by_tag: BTreeMap<String, u64>,
}

impl FlopCounter {
    pub fn get(&self, tag: &str) -> u64 {
        self.by_tag.get(tag).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.by_tag.values().sum()
    }

    pub fn tags(&self) -> impl Iterator<Item = (&str, u64)> {
        self.by_tag.iter().map(|(k, v)| (k.as_str(), *v))
    }

    fn add(&mut self, tag: &str, n: u64) {
        *self.by_tag.entry(tag.to_string()).or_default() += n;
    }
}

pub const UNTAGGED: &str = "untagged";

pub struct Graph<'p> {
    id: u64,
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, usize>,
    flops: Option<FlopCounter>,
    tag: String,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            flops: None,
            tag: UNTAGGED.to_string(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn enable_flop_counting(&mut self) {
        self.flops.get_or_insert_with(FlopCounter::default);
    }

    /// Counter contents, or a config error when counting was never enabled.
    pub fn flops(&self) -> Result<&FlopCounter> {
        self.flops
            .as_ref()
            .ok_or_else(|| Error::config("flop counters are disabled for this graph"))
    }

    /// Attribute subsequent dense products to `tag`; returns the previous tag.
    pub fn set_tag(&mut self, tag: &str) -> String {
        std::mem::replace(&mut self.tag, tag.to_string())
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Traversal(
                "value was recorded on a different graph".into(),
            ));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let shape = value.shape().to_vec();
        self.nodes.push(Node {
            value: Some(value),
            shape,
            op,
            needs_grad,
        });
        Var {
            graph: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.idx];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.store.get(*id).value,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn val(&self, idx: usize) -> &Tensor {
        self.value(Var {
            graph: self.id,
            idx,
        })
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.idx].shape
    }

    /// Constant input; gradients are not propagated into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn tracked_input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&idx) = self.param_nodes.get(&id) {
            return Var {
                graph: self.id,
                idx,
            };
        }
        let shape = self.store.get(id).value.shape().to_vec();
        self.nodes.push(Node {
            value: None,
            shape,
            op: Op::Param(id),
            needs_grad: true,
        });
        let idx = self.nodes.len() - 1;
        self.param_nodes.insert(id, idx);
        Var {
            graph: self.id,
            idx,
        }
    }

    fn ng(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.val(ia).matmul(self.val(ib))?;
        let (n, k) = (self.val(ia).rows(), self.val(ia).cols());
        let m = self.val(ib).cols();
        if let Some(f) = self.flops.as_mut() {
            f.add(&self.tag, (n * k * m) as u64);
        }
        let ng = self.ng(&[ia, ib]);
        Ok(self.push(out, Op::MatMul(ia, ib), ng))
    }

    /// `x[n, m] + b[m]` broadcast across rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(b)?);
        let xv = self.val(ix);
        let bv = self.val(ib);
        let m = xv.cols();
        if bv.len() != m {
            return Err(Error::dim(format!(
                "bias of {} values for {m} columns",
                bv.len()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(m.max(1)) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.ng(&[ix, ib]);
        Ok(self.push(out, Op::AddRow(ix, ib), ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(|v| v.max(0.0));
        let ng = self.ng(&[ix]);
        Ok(self.push(out, Op::Relu(ix), ng))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(f64::tanh);
        let ng = self.ng(&[ix]);
        Ok(self.push(out, Op::Tanh(ix), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>>>()?;
        let tensors: Vec<&Tensor> = idx.iter().map(|&i| self.val(i)).collect();
        let out = Tensor::concat_cols(&tensors)?;
        let ng = self.ng(&idx);
        Ok(self.push(out, Op::Concat(idx), ng))
    }

    /// `out[i] = x[index[i]]` row-wise.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let ix = self.check(x)?;
        let xv = self.val(ix);
        let (rows, c) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(index.len() * c);
        for &r in index.iter() {
            if r >= rows {
                return Err(Error::Edge(format!("row index {r} out of range {rows}")));
            }
            data.extend_from_slice(xv.row(r));
        }
        let out = Tensor::new(vec![index.len(), c], data)?;
        let ng = self.ng(&[ix]);
        Ok(self.push(out, Op::Gather(ix, index), ng))
    }

    /// `out[index[i]] += x[i]` into `n_out` rows, summing in input order.
    pub fn scatter_add_rows(&mut self, x: Var, index: Arc<[usize]>, n_out: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let xv = self.val(ix);
        let c = xv.cols();
        if xv.rows() != index.len() {
            return Err(Error::dim(format!(
                "scatter of {} rows with {} indices",
                xv.rows(),
                index.len()
            )));
        }
        let mut out = Tensor::zeros(&[n_out, c]);
        let od = out.data_mut();
        for (i, &r) in index.iter().enumerate() {
            if r >= n_out {
                return Err(Error::Edge(format!("row index {r} out of range {n_out}")));
            }
            for (o, v) in od[r * c..(r + 1) * c].iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        let ng = self.ng(&[ix]);
        Ok(self.push(out, Op::ScatterAdd(ix, index), ng))
    }

    /// Column-wise max of the rows of `x` that share a segment id.
    /// Every segment in `0..n_out` must be non-empty.
    pub fn segment_max_rows(&mut self, x: Var, segment: &[usize], n_out: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let xv = self.val(ix);
        let c = xv.cols();
        if xv.rows() != segment.len() {
            return Err(Error::dim("segment ids must match row count"));
        }
        let mut out = vec![f64::NEG_INFINITY; n_out * c];
        let mut arg = vec![usize::MAX; n_out * c];
        for (i, &s) in segment.iter().enumerate() {
            if s >= n_out {
                return Err(Error::Index(format!("segment {s} out of range {n_out}")));
            }
            for (j, &v) in xv.row(i).iter().enumerate() {
                let o = s * c + j;
                if arg[o] == usize::MAX || v > out[o] {
                    out[o] = v;
                    arg[o] = i;
                }
            }
        }
        if arg.contains(&usize::MAX) && c > 0 {
            return Err(Error::contract("empty pooling segment"));
        }
        let out = Tensor::new(vec![n_out, c], out)?;
        let ng = self.ng(&[ix]);
        Ok(self.push(out, Op::SegmentMax(ix, arg), ng))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: fn(usize, usize) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let out = self.val(ia).zip_map(self.val(ib), f)?;
        let ng = self.ng(&[ia, ib]);
        Ok(self.push(out, op(ia, ib), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(|v| v * c);
        let ng = self.ng(&[ix]);
        Ok(self.push(out, Op::Scale(ix, c), ng))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = self.val(ix).map(|v| v * v);
        let ng = self.ng(&[ix]);
        Ok(self.push(out, Op::Square(ix), ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let out = Tensor::scalar(self.val(ix).sum());
        let ng = self.ng(&[ix]);
        Ok(self.push(out, Op::Sum(ix), ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let v = self.val(ix);
        if v.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let ng = self.ng(&[ix]);
        Ok(self.push(out, Op::Mean(ix), ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        if self.val(il).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[il].shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; il + 1];
        grads[il] = Some(Tensor::full(&self.nodes[il].shape, 1.0));

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut params = Vec::new();
        let mut inputs = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate().take(il + 1) {
            match node.op {
                Op::Param(id) => {
                    let g = grads[i]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(&node.shape));
                    params.push((id, g));
                }
                Op::Input if node.needs_grad => {
                    let g = grads[i]
                        .take()
                        .unwrap_or_else(|| Tensor::zeros(&node.shape));
                    inputs.insert(i, g);
                }
                _ => {}
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients {
            graph: self.id,
            params,
            inputs,
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.nodes[*a].needs_grad {
                    let ga = slot(grads, *a, &self.nodes[*a].shape);
                    matmul_bt_into(g.data(), bv.data(), ga.data_mut(), n, m, k);
                }
                if self.nodes[*b].needs_grad {
                    let gb = slot(grads, *b, &self.nodes[*b].shape);
                    matmul_at_into(av.data(), g.data(), gb.data_mut(), n, k, m);
                }
            }
            Op::AddRow(x, b) => {
                if self.nodes[*x].needs_grad {
                    slot(grads, *x, &self.nodes[*x].shape).add_assign(g);
                }
                if self.nodes[*b].needs_grad {
                    let m = g.cols();
                    let gb = slot(grads, *b, &self.nodes[*b].shape);
                    let gbd = gb.data_mut();
                    for row in g.data().chunks(m.max(1)) {
                        for (o, v) in gbd.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if !self.nodes[*x].needs_grad {
                    return Ok(());
                }
                let y = node.value.as_ref().expect("relu value");
                let gx = slot(grads, *x, &self.nodes[*x].shape);
                for ((o, gv), yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    if *yv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Tanh(x) => {
                if !self.nodes[*x].needs_grad {
                    return Ok(());
                }
                let y = node.value.as_ref().expect("tanh value");
                let gx = slot(grads, *x, &self.nodes[*x].shape);
                for ((o, gv), yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let width = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.val(p).cols();
                    if self.nodes[p].needs_grad {
                        let gp = slot(grads, p, &self.nodes[p].shape);
                        let gpd = gp.data_mut();
                        for r in 0..rows {
                            let src = &g.data()[r * width + offset..r * width + offset + c];
                            for (o, v) in gpd[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Gather(x, index) => {
                if !self.nodes[*x].needs_grad {
                    return Ok(());
                }
                let c = g.cols();
                let gx = slot(grads, *x, &self.nodes[*x].shape);
                let gxd = gx.data_mut();
                for (i, &r) in index.iter().enumerate() {
                    for (o, v) in gxd[r * c..(r + 1) * c].iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
            }
            Op::ScatterAdd(x, index) => {
                if !self.nodes[*x].needs_grad {
                    return Ok(());
                }
                let c = g.cols();
                let gx = slot(grads, *x, &self.nodes[*x].shape);
                let gxd = gx.data_mut();
                for (i, &r) in index.iter().enumerate() {
                    for (o, v) in gxd[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }
            Op::SegmentMax(x, arg) => {
                if !self.nodes[*x].needs_grad {
                    return Ok(());
                }
                let c = g.cols();
                let gx = slot(grads, *x, &self.nodes[*x].shape);
                let gxd = gx.data_mut();
                for (o, &src) in arg.iter().enumerate() {
                    gxd[src * c + o % c] += g.data()[o];
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if self.nodes[*a].needs_grad {
                    slot(grads, *a, &self.nodes[*a].shape).add_assign(g);
                }
                if self.nodes[*b].needs_grad {
                    let gb = slot(grads, *b, &self.nodes[*b].shape);
                    for (o, v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o += sign * v;
                    }
                }
            }
            Op::Mul(a, b) => {
                for (me, other) in [(*a, *b), (*b, *a)] {
                    if self.nodes[me].needs_grad {
                        let ov = self.val(other).clone();
                        let gm = slot(grads, me, &self.nodes[me].shape);
                        for ((o, gv), w) in gm.data_mut().iter_mut().zip(g.data()).zip(ov.data()) {
                            *o += gv * w;
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                if !self.nodes[*x].needs_grad {
                    return Ok(());
                }
                let gx = slot(grads, *x, &self.nodes[*x].shape);
                for (o, v) in gx.data_mut().iter_mut().zip(g.data()) {
                    *o += c * v;
                }
            }
            Op::Square(x) => {
                if !self.nodes[*x].needs_grad {
                    return Ok(());
                }
                let xv = self.val(*x).clone();
                let gx = slot(grads, *x, &self.nodes[*x].shape);
                for ((o, gv), v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                    *o += 2.0 * v * gv;
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                if !self.nodes[*x].needs_grad {
                    return Ok(());
                }
                let n = self.nodes[*x].shape.iter().product::<usize>();
                let scale = if matches!(node.op, Op::Mean(_)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let gv = g.data()[0] * scale;
                let gx = slot(grads, *x, &self.nodes[*x].shape);
                for o in gx.data_mut() {
                    *o += gv;
                }
            }
        }
        Ok(())
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], i: usize, shape: &[usize]) -> &'a mut Tensor {
    grads[i].get_or_insert_with(|| Tensor::zeros(shape))
}

/// Result of one backward sweep, detached from the graph's borrow.
#[derive(Debug, Clone)]
pub struct Gradients {
    graph: u64,
    params: Vec<(ParamId, Tensor)>,
    inputs: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(id, g)| (*id, g))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Gradient with respect to a tracked input recorded before the loss.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.graph != self.graph {
            return Err(Error::Traversal(
                "value was recorded on a different graph".into(),
            ));
        }
        self.inputs
            .get(&v.idx)
            .cloned()
            .ok_or_else(|| Error::Traversal("not a tracked input of this loss".into()))
    }
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad(
    f: impl Fn(&Tensor) -> Result<f64>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::config(format!(
            "finite difference step {eps} must be > 0"
        )));
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite evaluation at coordinate {i}"
            )));
        }
        out.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.tracked_input(Tensor::new(vec![1], vec![3.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constant_loss_has_zero_param_grads() {
        let mut store = ParamStore::new();
        let p = store
            .add("p", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let mut g = Graph::new(&store);
        let _pv = g.param(p);
        let c = g.input(Tensor::scalar(4.0));
        let loss = g.sum(c).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.param(p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.tracked_input(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn foreign_var_is_traversal_error() {
        let store = ParamStore::new();
        let mut g1 = Graph::new(&store);
        let mut g2 = Graph::new(&store);
        let x = g1.tracked_input(Tensor::scalar(1.0));
        let _ = g2.input(Tensor::scalar(1.0));
        assert!(matches!(g2.sum(x), Err(Error::Traversal(_))));
        assert!(matches!(g2.backward(x), Err(Error::Traversal(_))));
    }

    #[test]
    fn finite_diff_of_square() {
        let x = Tensor::scalar(3.0);
        let d = finite_diff_grad(|t| Ok(t.data()[0].powi(2)), &x, 1e-5).unwrap();
        assert!((d.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_of_constant_is_zero() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap();
        let d = finite_diff_grad(|_| Ok(7.0), &x, 1e-4).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_of_sine_sum_is_cosine() {
        let x = Tensor::new(vec![2], vec![0.0, std::f64::consts::FRAC_PI_2]).unwrap();
        let d = finite_diff_grad(|t| Ok(t.data().iter().map(|v| v.sin()).sum()), &x, 1e-6).unwrap();
        assert!((d.data()[0] - 1.0).abs() < 1e-9);
        assert!(d.data()[1].abs() < 1e-9);
    }

    #[test]
    fn finite_diff_rejects_bad_eps_and_nan() {
        let x = Tensor::scalar(1.0);
        assert!(matches!(
            finite_diff_grad(|_| Ok(0.0), &x, 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            finite_diff_grad(|_| Ok(f64::NAN), &x, 1e-3),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        // loss = sum(tanh(segmax(scatter(gather(x) * w))) ^ 2) exercises every
        // index op together.
        let x0 = Tensor::new(vec![3, 2], vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9]).unwrap();
        let w0 = Tensor::new(vec![4, 2], vec![0.5, -1.2, 0.8, 0.3, -0.6, 1.4, 0.2, 0.7]).unwrap();
        let gather: Arc<[usize]> = vec![0, 2, 1, 2].into();
        let scatter: Arc<[usize]> = vec![1, 0, 1, 2].into();
        let seg = [0usize, 0, 1];
        let eval = |x: &Tensor, w: &Tensor, want_grads: bool| {
            let store = ParamStore::new();
            let mut g = Graph::new(&store);
            let xv = g.tracked_input(x.clone());
            let wv = g.tracked_input(w.clone());
            let ga = g.gather_rows(xv, gather.clone()).unwrap();
            let m = g.mul(ga, wv).unwrap();
            let s = g.scatter_add_rows(m, scatter.clone(), 3).unwrap();
            let p = g.segment_max_rows(s, &seg, 2).unwrap();
            let t = g.tanh(p).unwrap();
            let sq = g.square(t).unwrap();
            let l = g.mean(sq).unwrap();
            let val = g.value(l).data()[0];
            if want_grads {
                let gr = g.backward(l).unwrap();
                (val, Some((gr.wrt(xv).unwrap(), gr.wrt(wv).unwrap())))
            } else {
                (val, None)
            }
        };
        let (_, grads) = eval(&x0, &w0, true);
        let (gx, gw) = grads.unwrap();
        let fx = finite_diff_grad(|x| Ok(eval(x, &w0, false).0), &x0, 1e-6).unwrap();
        let fw = finite_diff_grad(|w| Ok(eval(&x0, w, false).0), &w0, 1e-6).unwrap();
        assert!(gx.max_abs_diff(&fx) < 1e-8, "{gx:?} vs {fx:?}");
        assert!(gw.max_abs_diff(&fw) < 1e-8);
    }

    #[test]
    fn flop_counter_attributes_matmuls() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        assert!(matches!(g.flops(), Err(Error::Config(_))));
        g.enable_flop_counting();
        g.set_tag("a");
        let x = g.input(Tensor::zeros(&[5, 3]));
        let w = g.input(Tensor::zeros(&[3, 4]));
        g.matmul(x, w).unwrap();
        assert_eq!(g.flops().unwrap().get("a"), 60);
        assert_eq!(g.flops().unwrap().total(), 60);
    }
}

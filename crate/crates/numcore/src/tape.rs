use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use crate::array::NdArray;
use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.044_715;

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    AddBias {
        a: usize,
        bias: usize,
    },
    AddConst {
        a: usize,
    },
    Scale {
        a: usize,
        factor: T,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    Softmax {
        a: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        a: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    GatherRows {
        a: usize,
        rows: Vec<usize>,
    },
    ConcatRows {
        parts: Vec<usize>,
    },
    Reshape {
        a: usize,
    },
    SwapAxes12 {
        a: usize,
        dims: [usize; 4],
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
}

impl<T: Real> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b, .. } | Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::AddBias { a, bias } => vec![*a, *bias],
            Op::AddConst { a }
            | Op::Scale { a, .. }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::Softmax { a }
            | Op::Gelu { a }
            | Op::GatherRows { a, .. }
            | Op::Reshape { a }
            | Op::SwapAxes12 { a, .. } => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::ConcatRows { parts } => parts.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node<T: Real> {
    value: NdArray<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    param: Option<ParamId>,
}

/// Append-only record of operations for one forward/backward pass.
///
/// Nodes are only ever appended, so index order is a topological order and
/// backward simply walks the indices in reverse.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Result of [`Var::cross_entropy`]: the mean loss and how many positions
/// contributed to it. Zero contributing positions yields a zero loss.
#[derive(Debug, Clone, Copy)]
pub struct CrossEntropy<'t, T: Real = f32> {
    pub loss: Var<'t, T>,
    pub contributing: usize,
}

impl<T: Real> CrossEntropy<'_, T> {
    pub fn is_empty(&self) -> bool {
        self.contributing == 0
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: NdArray<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a leaf. Its gradient is tracked when `value.requires_grad()`.
    pub fn leaf(&self, value: NdArray<T>) -> Var<'_, T> {
        let rg = value.requires_grad();
        self.push(value, Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: NdArray<T>) -> Var<'_, T> {
        self.push(value.with_requires_grad(false), Op::Leaf, false)
    }

    /// Records (once per tape) the current value of a stored parameter.
    /// Repeated calls return the same node, so shared weights accumulate a
    /// single gradient.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let src = store.get(id);
        let value = NdArray::new(src.shape().to_vec(), src.data().to_vec())
            .expect("stored parameter is well formed")
            .with_requires_grad(true);
        let var = self.leaf(value);
        self.nodes.borrow_mut()[var.id].param = Some(id);
        self.param_nodes.borrow_mut().insert(id, var.id);
        var
    }

    pub(crate) fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        let nodes = self.nodes.borrow();
        let mut out: Vec<_> = self
            .param_nodes
            .borrow()
            .iter()
            .filter_map(|(&pid, &node)| nodes[node].grad.clone().map(|g| (pid, g)))
            .collect();
        out.sort_by_key(|(pid, _)| *pid);
        out
    }

    /// Concatenates 2-D values with equal column counts along rows.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if parts.is_empty() {
            return Err(NumError::Contract("concat_rows of nothing".into()));
        }
        let nodes = self.nodes.borrow();
        let cols = last_dim(&nodes[parts[0].id].value);
        let mut data = Vec::new();
        let mut rows = 0;
        let mut rg = false;
        for p in parts {
            p.check_tape(self)?;
            let v = &nodes[p.id].value;
            if last_dim(v) != cols {
                return Err(NumError::Shape {
                    op: "concat_rows",
                    lhs: nodes[parts[0].id].value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.numel() / cols.max(1);
            data.extend_from_slice(v.data());
            rg |= nodes[p.id].requires_grad;
        }
        drop(nodes);
        let value = NdArray::new(vec![rows, cols], data)?;
        Ok(self.push(
            value,
            Op::ConcatRows {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            rg,
        ))
    }

    /// Value of a recorded node.
    pub fn value(&self, var: Var<'_, T>) -> Ref<'_, NdArray<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[var.id].value)
    }

    /// Gradient accumulated at `var` by the most recent `backward` calls.
    pub fn grad(&self, var: Var<'_, T>) -> Option<NdArray<T>> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.grad
            .as_ref()
            .map(|g| NdArray::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Leaf gradients accumulate across calls; intermediate gradients are
    /// recomputed from scratch on every call.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        loss.check_tape(self)?;
        let mut nodes = self.nodes.borrow_mut();
        if !nodes[loss.id].value.is_scalar() {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        for n in nodes.iter_mut() {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        let mut reachable = vec![false; loss.id + 1];
        reachable[loss.id] = true;
        for i in (0..=loss.id).rev() {
            if reachable[i] {
                for inp in nodes[i].op.inputs() {
                    reachable[inp] = true;
                }
            }
        }
        if !nodes[loss.id].requires_grad {
            return Ok(());
        }
        add_into(&mut nodes[loss.id], &[T::one()]);
        for i in (0..=loss.id).rev() {
            if !reachable[i] || !nodes[i].requires_grad || matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = nodes[i].grad.take() else {
                continue;
            };
            let contributions = backward_rule(&nodes, i, &g);
            nodes[i].grad = Some(g);
            for (inp, delta) in contributions {
                if nodes[inp].requires_grad {
                    add_into(&mut nodes[inp], &delta);
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Real>(node: &mut Node<T>, delta: &[T]) {
    match node.grad.as_mut() {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a = *a + *d;
            }
        }
        None => node.grad = Some(delta.to_vec()),
    }
}

fn last_dim<T: Real>(a: &NdArray<T>) -> usize {
    *a.shape().last().unwrap_or(&1)
}

fn gelu_fwd(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let t = (c * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_C * x * x)
}

fn backward_rule<T: Real>(nodes: &[Node<T>], i: usize, g: &[T]) -> Vec<(usize, Vec<T>)> {
    let needs = |j: usize| nodes[j].requires_grad;
    let val = |j: usize| nodes[j].value.data();
    let mut out = Vec::new();
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, ta, tb, m, k, n } => {
            if needs(a) {
                let mut da = vec![T::zero(); m * k];
                if ta {
                    // stored k x m: dA^T = op(B) * dC^T
                    T::gemm(k, n, m, val(b), tb, g, true, &mut da, false);
                } else {
                    T::gemm(m, n, k, g, false, val(b), !tb, &mut da, false);
                }
                out.push((a, da));
            }
            if needs(b) {
                let mut db = vec![T::zero(); k * n];
                if tb {
                    // stored n x k: dB^T = dC^T * op(A)
                    T::gemm(n, m, k, g, true, val(a), ta, &mut db, false);
                } else {
                    T::gemm(k, m, n, val(a), !ta, g, false, &mut db, false);
                }
                out.push((b, db));
            }
        }
        &Op::BatchMatMul {
            a,
            b,
            ta,
            tb,
            batch,
            m,
            k,
            n,
        } => {
            let (av, bv) = (val(a), val(b));
            if needs(a) {
                let mut da = vec![T::zero(); batch * m * k];
                for s in 0..batch {
                    let gs = &g[s * m * n..(s + 1) * m * n];
                    let bs = &bv[s * k * n..(s + 1) * k * n];
                    let das = &mut da[s * m * k..(s + 1) * m * k];
                    if ta {
                        T::gemm(k, n, m, bs, tb, gs, true, das, false);
                    } else {
                        T::gemm(m, n, k, gs, false, bs, !tb, das, false);
                    }
                }
                out.push((a, da));
            }
            if needs(b) {
                let mut db = vec![T::zero(); batch * k * n];
                for s in 0..batch {
                    let gs = &g[s * m * n..(s + 1) * m * n];
                    let as_ = &av[s * m * k..(s + 1) * m * k];
                    let dbs = &mut db[s * k * n..(s + 1) * k * n];
                    if tb {
                        T::gemm(n, m, k, gs, true, as_, ta, dbs, false);
                    } else {
                        T::gemm(k, m, n, as_, !ta, gs, false, dbs, false);
                    }
                }
                out.push((b, db));
            }
        }
        &Op::Add { a, b } => {
            if needs(a) {
                out.push((a, g.to_vec()));
            }
            if needs(b) {
                out.push((b, g.to_vec()));
            }
        }
        &Op::Mul { a, b } => {
            if needs(a) {
                out.push((a, g.iter().zip(val(b)).map(|(&x, &y)| x * y).collect()));
            }
            if needs(b) {
                out.push((b, g.iter().zip(val(a)).map(|(&x, &y)| x * y).collect()));
            }
        }
        &Op::AddBias { a, bias } => {
            if needs(a) {
                out.push((a, g.to_vec()));
            }
            if needs(bias) {
                let d = nodes[bias].value.numel();
                let mut db = vec![T::zero(); d];
                for row in g.chunks_exact(d) {
                    for (acc, &x) in db.iter_mut().zip(row) {
                        *acc = *acc + x;
                    }
                }
                out.push((bias, db));
            }
        }
        &Op::AddConst { a } | &Op::Reshape { a } => {
            if needs(a) {
                out.push((a, g.to_vec()));
            }
        }
        &Op::Scale { a, factor } => {
            if needs(a) {
                out.push((a, g.iter().map(|&x| x * factor).collect()));
            }
        }
        &Op::Sum { a } => {
            if needs(a) {
                out.push((a, vec![g[0]; nodes[a].value.numel()]));
            }
        }
        &Op::Mean { a } => {
            if needs(a) {
                let n = nodes[a].value.numel();
                let v = g[0] / T::lit(n as f64);
                out.push((a, vec![v; n]));
            }
        }
        &Op::Softmax { a } => {
            if needs(a) {
                let y = nodes[i].value.data();
                let d = last_dim(&nodes[i].value);
                let mut dx = vec![T::zero(); y.len()];
                for ((yr, gr), dr) in y.chunks_exact(d).zip(g.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for ((o, &p), &q) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - dot);
                    }
                }
                out.push((a, dx));
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = nodes[*gain].value.numel();
            let gv = val(*gain);
            if needs(*gain) {
                let mut dg = vec![T::zero(); d];
                for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        dg[j] = dg[j] + gr[j] * xr[j];
                    }
                }
                out.push((*gain, dg));
            }
            if needs(*bias) {
                let mut db = vec![T::zero(); d];
                for gr in g.chunks_exact(d) {
                    for j in 0..d {
                        db[j] = db[j] + gr[j];
                    }
                }
                out.push((*bias, db));
            }
            if needs(*x) {
                let nd = T::lit(d as f64);
                let mut dx = vec![T::zero(); g.len()];
                let mut dxhat = vec![T::zero(); d];
                for (r, ((gr, xr), dr)) in g
                    .chunks_exact(d)
                    .zip(xhat.chunks_exact(d))
                    .zip(dx.chunks_exact_mut(d))
                    .enumerate()
                {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        dxhat[j] = gr[j] * gv[j];
                        s1 = s1 + dxhat[j];
                        s2 = s2 + dxhat[j] * xr[j];
                    }
                    let scale = rstd[r] / nd;
                    for j in 0..d {
                        dr[j] = scale * (nd * dxhat[j] - s1 - xr[j] * s2);
                    }
                }
                out.push((*x, dx));
            }
        }
        &Op::Gelu { a } => {
            if needs(a) {
                out.push((
                    a,
                    g.iter()
                        .zip(val(a))
                        .map(|(&q, &x)| q * T::lit(gelu_grad(x.as_f64())))
                        .collect(),
                ));
            }
        }
        Op::Embedding { table, ids } => {
            if needs(*table) {
                let d = last_dim(&nodes[*table].value);
                let mut dt = vec![T::zero(); nodes[*table].value.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] = dt[id * d + j] + g[r * d + j];
                    }
                }
                out.push((*table, dt));
            }
        }
        Op::GatherRows { a, rows } => {
            if needs(*a) {
                let d = last_dim(&nodes[*a].value);
                let mut da = vec![T::zero(); nodes[*a].value.numel()];
                for (r, &src) in rows.iter().enumerate() {
                    for j in 0..d {
                        da[src * d + j] = da[src * d + j] + g[r * d + j];
                    }
                }
                out.push((*a, da));
            }
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.numel();
                if needs(p) {
                    out.push((p, g[offset..offset + n].to_vec()));
                }
                offset += n;
            }
        }
        &Op::SwapAxes12 { a, dims } => {
            if needs(a) {
                let [d0, d1, d2, d3] = dims;
                out.push((a, swap12(g, [d0, d2, d1, d3])));
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
            count,
        } => {
            if needs(*logits) && *count > 0 {
                let v = last_dim(&nodes[*logits].value);
                let scale = g[0] / T::lit(*count as f64);
                let mut dl = vec![T::zero(); probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        let row = &mut dl[r * v..(r + 1) * v];
                        for (o, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *o = p * scale;
                        }
                        row[t] = row[t] - scale;
                    }
                }
                out.push((*logits, dl));
            }
        }
    }
    out
}

/// Swaps axes 1 and 2 of a 4-D row-major buffer with dims `[d0, d1, d2, d3]`.
fn swap12<T: Real>(src: &[T], dims: [usize; 4]) -> Vec<T> {
    let [d0, d1, d2, d3] = dims;
    let mut out = vec![T::zero(); src.len()];
    for a in 0..d0 {
        for b in 0..d1 {
            for c in 0..d2 {
                let s = ((a * d1 + b) * d2 + c) * d3;
                let t = ((a * d2 + c) * d1 + b) * d3;
                out[t..t + d3].copy_from_slice(&src[s..s + d3]);
            }
        }
    }
    out
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn check_tape(&self, tape: &Tape<T>) -> Result<()> {
        if std::ptr::eq(self.tape, tape) {
            Ok(())
        } else {
            Err(NumError::Contract("variables from different tapes".into()))
        }
    }

    pub fn value(&self) -> Ref<'t, NdArray<T>> {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.value().data().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn grad(&self) -> Option<NdArray<T>> {
        self.tape.grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    fn requires(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(&self, value: NdArray<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.requires();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<'t, T>, value: NdArray<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.requires() || other.requires();
        self.tape.push(value, op, rg)
    }

    /// Matrix product of two 2-D values.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) * op(other)` where `op` optionally transposes a 2-D value.
    pub fn matmul_t(&self, other: &Var<'t, T>, ta: bool, tb: bool) -> Result<Var<'t, T>> {
        other.check_tape(self.tape)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        if a.ndim() != 2 || b.ndim() != 2 {
            return Err(NumError::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k) = if ta { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
        let (k2, n) = if tb { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
        if k != k2 {
            return Err(NumError::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut c = vec![T::zero(); m * n];
        T::gemm(m, k, n, a.data(), ta, b.data(), tb, &mut c, false);
        drop(nodes);
        let value = NdArray::new(vec![m, n], c)?;
        Ok(self.binary(
            other,
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
                m,
                k,
                n,
            },
        ))
    }

    /// Batched product of two 3-D values `[batch, ., .]`.
    pub fn bmm(&self, other: &Var<'t, T>, ta: bool, tb: bool) -> Result<Var<'t, T>> {
        other.check_tape(self.tape)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        let bad = || NumError::Shape {
            op: "bmm",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        if a.ndim() != 3 || b.ndim() != 3 || a.shape()[0] != b.shape()[0] {
            return Err(bad());
        }
        let batch = a.shape()[0];
        let (m, k) = if ta { (a.shape()[2], a.shape()[1]) } else { (a.shape()[1], a.shape()[2]) };
        let (k2, n) = if tb { (b.shape()[2], b.shape()[1]) } else { (b.shape()[1], b.shape()[2]) };
        if k != k2 {
            return Err(bad());
        }
        let mut c = vec![T::zero(); batch * m * n];
        for s in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &a.data()[s * m * k..(s + 1) * m * k],
                ta,
                &b.data()[s * k * n..(s + 1) * k * n],
                tb,
                &mut c[s * m * n..(s + 1) * m * n],
                false,
            );
        }
        drop(nodes);
        let value = NdArray::new(vec![batch, m, n], c)?;
        Ok(self.binary(
            other,
            value,
            Op::BatchMatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
                batch,
                m,
                k,
                n,
            },
        ))
    }

    fn zip_same(&self, other: &Var<'t, T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<NdArray<T>> {
        other.check_tape(self.tape)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        if a.numel() != b.numel() || (a.shape() != b.shape() && !(a.is_scalar() && b.is_scalar())) {
            return Err(NumError::Shape {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        NdArray::new(a.shape().to_vec(), data)
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let value = self.zip_same(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, value, Op::Add { a: self.id, b: other.id }))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let value = self.zip_same(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, value, Op::Mul { a: self.id, b: other.id }))
    }

    /// Adds a 1-D `bias` along the last axis.
    pub fn add_bias(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        bias.check_tape(self.tape)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[bias.id].value);
        let d = b.numel();
        if last_dim(a) != d {
            return Err(NumError::Shape {
                op: "add_bias",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut data = a.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for (x, &y) in row.iter_mut().zip(b.data()) {
                *x = *x + y;
            }
        }
        let shape = a.shape().to_vec();
        drop(nodes);
        let value = NdArray::new(shape, data)?;
        Ok(self.binary(bias, value, Op::AddBias { a: self.id, bias: bias.id }))
    }

    /// Adds a constant (non-differentiable) buffer to a value laid out as
    /// `[outer, group, block]`; `bias` has layout `[outer, block]` and is
    /// repeated across the `group` axis. Used for attention masks.
    pub fn add_broadcast_const(&self, bias: &[T], outer: usize, group: usize) -> Result<Var<'t, T>> {
        let value = {
            let a = self.value();
            let data = broadcast_add(a.data(), bias, outer, group).map_err(|_| NumError::Shape {
                op: "add_broadcast_const",
                lhs: a.shape().to_vec(),
                rhs: vec![outer, group, bias.len()],
            })?;
            NdArray::new(a.shape().to_vec(), data)?
        };
        Ok(self.unary(value, Op::AddConst { a: self.id }))
    }

    pub fn scale(&self, factor: f64) -> Var<'t, T> {
        let f = T::lit(factor);
        let value = {
            let a = self.value();
            NdArray::new(a.shape().to_vec(), a.data().iter().map(|&x| x * f).collect()).expect("same shape")
        };
        self.unary(value, Op::Scale { a: self.id, factor: f })
    }

    pub fn sum(&self) -> Var<'t, T> {
        let s: T = self.value().data().iter().copied().sum();
        self.unary(NdArray::scalar(s), Op::Sum { a: self.id })
    }

    pub fn mean(&self) -> Var<'t, T> {
        let (s, n) = {
            let a = self.value();
            (a.data().iter().copied().sum::<T>(), a.numel())
        };
        self.unary(NdArray::scalar(s / T::lit(n.max(1) as f64)), Op::Mean { a: self.id })
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_rows(&self) -> Var<'t, T> {
        let value = {
            let a = self.value();
            let d = last_dim(&a);
            let mut data = a.data().to_vec();
            for row in data.chunks_exact_mut(d.max(1)) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    z = z + *v;
                }
                for v in row.iter_mut() {
                    *v = *v / z;
                }
            }
            NdArray::new(a.shape().to_vec(), data).expect("same shape")
        };
        self.unary(value, Op::Softmax { a: self.id })
    }

    /// Layer normalization over the last axis (eps = 1e-5) followed by an
    /// elementwise affine map.
    pub fn layer_norm(&self, gain: &Var<'t, T>, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        gain.check_tape(self.tape)?;
        bias.check_tape(self.tape)?;
        let nodes = self.tape.nodes.borrow();
        let (x, gv, bv) = (&nodes[self.id].value, &nodes[gain.id].value, &nodes[bias.id].value);
        let d = last_dim(x);
        if gv.numel() != d || bv.numel() != d {
            return Err(NumError::Shape {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = x.numel() / d.max(1);
        let mut xhat = vec![T::zero(); x.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut data = vec![T::zero(); x.numel()];
        let nd = T::lit(d as f64);
        for r in 0..rows {
            let xr = &x.data()[r * d..(r + 1) * d];
            let mean = xr.iter().copied().sum::<T>() / nd;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nd;
            let rs = T::one() / (var + T::lit(LN_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (xr[j] - mean) * rs;
                xhat[r * d + j] = h;
                data[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let rg = nodes[self.id].requires_grad || nodes[gain.id].requires_grad || nodes[bias.id].requires_grad;
        let shape = x.shape().to_vec();
        drop(nodes);
        let value = NdArray::new(shape, data)?;
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t, T> {
        let value = {
            let a = self.value();
            NdArray::new(
                a.shape().to_vec(),
                a.data().iter().map(|&x| T::lit(gelu_fwd(x.as_f64()))).collect(),
            )
            .expect("same shape")
        };
        self.unary(value, Op::Gelu { a: self.id })
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding(&self, ids: &[usize]) -> Result<Var<'t, T>> {
        let value = gather(&self.value(), ids, "embedding")?;
        Ok(self.unary(
            value,
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Selects rows (over the flattened leading axes) of a value.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<'t, T>> {
        let value = gather(&self.value(), rows, "gather_rows")?;
        Ok(self.unary(
            value,
            Op::GatherRows {
                a: self.id,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let shape = shape.into();
        let value = {
            let a = self.value();
            NdArray::new(shape, a.data().to_vec()).map_err(|_| NumError::Shape {
                op: "reshape",
                lhs: a.shape().to_vec(),
                rhs: Vec::new(),
            })?
        };
        Ok(self.unary(value, Op::Reshape { a: self.id }))
    }

    /// Swaps axes 1 and 2 of a 4-D value.
    pub fn swap_axes12(&self) -> Result<Var<'t, T>> {
        let (value, dims) = {
            let a = self.value();
            if a.ndim() != 4 {
                return Err(NumError::Shape {
                    op: "swap_axes12",
                    lhs: a.shape().to_vec(),
                    rhs: vec![4],
                });
            }
            let s = a.shape();
            let dims = [s[0], s[1], s[2], s[3]];
            (
                NdArray::new(vec![s[0], s[2], s[1], s[3]], swap12(a.data(), dims)).expect("same size"),
                dims,
            )
        };
        Ok(self.unary(value, Op::SwapAxes12 { a: self.id, dims }))
    }

    /// Mean negative log-softmax probability of `targets` over rows of a
    /// 2-D logit matrix, skipping rows whose target equals `ignore_index`.
    pub fn cross_entropy(&self, targets: &[i64], ignore_index: i64) -> Result<CrossEntropy<'t, T>> {
        let (value, tgt, probs, count) = {
            let a = self.value();
            let v = last_dim(&a);
            let rows = a.numel() / v.max(1);
            if targets.len() != rows {
                return Err(NumError::Shape {
                    op: "cross_entropy",
                    lhs: a.shape().to_vec(),
                    rhs: vec![targets.len()],
                });
            }
            let mut tgt = Vec::with_capacity(rows);
            for &t in targets {
                if t == ignore_index {
                    tgt.push(None);
                } else if t < 0 || t as usize >= v {
                    return Err(NumError::Index {
                        op: "cross_entropy",
                        index: t,
                        size: v,
                    });
                } else {
                    tgt.push(Some(t as usize));
                }
            }
            let mut probs = vec![T::zero(); a.numel()];
            let mut total = 0.0f64;
            let mut count = 0usize;
            for (r, t) in tgt.iter().enumerate() {
                let Some(t) = *t else { continue };
                let row = &a.data()[r * v..(r + 1) * v];
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let z: T = row.iter().map(|&x| (x - mx).exp()).sum();
                let lz = z.ln();
                for (p, &x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                    *p = (x - mx).exp() / z;
                }
                total += (lz - (row[t] - mx)).as_f64();
                count += 1;
            }
            let loss = if count == 0 { 0.0 } else { total / count as f64 };
            (NdArray::scalar(T::lit(loss)), tgt, probs, count)
        };
        let loss = self.unary(
            value,
            Op::CrossEntropy {
                logits: self.id,
                targets: tgt,
                probs,
                count,
            },
        );
        Ok(CrossEntropy {
            loss,
            contributing: count,
        })
    }
}

fn broadcast_add<T: Real>(a: &[T], bias: &[T], outer: usize, group: usize) -> Result<Vec<T>, ()> {
    if outer == 0 || group == 0 || bias.len() % outer != 0 {
        return Err(());
    }
    let block = bias.len() / outer;
    if a.len() != outer * group * block {
        return Err(());
    }
    let mut out = a.to_vec();
    for o in 0..outer {
        let b = &bias[o * block..(o + 1) * block];
        for g in 0..group {
            let start = (o * group + g) * block;
            for (x, &y) in out[start..start + block].iter_mut().zip(b) {
                *x = *x + y;
            }
        }
    }
    Ok(out)
}

fn gather<T: Real>(a: &NdArray<T>, rows: &[usize], op: &'static str) -> Result<NdArray<T>> {
    let d = last_dim(a);
    let n_rows = a.numel() / d.max(1);
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        if r >= n_rows {
            return Err(NumError::Index {
                op,
                index: r as i64,
                size: n_rows,
            });
        }
        data.extend_from_slice(&a.data()[r * d..(r + 1) * d]);
    }
    NdArray::new(vec![rows.len(), d], data)
}

//! Reverse-mode automatic differentiation over a define-by-run graph.
//!
//! A [`Graph`] records every operation eagerly; [`Graph::backward`] walks the
//! nodes in reverse creation order (a valid topological order) and returns
//! per-node gradients. Parameters enter the graph through [`Graph::param`],
//! which captures their *effective* weight; [`Gradients::accumulate_into`]
//! chain-rules back onto the raw tensors.

use std::fmt;

use crate::error::{Error, Result};
use crate::param::Param;
use crate::tensor::{self, check_rank2, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Differentiable operation kinds, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Add,
    AddRow,
    Mul,
    Scale,
    Relu,
    Softmax,
    LayerNorm,
    Attention,
    SplitHeads,
    MergeHeads,
    Embedding,
    Sum,
    SquaredError,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::AddRow,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Attention,
        OpKind::SplitHeads,
        OpKind::MergeHeads,
        OpKind::Embedding,
        OpKind::Sum,
        OpKind::SquaredError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::AddRow => "add_row",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Attention => "attention",
            OpKind::SplitHeads => "split_heads",
            OpKind::MergeHeads => "merge_heads",
            OpKind::Embedding => "embedding",
            OpKind::Sum => "sum",
            OpKind::SquaredError => "squared_error",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<f64>,
    },
    SplitHeads(Var, usize),
    MergeHeads(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    SquaredError {
        pred: Var,
        target: Tensor,
        scale: f64,
    },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Input | Op::Param => return None,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(..) => OpKind::Relu,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Attention { .. } => OpKind::Attention,
            Op::SplitHeads(..) => OpKind::SplitHeads,
            Op::MergeHeads(..) => OpKind::MergeHeads,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::Sum(..) => OpKind::Sum,
            Op::SquaredError { .. } => OpKind::SquaredError,
        })
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<(usize, Var)>,
    fault: Option<OpKind>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test fixture: corrupts the backward rule of `kind` by a factor of 1.5.
    #[doc(hidden)]
    pub fn with_faulty_backward(kind: OpKind) -> Self {
        Self {
            fault: Some(kind),
            ..Self::default()
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant with no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Registers parameter `id`'s effective weight. Repeated calls with the
    /// same id return the same node.
    pub fn param(&mut self, id: usize, p: &Param) -> Var {
        if let Some(&(_, v)) = self.param_nodes.iter().find(|(pid, _)| *pid == id) {
            return v;
        }
        let v = self.push(p.effective(), Op::Param, true);
        self.param_nodes.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Dimension(format!(
                "add shapes differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut out = x.clone();
        out.add_assign(y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// `x[n×d] + b[d]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let d = xv.cols();
        if bv.len() != d {
            return Err(Error::Dimension(format!(
                "row bias {:?} does not match {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddRow(x, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Dimension(format!(
                "mul shapes differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = tensor::softmax(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if d == 0 || gv.len() != d || bv.len() != d {
            return Err(Error::Dimension(format!(
                "layer_norm over {:?} with gamma {:?}, beta {:?}",
                xv.shape(),
                gv.shape(),
                bv.shape()
            )));
        }
        let (xhat, inv_std) = tensor::normalize_rows(xv.data(), d);
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for ((o, g), b) in row.iter_mut().zip(gv.data()).zip(bv.data()) {
                *o = *o * g + b;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Multi-head scaled dot-product attention on `[h×T×d]` operands with an
    /// optional constant additive mask `[Tq×Tk]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&Tensor>) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let dims = tensor::attention_dims(qv, kv, vv, mask)?;
        let probs = tensor::attention_probs(qv, kv, mask, &dims);
        let out = tensor::attention_apply(&probs, vv, &dims);
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(out, Op::Attention { q, k, v, probs }, ng))
    }

    /// `[T×(h·dk)]` → `[h×T×dk]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let (t, d) = check_rank2(xv, "split_heads input")?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Dimension(format!(
                "cannot split width {d} into {heads} heads"
            )));
        }
        let dk = d / heads;
        let mut out = vec![0.0; t * d];
        for h in 0..heads {
            for i in 0..t {
                out[(h * t + i) * dk..(h * t + i + 1) * dk]
                    .copy_from_slice(&xv.data()[i * d + h * dk..i * d + (h + 1) * dk]);
            }
        }
        let out = Tensor::new(vec![heads, t, dk], out)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::SplitHeads(x, heads), ng))
    }

    /// `[h×T×dk]` → `[T×(h·dk)]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let &[heads, t, dk] = xv.shape() else {
            return Err(Error::Dimension(format!(
                "merge_heads needs rank 3, got {:?}",
                xv.shape()
            )));
        };
        let d = heads * dk;
        let mut out = vec![0.0; t * d];
        for h in 0..heads {
            for i in 0..t {
                out[i * d + h * dk..i * d + (h + 1) * dk]
                    .copy_from_slice(&xv.data()[(h * t + i) * dk..(h * t + i + 1) * dk]);
            }
        }
        let out = Tensor::new(vec![t, d], out)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::MergeHeads(x), ng))
    }

    /// Gathers rows of `table[vocab×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (vocab, d) = check_rank2(tv, "embedding table")?;
        if ids.is_empty() {
            return Err(Error::Data("embedding lookup of an empty sequence".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Data(format!(
                    "token id {id} out of range for vocab {vocab}"
                )));
            }
            out.extend_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        let ng = self.needs(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push(out, Op::Sum(x), ng)
    }

    /// `scale · Σ (pred − target)²` as a scalar node.
    pub fn squared_error(&mut self, pred: Var, target: &Tensor, scale: f64) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::Dimension(format!(
                "loss shapes differ: {:?} vs {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let sq: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let ng = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(scale * sq),
            Op::SquaredError {
                pred,
                target: target.clone(),
                scale,
            },
            ng,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let n = target.len() as f64;
        self.squared_error(pred, target, 1.0 / n)
    }

    /// Gradients of scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Input => continue,
                Op::Param => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let factor = match (self.fault, node.op.kind()) {
                (Some(f), Some(k)) if f == k => 1.5,
                _ => 1.0,
            };
            let mut acc = |grads: &mut Vec<Option<Tensor>>, v: Var, mut t: Tensor| {
                if !self.needs(v) {
                    return;
                }
                if factor != 1.0 {
                    t.data_mut().iter_mut().for_each(|x| *x *= factor);
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            self.backward_node(node, g, &mut grads, &mut acc);
        }
        Ok(Gradients {
            params: self
                .param_nodes
                .iter()
                .filter_map(|&(id, v)| grads[v.0].take().map(|g| (id, g)))
                .collect(),
        })
    }

    fn backward_node(
        &self,
        node: &Node,
        g: Tensor,
        grads: &mut Vec<Option<Tensor>>,
        acc: &mut impl FnMut(&mut Vec<Option<Tensor>>, Var, Tensor),
    ) {
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = (av.shape()[0], av.shape()[1]);
                let m = bv.shape()[1];
                if self.needs(*a) {
                    let mut da = vec![0.0; n * k];
                    tensor::gemm_nt(g.data(), bv.data(), &mut da, n, m, k);
                    acc(grads, *a, Tensor::new(vec![n, k], da).expect("shape"));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * m];
                    tensor::gemm_tn(av.data(), g.data(), &mut db, n, k, m);
                    acc(grads, *b, Tensor::new(vec![k, m], db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *b, g.clone());
                acc(grads, *a, g);
            }
            Op::AddRow(x, b) => {
                if self.needs(*b) {
                    let bshape = self.value(*b).shape().to_vec();
                    let d = g.cols();
                    let mut db = vec![0.0; d];
                    for row in g.data().chunks(d) {
                        for (s, v) in db.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    acc(grads, *b, Tensor::new(bshape, db).expect("shape"));
                }
                acc(grads, *x, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                acc(
                    grads,
                    *a,
                    Tensor::new(g.shape().to_vec(), da).expect("shape"),
                );
                acc(
                    grads,
                    *b,
                    Tensor::new(g.shape().to_vec(), db).expect("shape"),
                );
            }
            Op::Scale(x, s) => {
                let s = *s;
                acc(grads, *x, g.map(|v| v * s));
            }
            Op::Relu(x) => {
                let mut dx = g;
                for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    if *y <= 0.0 {
                        *d = 0.0;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let cols = y.cols();
                let mut dx = g;
                for (drow, yrow) in dx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (d, yv) in drow.iter_mut().zip(yrow) {
                        *d = yv * (*d - dot);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let d = gv.len();
                let (mut dgamma, mut dbeta) = (vec![0.0; d], vec![0.0; d]);
                let mut dx = vec![0.0; xhat.len()];
                for (r, ((grow, hrow), dxrow)) in g
                    .data()
                    .chunks(d)
                    .zip(xhat.chunks(d))
                    .zip(dx.chunks_mut(d))
                    .enumerate()
                {
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..d {
                        dgamma[j] += grow[j] * hrow[j];
                        dbeta[j] += grow[j];
                        let dh = grow[j] * gv.data()[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hrow[j];
                    }
                    let inv = inv_std[r];
                    let df = d as f64;
                    for j in 0..d {
                        let dh = grow[j] * gv.data()[j];
                        dxrow[j] = inv / df * (df * dh - sum_dh - hrow[j] * sum_dh_h);
                    }
                }
                let gshape = gv.shape().to_vec();
                let bshape = self.value(*beta).shape().to_vec();
                acc(grads, *gamma, Tensor::new(gshape, dgamma).expect("shape"));
                acc(grads, *beta, Tensor::new(bshape, dbeta).expect("shape"));
                acc(
                    grads,
                    *x,
                    Tensor::new(g.shape().to_vec(), dx).expect("shape"),
                );
            }
            Op::Attention { q, k, v, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (heads, tq, dk) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
                let (tk, dv) = (kv.shape()[1], vv.shape()[2]);
                let scale = 1.0 / (dk as f64).sqrt();
                let mut dq = vec![0.0; qv.len()];
                let mut dk_ = vec![0.0; kv.len()];
                let mut dvv = vec![0.0; vv.len()];
                let mut ds = vec![0.0; tq * tk];
                for h in 0..heads {
                    let p = &probs[h * tq * tk..(h + 1) * tq * tk];
                    let gh = &g.data()[h * tq * dv..(h + 1) * tq * dv];
                    let vh = &vv.data()[h * tk * dv..(h + 1) * tk * dv];
                    tensor::gemm_tn(p, gh, &mut dvv[h * tk * dv..(h + 1) * tk * dv], tq, tk, dv);
                    ds.fill(0.0);
                    tensor::gemm_nt(gh, vh, &mut ds, tq, dv, tk);
                    for (drow, prow) in ds.chunks_mut(tk).zip(p.chunks(tk)) {
                        let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                        for (d, pv) in drow.iter_mut().zip(prow) {
                            *d = pv * (*d - dot) * scale;
                        }
                    }
                    let kh = &kv.data()[h * tk * dk..(h + 1) * tk * dk];
                    let qh = &qv.data()[h * tq * dk..(h + 1) * tq * dk];
                    tensor::gemm_nn(&ds, kh, &mut dq[h * tq * dk..(h + 1) * tq * dk], tq, tk, dk);
                    tensor::gemm_tn(
                        &ds,
                        qh,
                        &mut dk_[h * tk * dk..(h + 1) * tk * dk],
                        tq,
                        tk,
                        dk,
                    );
                }
                let (qs, ks, vs) = (
                    qv.shape().to_vec(),
                    kv.shape().to_vec(),
                    vv.shape().to_vec(),
                );
                acc(grads, *q, Tensor::new(qs, dq).expect("shape"));
                acc(grads, *k, Tensor::new(ks, dk_).expect("shape"));
                acc(grads, *v, Tensor::new(vs, dvv).expect("shape"));
            }
            Op::SplitHeads(x, heads) => {
                let (heads, t, dk) = (*heads, g.shape()[1], g.shape()[2]);
                let d = heads * dk;
                let mut dx = vec![0.0; t * d];
                for h in 0..heads {
                    for i in 0..t {
                        dx[i * d + h * dk..i * d + (h + 1) * dk]
                            .copy_from_slice(&g.data()[(h * t + i) * dk..(h * t + i + 1) * dk]);
                    }
                }
                acc(grads, *x, Tensor::new(vec![t, d], dx).expect("shape"));
            }
            Op::MergeHeads(x) => {
                let xshape = self.value(*x).shape().to_vec();
                let (heads, t, dk) = (xshape[0], xshape[1], xshape[2]);
                let d = heads * dk;
                let mut dx = vec![0.0; t * d];
                for h in 0..heads {
                    for i in 0..t {
                        dx[(h * t + i) * dk..(h * t + i + 1) * dk]
                            .copy_from_slice(&g.data()[i * d + h * dk..i * d + (h + 1) * dk]);
                    }
                }
                acc(grads, *x, Tensor::new(xshape, dx).expect("shape"));
            }
            Op::Embedding { table, ids } => {
                let tshape = self.value(*table).shape().to_vec();
                let d = tshape[1];
                let mut dt = Tensor::zeros(&tshape);
                for (i, &id) in ids.iter().enumerate() {
                    let src = &g.data()[i * d..(i + 1) * d];
                    for (o, s) in dt.data_mut()[id * d..(id + 1) * d].iter_mut().zip(src) {
                        *o += s;
                    }
                }
                acc(grads, *table, dt);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(grads, *x, Tensor::full(&shape, g.data()[0]));
            }
            Op::SquaredError {
                pred,
                target,
                scale,
            } => {
                let pv = self.value(*pred);
                let k = 2.0 * scale * g.data()[0];
                let d = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| k * (p - t))
                    .collect();
                acc(
                    grads,
                    *pred,
                    Tensor::new(pv.shape().to_vec(), d).expect("shape"),
                );
            }
        }
    }
}

/// Parameter gradients produced by [`Graph::backward`], keyed by the ids
/// passed to [`Graph::param`] and taken with respect to effective weights.
pub struct Gradients {
    params: Vec<(usize, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: usize) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.params.iter().map(|(id, g)| (*id, g))
    }

    /// Adds `∂loss/∂raw` into each parameter's `grad`. Gradients accumulate;
    /// callers zero them between steps.
    pub fn accumulate_into(&self, params: &mut [Param]) {
        for (id, g) in &self.params {
            params[*id].accumulate_effective_grad(g);
        }
    }
}

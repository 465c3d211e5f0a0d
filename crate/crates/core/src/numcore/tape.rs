//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends one node holding its forward value; node ids increase in
//! evaluation order, so a single reverse sweep over the node list is a valid
//! topological traversal. A tape is rebuilt for every training step.

use std::sync::Arc;

use super::sparse::{spmm_t_with_values, spmm_with_values};
use super::tensor::{matmul_nt, matmul_raw, matmul_tn};
use super::{NumError, SparseMatrix, Tensor};

/// Norm below which a cosine-similarity row is considered degenerate.
pub const COSINE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SpMM {
        pattern: Arc<SparseMatrix>,
        values: Option<Var>,
        dense: Var,
    },
    OffsetValues {
        weights: Var,
        map: Arc<[Option<usize>]>,
    },
    GatherRows(Var, Arc<[usize]>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    CosineSim(Var, Var),
    RowwiseCosine(Var, Var),
    SoftmaxNll {
        scores: Var,
        targets: Vec<usize>,
        tau: f64,
        probs: Tensor,
    },
    Sum(Var),
    MeanRows(Var),
    LinearCombination {
        terms: Vec<Var>,
        coeffs: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::SpMM { .. } => "spmm",
            Op::OffsetValues { .. } => "offset_values",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::CosineSim(..) => "row_cosine_sim",
            Op::RowwiseCosine(..) => "rowwise_cosine",
            Op::SoftmaxNll { .. } => "softmax_nll",
            Op::Sum(..) => "sum",
            Op::MeanRows(..) => "mean_rows",
            Op::LinearCombination { .. } => "linear_combination",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::CosineSim(a, b) | Op::RowwiseCosine(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a) | Op::Scale(a, _) | Op::Relu(a) | Op::GatherRows(a, _) | Op::Sum(a) | Op::MeanRows(a) => {
                vec![*a]
            }
            Op::SpMM { values, dense, .. } => values.iter().copied().chain([*dense]).collect(),
            Op::OffsetValues { weights, .. } => vec![*weights],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::SoftmaxNll { scores, .. } => vec![*scores],
            Op::LinearCombination { terms, coeffs } => terms.iter().copied().chain([*coeffs]).collect(),
        }
    }
}

/// One recorded operation: its kind, parents and cached forward value.
#[derive(Debug)]
pub struct TapeNode {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

impl TapeNode {
    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }

    pub fn parents(&self) -> Vec<Var> {
        self.op.parents()
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `var`; all zeros when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    value_floats: usize,
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

    pub fn node(&self, v: Var) -> &TapeNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Bytes held by forward values; backward roughly doubles this.
    pub fn allocated_bytes(&self) -> usize {
        self.value_floats * std::mem::size_of::<f64>()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var, NumError> {
        if let Some(index) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: op.name(), index });
        }
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => other.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.value_floats += value.len();
        self.nodes.push(TapeNode { op, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a trainable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t).expect("tensors are finite by construction")
    }

    /// Registers a value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t).expect("tensors are finite by construction")
    }

    /// Copies the value of `v` as a constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(NumError::Dimension { op: "matmul", left: va.shape(), right: vb.shape() });
        }
        let out = matmul_raw(va, vb);
        self.push(Op::MatMul(a, b), out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.value(a).sub(self.value(b))?;
        self.push(Op::Sub(a, b), out)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumError> {
        let out = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), out)
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(a), out)
    }

    /// `s · d` with `s` held fixed.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, d: Var) -> Result<Var, NumError> {
        self.spmm_inner(s, None, d)
    }

    /// `s · d` where the stored values of `s` are replaced by `values`
    /// (an nnz×1 node), making the product differentiable w.r.t. them.
    pub fn spmm_values(&mut self, s: &Arc<SparseMatrix>, values: Var, d: Var) -> Result<Var, NumError> {
        let vs = self.value(values).shape();
        if vs != (s.nnz(), 1) {
            return Err(NumError::Dimension { op: "spmm", left: (s.nnz(), 1), right: vs });
        }
        self.spmm_inner(s, Some(values), d)
    }

    fn spmm_inner(&mut self, s: &Arc<SparseMatrix>, values: Option<Var>, d: Var) -> Result<Var, NumError> {
        let vd = self.value(d);
        if s.cols() != vd.rows() {
            return Err(NumError::Dimension { op: "spmm", left: s.shape(), right: vd.shape() });
        }
        let vals = values.map_or(s.values(), |v| self.value(v).data());
        let out = spmm_with_values(s, vals, vd);
        self.push(Op::SpMM { pattern: Arc::clone(s), values, dense: d }, out)
    }

    /// Values of `s` offset by trainable weights: entry `k` becomes
    /// `s.values[k] + weights[map[k]]` (unchanged where `map[k]` is `None`).
    pub fn offset_values(
        &mut self,
        s: &Arc<SparseMatrix>,
        weights: Var,
        map: Arc<[Option<usize>]>,
    ) -> Result<Var, NumError> {
        let w = self.value(weights);
        if map.len() != s.nnz() || w.cols() != 1 {
            return Err(NumError::Dimension { op: "offset_values", left: (s.nnz(), 1), right: (map.len(), w.cols()) });
        }
        if let Some(bad) = map.iter().flatten().find(|&&i| i >= w.rows()) {
            return Err(NumError::Structural(format!("edge weight index {bad} out of range ({})", w.rows())));
        }
        let data = s
            .values()
            .iter()
            .zip(map.iter())
            .map(|(&base, m)| base + m.map_or(0.0, |i| w.data()[i]))
            .collect();
        let out = Tensor::from_parts(s.nnz(), 1, data);
        self.push(Op::OffsetValues { weights, map }, out)
    }

    /// `(s + p·qᵀ) · d` evaluated as `s·d + p·(qᵀ·d)`; the dense N×N term is
    /// never formed.
    pub fn rank_one_update_spmm(&mut self, s: &Arc<SparseMatrix>, p: Var, q: Var, d: Var) -> Result<Var, NumError> {
        let n = s.rows();
        for v in [p, q] {
            let shape = self.shape(v);
            if shape != (n, 1) || s.cols() != n {
                return Err(NumError::Dimension { op: "rank_one_update_spmm", left: s.shape(), right: shape });
            }
        }
        let base = self.spmm(s, d)?;
        let qt = self.transpose(q)?;
        let qtd = self.matmul(qt, d)?;
        let low = self.matmul(p, qtd)?;
        self.add(base, low)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumError> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(NumError::Dimension { op: "gather_rows", left: va.shape(), right: (bad, 0) });
        }
        let out = va.select_rows(idx);
        self.push(Op::GatherRows(a, idx.into()), out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let cols = parts.first().map_or(0, |&v| self.value(v).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(NumError::Dimension { op: "concat_rows", left: (rows, cols), right: t.shape() });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_parts(rows, cols, data))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let rows = parts.first().map_or(0, |&v| self.value(v).rows());
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(NumError::Dimension { op: "concat_cols", left: (rows, cols), right: t.shape() });
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts(rows, cols, data))
    }

    /// All-pairs cosine similarity: entry (i, c) = ⟨hᵢ, p_c⟩ / (‖hᵢ‖‖p_c‖).
    pub fn row_cosine_sim(&mut self, h: Var, p: Var) -> Result<Var, NumError> {
        let (vh, vp) = (self.value(h), self.value(p));
        if vh.cols() != vp.cols() {
            return Err(NumError::Dimension { op: "row_cosine_sim", left: vh.shape(), right: vp.shape() });
        }
        let nh = row_norms(vh, "left")?;
        let np = row_norms(vp, "right")?;
        let mut out = matmul_nt(vh, vp);
        let c = vp.rows();
        for (k, o) in out.data_mut().iter_mut().enumerate() {
            *o /= nh[k / c] * np[k % c];
        }
        self.push(Op::CosineSim(h, p), out)
    }

    /// Paired cosine similarity of matching rows, as an n×1 column.
    pub fn rowwise_cosine(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(NumError::Dimension { op: "rowwise_cosine", left: va.shape(), right: vb.shape() });
        }
        let na = row_norms(va, "left")?;
        let nb = row_norms(vb, "right")?;
        let data = (0..va.rows())
            .map(|i| dot(va.row(i), vb.row(i)) / (na[i] * nb[i]))
            .collect();
        let out = Tensor::from_parts(va.rows(), 1, data);
        self.push(Op::RowwiseCosine(a, b), out)
    }

    /// Mean over rows of `−ln softmax(scores / τ)[target]`, computed with
    /// row-max subtraction.
    pub fn softmax_nll(&mut self, scores: Var, targets: &[usize], tau: f64) -> Result<Var, NumError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(NumError::Parameter(format!("temperature must be positive, got {tau}")));
        }
        let s = self.value(scores);
        if targets.len() != s.rows() || s.rows() == 0 {
            return Err(NumError::Dimension { op: "softmax_nll", left: s.shape(), right: (targets.len(), 1) });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= s.cols()) {
            return Err(NumError::Parameter(format!("target {t} outside [0, {})", s.cols())));
        }
        let mut probs = Tensor::zeros(s.rows(), s.cols());
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = s.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pr = &mut probs.data_mut()[i * s.cols()..(i + 1) * s.cols()];
            let mut z = 0.0;
            for (p, &v) in pr.iter_mut().zip(row) {
                *p = ((v - max) / tau).exp();
                z += *p;
            }
            pr.iter_mut().for_each(|p| *p /= z);
            total += z.ln() - (row[t] - max) / tau;
        }
        let loss = Tensor::scalar(total / targets.len() as f64);
        self.push(Op::SoftmaxNll { scores, targets: targets.to_vec(), tau, probs }, loss)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumError> {
        if self.value(a).rows() == 0 {
            return Err(NumError::Dimension { op: "mean_rows", left: self.shape(a), right: (1, 0) });
        }
        let out = self.value(a).mean_rows();
        self.push(Op::MeanRows(a), out)
    }

    /// `Σ_k coeffs[k] · terms[k]` for a 1×K coefficient row.
    pub fn linear_combination(&mut self, terms: &[Var], coeffs: Var) -> Result<Var, NumError> {
        let cs = self.shape(coeffs);
        if cs != (1, terms.len()) || terms.is_empty() {
            return Err(NumError::Dimension { op: "linear_combination", left: (1, terms.len()), right: cs });
        }
        let shape = self.shape(terms[0]);
        let mut out = Tensor::zeros(shape.0, shape.1);
        for (k, &t) in terms.iter().enumerate() {
            let vt = self.value(t);
            if vt.shape() != shape {
                return Err(NumError::Dimension { op: "linear_combination", left: shape, right: vt.shape() });
            }
            let c = self.value(coeffs).data()[k];
            for (o, v) in out.data_mut().iter_mut().zip(vt.data()) {
                *o += c * v;
            }
        }
        self.push(Op::LinearCombination { terms: terms.to_vec(), coeffs }, out)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(NumError::Contract(format!("backward needs a scalar loss, got shape {shape:?}")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &TapeNode, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(*a, matmul_nt(g, self.value(*b)));
                }
                if needs(*b) {
                    acc(*b, matmul_tn(self.value(*a), g));
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Scale(a, f) => acc(*a, g.scale(*f)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 }).collect();
                acc(*a, Tensor::from_parts(x.rows(), x.cols(), data));
            }
            Op::SpMM { pattern, values, dense } => {
                let vals = values.map_or(pattern.values(), |v| self.value(v).data());
                if needs(*dense) {
                    acc(*dense, spmm_t_with_values(pattern, vals, g));
                }
                if let Some(v) = values.filter(|v| needs(*v)) {
                    let d = self.value(*dense);
                    let m = d.cols();
                    let mut out = vec![0.0; pattern.nnz()];
                    let offs = pattern.row_offsets();
                    for r in 0..pattern.rows() {
                        let grow = g.row(r);
                        for k in offs[r]..offs[r + 1] {
                            let c = pattern.col_indices()[k];
                            out[k] = dot(grow, &d.data()[c * m..(c + 1) * m]);
                        }
                    }
                    acc(v, Tensor::from_parts(pattern.nnz(), 1, out));
                }
            }
            Op::OffsetValues { weights, map, .. } => {
                let w = self.value(*weights);
                let mut out = vec![0.0; w.rows()];
                for (k, m) in map.iter().enumerate() {
                    if let Some(i) = m {
                        out[*i] += g.data()[k];
                    }
                }
                acc(*weights, Tensor::from_parts(w.rows(), 1, out));
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                let c = x.cols();
                for (r, &i) in idx.iter().enumerate() {
                    for (o, gv) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
                acc(*a, out);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let slice = g.data()[start * c..(start + r) * c].to_vec();
                    acc(p, Tensor::from_parts(r, c, slice));
                    start += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        data.extend_from_slice(&g.row(i)[start..start + c]);
                    }
                    acc(p, Tensor::from_parts(r, c, data));
                    start += c;
                }
            }
            Op::CosineSim(h, p) => {
                let (vh, vp) = (self.value(*h), self.value(*p));
                let out = &node.value;
                let nh = row_norms(vh, "left").expect("checked in forward");
                let np = row_norms(vp, "right").expect("checked in forward");
                let (n, c, d) = (vh.rows(), vp.rows(), vh.cols());
                if needs(*h) {
                    let mut dh = vec![0.0; n * d];
                    for i in 0..n {
                        let hi = vh.row(i);
                        let row = &mut dh[i * d..(i + 1) * d];
                        for k in 0..c {
                            let gk = g.get(i, k);
                            if gk == 0.0 {
                                continue;
                            }
                            let a = gk / (nh[i] * np[k]);
                            let b = gk * out.get(i, k) / (nh[i] * nh[i]);
                            for ((r, &pv), &hv) in row.iter_mut().zip(vp.row(k)).zip(hi) {
                                *r += a * pv - b * hv;
                            }
                        }
                    }
                    acc(*h, Tensor::from_parts(n, d, dh));
                }
                if needs(*p) {
                    let mut dp = vec![0.0; c * d];
                    for i in 0..n {
                        let hi = vh.row(i);
                        for k in 0..c {
                            let gk = g.get(i, k);
                            if gk == 0.0 {
                                continue;
                            }
                            let a = gk / (nh[i] * np[k]);
                            let b = gk * out.get(i, k) / (np[k] * np[k]);
                            let row = &mut dp[k * d..(k + 1) * d];
                            for ((r, &hv), &pv) in row.iter_mut().zip(hi).zip(vp.row(k)) {
                                *r += a * hv - b * pv;
                            }
                        }
                    }
                    acc(*p, Tensor::from_parts(c, d, dp));
                }
            }
            Op::RowwiseCosine(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let na = row_norms(va, "left").expect("checked in forward");
                let nb = row_norms(vb, "right").expect("checked in forward");
                let (n, d) = va.shape();
                let mut da = vec![0.0; n * d];
                let mut db = vec![0.0; n * d];
                for i in 0..n {
                    let gi = g.data()[i];
                    let cos = node.value.data()[i];
                    let inv = gi / (na[i] * nb[i]);
                    let ca = gi * cos / (na[i] * na[i]);
                    let cb = gi * cos / (nb[i] * nb[i]);
                    for j in 0..d {
                        let (x, y) = (va.row(i)[j], vb.row(i)[j]);
                        da[i * d + j] = inv * y - ca * x;
                        db[i * d + j] = inv * x - cb * y;
                    }
                }
                acc(*a, Tensor::from_parts(n, d, da));
                acc(*b, Tensor::from_parts(n, d, db));
            }
            Op::SoftmaxNll { scores, targets, tau, probs } => {
                let scale = g.data()[0] / (tau * targets.len() as f64);
                let mut out = probs.clone();
                let c = out.cols();
                for (i, &t) in targets.iter().enumerate() {
                    out.data_mut()[i * c + t] -= 1.0;
                }
                out.data_mut().iter_mut().for_each(|v| *v *= scale);
                acc(*scores, out);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Tensor::filled(r, c, g.data()[0]));
            }
            Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    data.extend(g.data().iter().map(|v| v / r as f64));
                }
                acc(*a, Tensor::from_parts(r, c, data));
            }
            Op::LinearCombination { terms, coeffs } => {
                let cv = self.value(*coeffs).data().to_vec();
                let mut dc = vec![0.0; terms.len()];
                for (k, &t) in terms.iter().enumerate() {
                    if needs(t) {
                        acc(t, g.scale(cv[k]));
                    }
                    dc[k] = dot(g.data(), self.value(t).data());
                }
                acc(*coeffs, Tensor::from_parts(1, terms.len(), dc));
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn row_norms(t: &Tensor, side: &'static str) -> Result<Vec<f64>, NumError> {
    (0..t.rows())
        .map(|i| {
            let n = dot(t.row(i), t.row(i)).sqrt();
            if n < COSINE_EPS {
                Err(NumError::DegenerateRow { side, row: i })
            } else {
                Ok(n)
            }
        })
        .collect()
}

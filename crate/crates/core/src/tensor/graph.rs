//! Tape-based reverse-mode differentiation.
//!
//! Operations are recorded in execution order, so the node list is already
//! topologically sorted and backward is a single reverse sweep that visits
//! each node once.

use super::{GradStore, ParamId, ParamStore, Scalar, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation kinds, used for diagnostics and backward fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Constant,
    Param,
    MatMul,
    Transpose,
    Add,
    Sub,
    AddBias,
    Mul,
    Affine,
    ConcatCols,
    ConcatRows,
    SliceCols,
    SliceRows,
    GatherRows,
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
    Log,
    Sum,
    Mean,
    Bilinear,
    SoftmaxCrossEntropy,
}

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Bilinear { left: Var, weight: Var, right: Var },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, excluded: Vec<Option<usize>> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Constant => OpKind::Constant,
            Op::Param(_) => OpKind::Param,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Mul(..) => OpKind::Mul,
            Op::Affine(..) => OpKind::Affine,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Log(_) => OpKind::Log,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Bilinear { .. } => OpKind::Bilinear,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
        }
    }
}

struct Node<T> {
    // `None` for parameters, whose value lives in the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradient buffers of one backward sweep. With a sink, parameter
/// gradients accumulate there instead of in per-node buffers.
struct Sweep<'s, T> {
    nodes: Vec<Option<Tensor<T>>>,
    sink: Option<&'s mut GradStore<T>>,
}

impl<T: Scalar> Sweep<'_, T> {
    /// Gradient buffer of `v`, zero-filled on first use; `None` when `v`
    /// needs no gradient.
    fn slot(&mut self, graph: &Graph<'_, T>, v: Var) -> Option<&mut Tensor<T>> {
        let node = &graph.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        if let (Some(sink), Op::Param(id)) = (self.sink.as_deref_mut(), &node.op) {
            return Some(sink.get_mut(*id));
        }
        Some(self.nodes[v.0].get_or_insert_with(|| Tensor::zeros(graph.value(v).shape())))
    }

    fn add(&mut self, graph: &Graph<'_, T>, v: Var, contrib: Tensor<T>) {
        let node = &graph.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        if let (Some(sink), Op::Param(id)) = (self.sink.as_deref_mut(), &node.op) {
            sink.get_mut(*id).add_assign(&contrib);
            return;
        }
        match &mut self.nodes[v.0] {
            Some(acc) => acc.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }
}

/// Per-node gradients from a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; `None` when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    fault: Option<(OpKind, T)>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::new(), param_vars: vec![None; params.len()], fault: None }
    }

    /// Scales every input gradient produced by the backward rule of `kind`.
    /// Exists so gradient checks can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind, factor: T) {
        self.fault = Some((kind, factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::Numeric { op: format!("{:?}", op.kind()) });
        }
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::Transpose(a)
            | Op::Affine(a, _)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::GatherRows(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Bilinear { left, weight, right } => vec![*left, *weight, *right],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, TensorError> {
        self.push(value, Op::Constant)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn mat_dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// `a·b`, or `a·bᵀ` when `trans_b`.
    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (m, k) = self.mat_dims(a);
        let (br, bc) = self.mat_dims(b);
        let (bk, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != bk {
            return Err(TensorError::dims("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, false);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, trans_b })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// `a·bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = transpose(self.value(a));
        self.push(out, Op::Transpose(a))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::dims(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.len() != ta.cols() || tb.rows() != 1 {
            return Err(TensorError::dims("add_bias", ta.shape(), tb.shape()));
        }
        let c = ta.cols();
        let data = ta.data().iter().enumerate().map(|(i, &x)| x + tb.data()[i % c]).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(out, Op::AddBias(a, bias))
    }

    /// `scale·a + shift`.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, TensorError> {
        self.affine(a, factor, T::zero())
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var, TensorError> {
        self.affine(a, -T::one(), T::one())
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::Contract("empty concat".into()))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(TensorError::dims(
                    "concat_cols",
                    self.value(*first).shape(),
                    self.value(p).shape(),
                ));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(Tensor::from_parts(vec![rows, cols], data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::Contract("empty concat".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(TensorError::dims("concat_rows", self.value(*first).shape(), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(Tensor::from_parts(vec![rows, cols], data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        if len == 0 || start + len > t.cols() {
            return Err(TensorError::Contract(format!(
                "column slice {start}..{} out of range for shape {:?}",
                start + len,
                t.shape()
            )));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        self.push(Tensor::from_parts(vec![rows, len], data), Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        if len == 0 || start + len > t.rows() {
            return Err(TensorError::Contract(format!(
                "row slice {start}..{} out of range for shape {:?}",
                start + len,
                t.shape()
            )));
        }
        let c = t.cols();
        let data = t.data()[start * c..(start + len) * c].to_vec();
        self.push(Tensor::from_parts(vec![len, c], data), Op::SliceRows(a, start))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, TensorError> {
        self.slice_rows(a, i, 1)
    }

    /// Selects rows of `a` by index; `None` yields a zero row.
    pub fn gather_rows(&mut self, a: Var, rows: &[Option<usize>]) -> Result<Var, TensorError> {
        let t = self.value(a);
        let c = t.cols();
        if rows.is_empty() {
            return Err(TensorError::Contract("gather of zero rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for r in rows {
            match *r {
                Some(i) if i < t.rows() => data.extend_from_slice(t.row(i)),
                Some(i) => {
                    return Err(TensorError::Contract(format!(
                        "gather index {i} out of range for shape {:?}",
                        t.shape()
                    )))
                }
                None => data.extend(std::iter::repeat(T::zero()).take(c)),
            }
        }
        self.push(Tensor::from_parts(vec![rows.len(), c], data), Op::GatherRows(a, rows.to_vec()))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(T::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(T::ln);
        self.push(out, Op::Log(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let m = t.sum() / T::of(t.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    /// Row-wise bilinear form: `out[i,k] = left[i]ᵀ · weight[k] · right[i]`
    /// with `weight` of shape `[classes, left_dim, right_dim]`.
    pub fn bilinear(&mut self, left: Var, weight: Var, right: Var) -> Result<Var, TensorError> {
        let (tl, tw, tr) = (self.value(left), self.value(weight), self.value(right));
        let ws = tw.shape();
        if ws.len() != 3
            || ws[1] != tl.cols()
            || ws[2] != tr.cols()
            || tl.rows() != tr.rows()
        {
            return Err(TensorError::dims("bilinear", tl.shape(), ws));
        }
        let (n, classes, p, q) = (tl.rows(), ws[0], ws[1], ws[2]);
        let mut out = vec![T::zero(); n * classes];
        let mut lw = vec![T::zero(); n * q];
        for k in 0..classes {
            let wk = &tw.data()[k * p * q..(k + 1) * p * q];
            T::gemm(n, p, q, tl.data(), false, wk, false, &mut lw, false);
            for i in 0..n {
                out[i * classes + k] =
                    lw[i * q..(i + 1) * q].iter().zip(tr.row(i)).map(|(&x, &y)| x * y).sum();
            }
        }
        self.push(Tensor::from_parts(vec![n, classes], out), Op::Bilinear { left, weight, right })
    }

    /// Summed softmax cross-entropy of each row of `logits` against
    /// `targets`. `excluded[i]` names a column removed from row `i`'s
    /// support (treated as a score of negative infinity).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        excluded: &[Option<usize>],
    ) -> Result<Var, TensorError> {
        let t = self.value(logits);
        if targets.len() != t.rows() || excluded.len() != t.rows() {
            return Err(TensorError::Contract(format!(
                "cross-entropy over {} rows given {} targets",
                t.rows(),
                targets.len()
            )));
        }
        let mut total = T::zero();
        for (i, (&target, &skip)) in targets.iter().zip(excluded).enumerate() {
            if target >= t.cols() || Some(target) == skip {
                return Err(TensorError::Contract(format!(
                    "row {i}: target column {target} is out of range or excluded"
                )));
            }
            let row = t.row(i);
            let lse = masked_logsumexp(row, skip);
            total = total + lse - row[target];
        }
        self.push(
            Tensor::scalar(total),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                excluded: excluded.to_vec(),
            },
        )
    }

    /// Gradients of all nodes with respect to scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let mut sweep = Sweep { nodes: Vec::new(), sink: None };
        self.sweep(loss, T::one(), &mut sweep)?;
        Ok(Gradients { grads: sweep.nodes })
    }

    /// Gradient of `loss` for every parameter; unreachable parameters get zeros.
    pub fn backward(&self, loss: Var) -> Result<GradStore<T>, TensorError> {
        let mut store = GradStore::zeros_like(self.params);
        self.backward_into(loss, T::one(), &mut store)?;
        Ok(store)
    }

    /// Adds `scale · ∂loss/∂θ` into `grads`.
    pub fn backward_into(
        &self,
        loss: Var,
        scale: T,
        grads: &mut GradStore<T>,
    ) -> Result<(), TensorError> {
        // seeding the sweep with `scale` scales every gradient, which lets
        // parameter contributions land in `grads` directly
        let mut sweep = Sweep { nodes: Vec::new(), sink: Some(grads) };
        self.sweep(loss, scale, &mut sweep)
    }

    fn sweep(&self, loss: Var, seed: T, sweep: &mut Sweep<'_, T>) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        sweep.nodes = (0..self.nodes.len()).map(|_| None).collect();
        sweep.nodes[loss.0] = Some(Tensor::full(self.value(loss).shape(), seed));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = sweep.nodes[idx].take() else { continue };
            // every rule is linear in the incoming gradient, so a fault
            // scales it once up front
            let faulted = match self.fault {
                Some((kind, factor)) if kind == node.op.kind() => Some(g.map(|x| x * factor)),
                _ => None,
            };
            let upstream = faulted.as_ref().unwrap_or(&g);
            if !self.backward_in_place(Var(idx), upstream, sweep) {
                for (input, contrib) in self.backward_rule(Var(idx), upstream) {
                    sweep.add(self, input, contrib);
                }
            }
            sweep.nodes[idx] = Some(g);
        }
        Ok(())
    }

    /// Rules that accumulate straight into the input's gradient buffer,
    /// which avoids a full-size temporary per use. Returns `false` for
    /// operations left to [`Self::backward_rule`].
    fn backward_in_place(&self, out: Var, g: &Tensor<T>, sweep: &mut Sweep<'_, T>) -> bool {
        match &self.nodes[out.0].op {
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = g.cols();
                if let Some(da) = sweep.slot(self, *a) {
                    // dA += G·Bᵀ (or G·B when B was used transposed)
                    T::gemm(m, n, k, g.data(), false, tb.data(), !trans_b, da.data_mut(), true);
                }
                if let Some(db) = sweep.slot(self, *b) {
                    if *trans_b {
                        // B is n×k: dB += Gᵀ·A
                        T::gemm(n, m, k, g.data(), true, ta.data(), false, db.data_mut(), true);
                    } else {
                        // B is k×n: dB += Aᵀ·G
                        T::gemm(k, m, n, ta.data(), true, g.data(), false, db.data_mut(), true);
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let Some(ga) = sweep.slot(self, *a) else { return true };
                let (ac, len) = (ga.cols(), g.cols());
                for r in 0..g.rows() {
                    let dst = &mut ga.data_mut()[r * ac + start..r * ac + start + len];
                    for (d, &x) in dst.iter_mut().zip(g.row(r)) {
                        *d = *d + x;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let Some(ga) = sweep.slot(self, *a) else { return true };
                let c = ga.cols();
                let dst = &mut ga.data_mut()[start * c..start * c + g.len()];
                for (d, &x) in dst.iter_mut().zip(g.data()) {
                    *d = *d + x;
                }
            }
            Op::GatherRows(a, rows) => {
                let Some(ga) = sweep.slot(self, *a) else { return true };
                let c = ga.cols();
                for (r, idx) in rows.iter().enumerate() {
                    if let Some(i) = *idx {
                        let dst = &mut ga.data_mut()[i * c..(i + 1) * c];
                        for (d, &x) in dst.iter_mut().zip(g.row(r)) {
                            *d = *d + x;
                        }
                    }
                }
            }
            _ => return false,
        }
        true
    }

    fn backward_rule(&self, out: Var, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let y = self.value(out);
        match &self.nodes[out.0].op {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul { .. } | Op::SliceCols(..) | Op::SliceRows(..) | Op::GatherRows(..) => {
                unreachable!("handled by backward_in_place")
            }
            Op::Transpose(a) => {
                let mut ga = transpose(g);
                ga = Tensor::from_parts(self.value(*a).shape().to_vec(), ga.into_data());
                vec![(*a, ga)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::AddBias(a, bias) => {
                let tb = self.value(*bias);
                let c = g.cols();
                let mut gb = vec![T::zero(); c];
                for (i, &x) in g.data().iter().enumerate() {
                    gb[i % c] = gb[i % c] + x;
                }
                vec![(*a, g.clone()), (*bias, Tensor::from_parts(tb.shape().to_vec(), gb))]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = zip(g, tb, |x, y| x * y);
                let gb = zip(g, ta, |x, y| x * y);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Affine(a, scale) => {
                let s = *scale;
                vec![(*a, g.map(|x| x * s))]
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let tp = self.value(p);
                    let pc = tp.cols();
                    let mut data = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row(r)[offset..offset + pc]);
                    }
                    offset += pc;
                    res.push((p, Tensor::from_parts(tp.shape().to_vec(), data)));
                }
                res
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let tp = self.value(p);
                    let len = tp.rows() * c;
                    let data = g.data()[offset..offset + len].to_vec();
                    offset += len;
                    res.push((p, Tensor::from_parts(tp.shape().to_vec(), data)));
                }
                res
            }
            Op::Sigmoid(a) => vec![(*a, zip(g, y, |gi, yi| gi * yi * (T::one() - yi)))],
            Op::Tanh(a) => vec![(*a, zip(g, y, |gi, yi| gi * (T::one() - yi * yi)))],
            Op::Relu(a) => {
                vec![(*a, zip(g, y, |gi, yi| if yi > T::zero() { gi } else { T::zero() }))]
            }
            Op::Softmax(a) => {
                let c = y.cols();
                let mut ga = vec![T::zero(); y.len()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..c {
                        ga[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*a, Tensor::from_parts(y.shape().to_vec(), ga))]
            }
            Op::Log(a) => vec![(*a, zip(g, self.value(*a), |gi, xi| gi / xi))],
            Op::Sum(a) => {
                let s = g.data()[0];
                vec![(*a, Tensor::full(self.value(*a).shape(), s))]
            }
            Op::Mean(a) => {
                let ta = self.value(*a);
                let s = g.data()[0] / T::of(ta.len() as f64);
                vec![(*a, Tensor::full(ta.shape(), s))]
            }
            Op::Bilinear { left, weight, right } => self.bilinear_backward(*left, *weight, *right, g),
            Op::SoftmaxCrossEntropy { logits, targets, excluded } => {
                let t = self.value(*logits);
                let scale = g.data()[0];
                let c = t.cols();
                let mut gl = vec![T::zero(); t.len()];
                for r in 0..t.rows() {
                    let row = t.row(r);
                    let lse = masked_logsumexp(row, excluded[r]);
                    for j in 0..c {
                        if Some(j) != excluded[r] {
                            gl[r * c + j] = (row[j] - lse).exp() * scale;
                        }
                    }
                    gl[r * c + targets[r]] = gl[r * c + targets[r]] - scale;
                }
                vec![(*logits, Tensor::from_parts(t.shape().to_vec(), gl))]
            }
        }
    }

    fn bilinear_backward(
        &self,
        left: Var,
        weight: Var,
        right: Var,
        g: &Tensor<T>,
    ) -> Vec<(Var, Tensor<T>)> {
        let (tl, tw, tr) = (self.value(left), self.value(weight), self.value(right));
        let ws = tw.shape();
        let (n, classes, p, q) = (tl.rows(), ws[0], ws[1], ws[2]);
        let mut gl = vec![T::zero(); n * p];
        let mut gr = vec![T::zero(); n * q];
        let mut gw = vec![T::zero(); tw.len()];
        let mut tmp_p = vec![T::zero(); n * p];
        let mut tmp_q = vec![T::zero(); n * q];
        let mut scaled = vec![T::zero(); n * q];
        for k in 0..classes {
            let wk = &tw.data()[k * p * q..(k + 1) * p * q];
            let gk = |i: usize| g.data()[i * classes + k];
            // dL_i += g_ik · W_k · r_i
            T::gemm(n, q, p, tr.data(), false, wk, true, &mut tmp_p, false);
            for i in 0..n {
                for a in 0..p {
                    gl[i * p + a] = gl[i * p + a] + gk(i) * tmp_p[i * p + a];
                }
            }
            // dR_i += g_ik · W_kᵀ · l_i
            T::gemm(n, p, q, tl.data(), false, wk, false, &mut tmp_q, false);
            for i in 0..n {
                for b in 0..q {
                    gr[i * q + b] = gr[i * q + b] + gk(i) * tmp_q[i * q + b];
                }
            }
            // dW_k = Lᵀ · diag(g_k) · R
            for i in 0..n {
                for b in 0..q {
                    scaled[i * q + b] = gk(i) * tr.data()[i * q + b];
                }
            }
            T::gemm(p, n, q, tl.data(), true, &scaled, false, &mut gw[k * p * q..(k + 1) * p * q], false);
        }
        vec![
            (left, Tensor::from_parts(tl.shape().to_vec(), gl)),
            (weight, Tensor::from_parts(ws.to_vec(), gw)),
            (right, Tensor::from_parts(tr.shape().to_vec(), gr)),
        ]
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn transpose<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (t.rows(), t.cols());
    let mut data = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], data)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn masked_logsumexp<T: Scalar>(row: &[T], skip: Option<usize>) -> T {
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(_, &x)| x)
        .fold(T::neg_infinity(), T::max);
    let s: T = row
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(_, &x)| (x - max).exp())
        .sum();
    max + s.ln()
}

pub(crate) fn softmax_rows<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let c = t.cols();
    let mut data = Vec::with_capacity(t.len());
    for r in 0..t.rows() {
        let row = t.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        data.extend(exps.into_iter().map(|e| e / z));
    }
    debug_assert_eq!(data.len(), t.rows() * c);
    Tensor::from_parts(t.shape().to_vec(), data)
}

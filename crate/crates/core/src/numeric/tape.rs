//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every forward operation as a node holding its value and
//! whatever intermediates its adjoint needs. Nodes are appended in execution
//! order, so the node list is already topologically sorted and
//! [`Tape::gradients`] is a single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use super::matrix::Matrix;
use super::params::ParamStore;
use super::real::{lit, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics produced by a training-mode batch-norm node.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `alpha · a · bᵀ`
    MatMulNt(NodeId, NodeId, T),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulConst(NodeId, Arc<Matrix<T>>),
    Scale(NodeId, T),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Arc<Vec<usize>>),
    ScatterAddRows(NodeId, Arc<Vec<usize>>),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
    },
    BatchNormTrain {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
        row_mask: Arc<Vec<bool>>,
        n_valid: usize,
    },
    BatchNormInfer {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
    },
    Sum(NodeId),
    /// Scalar-valued function whose gradient was computed during the forward
    /// pass (listwise losses).
    ScalarFn(NodeId, Matrix<T>),
}

struct Node<T> {
    value: Arc<Matrix<T>>,
    op: Op<T>,
}

/// Append-only record of a forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bound_params: HashMap<usize, NodeId>,
}

/// Adjoints of every node reachable backwards from an output.
pub struct Gradients<T> {
    adjoints: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Matrix<T>> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    /// Number of nodes that received an adjoint.
    pub fn visited(&self) -> usize {
        self.adjoints.iter().filter(|a| a.is_some()).count()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bound_params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> NodeId {
        self.push_arc(Arc::new(value), op)
    }

    fn push_arc(&mut self, value: Arc<Matrix<T>>, op: Op<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    /// Records an input that receives no parameter gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter. Binding the same name twice returns the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<NodeId> {
        let index = store.index_of(name)?;
        if let Some(&id) = self.bound_params.get(&index) {
            return Ok(id);
        }
        let id = self.push_arc(store.value_arc_at(index), Op::Leaf);
        self.bound_params.insert(index, id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `alpha · a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId, alpha: T) -> Result<NodeId> {
        let mut out = self.value(a).matmul_nt(self.value(b))?;
        if alpha != T::one() {
            out.data_mut().iter_mut().for_each(|x| *x = *x * alpha);
        }
        Ok(self.push(out, Op::MatMulNt(a, b, alpha)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "add",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let out = va.zip_map(vb, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: va.shape(),
                rhs: vr.shape(),
            });
        }
        let mut out = va.clone();
        let r = vr.row(0);
        for i in 0..out.rows() {
            for (x, &b) in out.row_mut(i).iter_mut().zip(r) {
                *x = *x + b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Elementwise product with a constant matrix of the same shape.
    pub fn mul_const(&mut self, a: NodeId, c: Arc<Matrix<T>>) -> Result<NodeId> {
        let va = self.value(a);
        if va.shape() != c.shape() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: va.shape(),
                rhs: c.shape(),
            });
        }
        let out = va.zip_map(&c, |x, y| x * y);
        Ok(self.push(out, Op::MulConst(a, c)))
    }

    /// Zeroes every row whose flag is false.
    pub fn mask_rows(&mut self, a: NodeId, row_mask: &[bool]) -> Result<NodeId> {
        let (rows, cols) = self.shape(a);
        if row_mask.len() != rows {
            return Err(Error::Shape {
                op: "mask_rows",
                lhs: (rows, cols),
                rhs: (row_mask.len(), 1),
            });
        }
        let mut c = Matrix::zeros(rows, cols);
        for (i, _) in row_mask.iter().enumerate().filter(|(_, &v)| v) {
            c.row_mut(i).iter_mut().for_each(|x| *x = T::one());
        }
        self.mul_const(a, Arc::new(c))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape(),
                    rhs: self.value(p).shape(),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let dst = out.row_mut(i);
            let mut off = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(i);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape(),
                    rhs: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start + len > va.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: va.shape(),
                rhs: (start, len),
            });
        }
        let c = va.cols();
        let out = Matrix::from_vec(len, c, va.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: va.shape(),
                rhs: (start, len),
            });
        }
        let mut out = Matrix::zeros(va.rows(), len);
        for i in 0..va.rows() {
            out.row_mut(i).copy_from_slice(&va.row(i)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Output row `r` is input row `indices[r]`.
    pub fn gather_rows(&mut self, a: NodeId, indices: Arc<Vec<usize>>) -> Result<NodeId> {
        let va = self.value(a);
        let mut out = Matrix::zeros(indices.len(), va.cols());
        for (r, &src) in indices.iter().enumerate() {
            if src >= va.rows() {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: va.shape(),
                    rhs: (src, 0),
                });
            }
            out.row_mut(r).copy_from_slice(va.row(src));
        }
        Ok(self.push(out, Op::GatherRows(a, indices)))
    }

    /// Adds input row `r` into output row `indices[r]` of an `n_out`-row result.
    pub fn scatter_add_rows(
        &mut self,
        a: NodeId,
        indices: Arc<Vec<usize>>,
        n_out: usize,
    ) -> Result<NodeId> {
        let va = self.value(a);
        if indices.len() != va.rows() {
            return Err(Error::Shape {
                op: "scatter_add_rows",
                lhs: va.shape(),
                rhs: (indices.len(), n_out),
            });
        }
        let mut out = Matrix::zeros(n_out, va.cols());
        for (r, &dst) in indices.iter().enumerate() {
            if dst >= n_out {
                return Err(Error::Shape {
                    op: "scatter_add_rows",
                    lhs: va.shape(),
                    rhs: (dst, n_out),
                });
            }
            for (o, &x) in out.row_mut(dst).iter_mut().zip(va.row(r)) {
                *o = *o + x;
            }
        }
        Ok(self.push(out, Op::ScatterAddRows(a, indices)))
    }

    /// Row softmax restricted to valid columns; masked columns output exactly 0.
    pub fn softmax_rows(&mut self, a: NodeId, col_mask: Option<&[bool]>) -> Result<NodeId> {
        let out = softmax_rows(self.value(a), col_mask)?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: T) -> Result<NodeId> {
        let vx = self.value(x);
        check_affine("layer_norm", vx, self.value(gain), self.value(bias))?;
        let (rows, cols) = vx.shape();
        let n = lit::<T>(cols as f64);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = vx.row(i);
            let mean = r.iter().copied().sum::<T>() / n;
            let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = (var + eps).sqrt().recip();
            for (h, &v) in xhat.row_mut(i).iter_mut().zip(r) {
                *h = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let out = affine_cols(&xhat, self.value(gain), self.value(bias));
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Column-wise normalization with statistics over the rows flagged valid.
    /// Every row is normalized with those statistics.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        row_mask: Arc<Vec<bool>>,
        eps: T,
    ) -> Result<(NodeId, BatchStats<T>)> {
        let vx = self.value(x);
        check_affine("batch_norm", vx, self.value(gain), self.value(bias))?;
        let (rows, cols) = vx.shape();
        if row_mask.len() != rows {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: (rows, cols),
                rhs: (row_mask.len(), 1),
            });
        }
        let n_valid = row_mask.iter().filter(|&&v| v).count();
        if n_valid == 0 {
            return Err(Error::DegenerateRow {
                op: "batch_norm",
                row: 0,
            });
        }
        let nv = lit::<T>(n_valid as f64);
        let mut mean = vec![T::zero(); cols];
        for i in (0..rows).filter(|&i| row_mask[i]) {
            for (m, &v) in mean.iter_mut().zip(vx.row(i)) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nv);
        let mut var = vec![T::zero(); cols];
        for i in (0..rows).filter(|&i| row_mask[i]) {
            for ((s, &v), &m) in var.iter_mut().zip(vx.row(i)).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s = *s / nv);
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let xhat = standardize_cols(vx, &mean, &inv_std);
        let out = affine_cols(&xhat, self.value(gain), self.value(bias));
        let id = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                row_mask,
                n_valid,
            },
        );
        Ok((id, BatchStats { mean, var }))
    }

    /// Column-wise affine normalization with fixed statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<NodeId> {
        let vx = self.value(x);
        check_affine("batch_norm", vx, self.value(gain), self.value(bias))?;
        if mean.len() != vx.cols() || var.len() != vx.cols() {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: vx.shape(),
                rhs: (1, mean.len()),
            });
        }
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let xhat = standardize_cols(vx, mean, &inv_std);
        let out = affine_cols(&xhat, self.value(gain), self.value(bias));
        Ok(self.push(
            out,
            Op::BatchNormInfer {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// Records a scalar `value = f(a)` together with `∂f/∂a`.
    pub fn scalar_fn(&mut self, a: NodeId, value: T, grad: Matrix<T>) -> Result<NodeId> {
        if grad.shape() != self.shape(a) {
            return Err(Error::Shape {
                op: "scalar_fn",
                lhs: self.shape(a),
                rhs: grad.shape(),
            });
        }
        Ok(self.push(Matrix::filled(1, 1, value), Op::ScalarFn(a, grad)))
    }

    /// Adjoints of every node reachable from the scalar `output`.
    pub fn gradients(&self, output: NodeId) -> Result<Gradients<T>> {
        let (rows, cols) = self.shape(output);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarOutput { rows, cols });
        }
        let mut adj: Vec<Option<Matrix<T>>> = Vec::with_capacity(output.0 + 1);
        adj.resize_with(output.0 + 1, || None);
        adj[output.0] = Some(Matrix::filled(1, 1, T::one()));

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    /// Reverse sweep from `output`, accumulating parameter gradients into `store`.
    /// `store` must be the store the parameters were bound from.
    pub fn backward(&self, output: NodeId, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(output)?;
        for (&index, &id) in &self.bound_params {
            if let Some(g) = grads.get(id) {
                store.accumulate_grad_at(index, g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Matrix<T>, adj: &mut [Option<Matrix<T>>]) -> Result<()> {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul_nt(self.value(*b))?;
                let db = self.value(*a).matmul_tn(g)?;
                accumulate(adj, *a, da);
                accumulate(adj, *b, db);
            }
            Op::MatMulNt(a, b, alpha) => {
                let mut da = g.matmul(self.value(*b))?;
                let mut db = g.matmul_tn(self.value(*a))?;
                if *alpha != T::one() {
                    da.data_mut().iter_mut().for_each(|x| *x = *x * *alpha);
                    db.data_mut().iter_mut().for_each(|x| *x = *x * *alpha);
                }
                accumulate(adj, *a, da);
                accumulate(adj, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *row, column_sums(g));
            }
            Op::MulConst(a, c) => accumulate(adj, *a, g.zip_map(c, |x, y| x * y)),
            Op::Scale(a, s) => accumulate(adj, *a, g.map(|x| x * *s)),
            Op::Relu(a) => {
                let out = &self.nodes[i].value;
                accumulate(adj, *a, g.zip_map(out, |d, y| if y > T::zero() { d } else { T::zero() }));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut d = Matrix::zeros(g.rows(), c);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                    }
                    off += c;
                    accumulate(adj, p, d);
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut off = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    let d = Matrix::from_vec(r, cols, g.data()[off * cols..(off + r) * cols].to_vec())?;
                    off += r;
                    accumulate(adj, p, d);
                }
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Matrix::zeros(rows, cols);
                d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(adj, *a, d);
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(adj, *a, d);
            }
            Op::GatherRows(a, indices) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Matrix::zeros(rows, cols);
                for (r, &src) in indices.iter().enumerate() {
                    for (o, &x) in d.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o = *o + x;
                    }
                }
                accumulate(adj, *a, d);
            }
            Op::ScatterAddRows(a, indices) => {
                let cols = g.cols();
                let mut d = Matrix::zeros(indices.len(), cols);
                for (r, &dst) in indices.iter().enumerate() {
                    d.row_mut(r).copy_from_slice(g.row(dst));
                }
                accumulate(adj, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for ((o, &p), &q) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - dot);
                    }
                }
                accumulate(adj, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).row(0);
                let (rows, cols) = xhat.shape();
                let n = lit::<T>(cols as f64);
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.row(r);
                    let hr = xhat.row(r);
                    let dh: Vec<T> = gr.iter().zip(gv).map(|(&d, &w)| d * w).collect();
                    let mean_dh = dh.iter().copied().sum::<T>() / n;
                    let mean_dhh = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / n;
                    for ((o, &d), &h) in dx.row_mut(r).iter_mut().zip(&dh).zip(hr) {
                        *o = inv_std[r] * (d - mean_dh - h * mean_dhh);
                    }
                }
                accumulate(adj, *x, dx);
                accumulate(adj, *gain, column_sums(&g.zip_map(xhat, |a, b| a * b)));
                accumulate(adj, *bias, column_sums(g));
            }
            Op::BatchNormTrain {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                row_mask,
                n_valid,
            } => {
                let gv = self.value(*gain).row(0);
                let (rows, cols) = xhat.shape();
                let nv = lit::<T>(*n_valid as f64);
                let mut sum_dh = vec![T::zero(); cols];
                let mut sum_dhh = vec![T::zero(); cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let dh = g[(r, c)] * gv[c];
                        sum_dh[c] = sum_dh[c] + dh;
                        sum_dhh[c] = sum_dhh[c] + dh * xhat[(r, c)];
                    }
                }
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let dh = g[(r, c)] * gv[c];
                        dx[(r, c)] = if row_mask[r] {
                            inv_std[c] * (dh - sum_dh[c] / nv - xhat[(r, c)] * sum_dhh[c] / nv)
                        } else {
                            inv_std[c] * dh
                        };
                    }
                }
                accumulate(adj, *x, dx);
                accumulate(adj, *gain, column_sums(&g.zip_map(xhat, |a, b| a * b)));
                accumulate(adj, *bias, column_sums(g));
            }
            Op::BatchNormInfer {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).row(0);
                let (rows, cols) = xhat.shape();
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        dx[(r, c)] = g[(r, c)] * gv[c] * inv_std[c];
                    }
                }
                accumulate(adj, *x, dx);
                accumulate(adj, *gain, column_sums(&g.zip_map(xhat, |a, b| a * b)));
                accumulate(adj, *bias, column_sums(g));
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                accumulate(adj, *a, Matrix::filled(rows, cols, g.scalar()));
            }
            Op::ScalarFn(a, grad) => {
                let s = g.scalar();
                accumulate(adj, *a, grad.map(|x| x * s));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(adj: &mut [Option<Matrix<T>>], id: NodeId, d: Matrix<T>) {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn column_sums<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, &x) in out.row_mut(0).iter_mut().zip(m.row(r)) {
            *o = *o + x;
        }
    }
    out
}

fn check_affine<T: Real>(
    op: &'static str,
    x: &Matrix<T>,
    gain: &Matrix<T>,
    bias: &Matrix<T>,
) -> Result<()> {
    for v in [gain, bias] {
        if v.shape() != (1, x.cols()) {
            return Err(Error::Shape {
                op,
                lhs: x.shape(),
                rhs: v.shape(),
            });
        }
    }
    Ok(())
}

fn standardize_cols<T: Real>(x: &Matrix<T>, mean: &[T], inv_std: &[T]) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        for (c, (o, &v)) in out.row_mut(r).iter_mut().zip(x.row(r)).enumerate() {
            *o = (v - mean[c]) * inv_std[c];
        }
    }
    out
}

fn affine_cols<T: Real>(xhat: &Matrix<T>, gain: &Matrix<T>, bias: &Matrix<T>) -> Matrix<T> {
    let (g, b) = (gain.row(0), bias.row(0));
    let mut out = xhat.clone();
    for r in 0..out.rows() {
        for ((o, &w), &s) in out.row_mut(r).iter_mut().zip(g).zip(b) {
            *o = *o * w + s;
        }
    }
    out
}

/// Masked, max-stabilized row softmax.
pub fn softmax_rows<T: Real>(x: &Matrix<T>, col_mask: Option<&[bool]>) -> Result<Matrix<T>> {
    if let Some(m) = col_mask {
        if m.len() != x.cols() {
            return Err(Error::Shape {
                op: "softmax_rows",
                lhs: x.shape(),
                rhs: (1, m.len()),
            });
        }
    }
    let valid = |j: usize| col_mask.is_none_or(|m| m[j]);
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = (0..row.len())
            .filter(|&j| valid(j))
            .map(|j| row[j])
            .fold(None, |m: Option<T>, v| Some(m.map_or(v, |m| m.max(v))))
            .ok_or(Error::DegenerateRow {
                op: "softmax_rows",
                row: r,
            })?;
        let o = out.row_mut(r);
        let mut total = T::zero();
        for j in (0..row.len()).filter(|&j| valid(j)) {
            let e = (row[j] - max).exp();
            o[j] = e;
            total = total + e;
        }
        o.iter_mut().for_each(|v| *v = *v / total);
    }
    Ok(out)
}

//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] is rebuilt for every forward pass. Leaves are either constants or
//! references to entries of a [`ParamStore`]; [`Tape::backward`] walks the
//! recorded nodes in reverse creation order and accumulates `∂loss/∂param`
//! into the store. Because nodes are only ever appended, reverse order visits
//! every node after all of its consumers.
//!
//! Scalars are `1×1` matrices throughout.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{solve_gram, solve_lu, Matrix};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub trainable: bool,
}

/// Owns every learnable value of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Names must be unique within a store.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter { name, value, grad, trainable: true });
        ParamId(self.params.len() - 1)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let id = self.add(name, value);
        self.params[id.0].trainable = false;
        id
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Global L2 norm of the gradients of all trainable parameters.
    pub fn grad_norm(&self) -> f64 {
        self.params.iter().filter(|p| p.trainable).flat_map(|p| p.grad.data()).map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    SoftmaxRows(Var),
    Solve(Var, Var),
    QrQ(Var, Matrix),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    LayerNorm(Var, Vec<f64>),
    Entry(Var, usize, usize),
    Sum(Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Record of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Leaf bound to a stored parameter; its gradient flows back on `backward`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a `1×m` row to every row of an `n×m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = broadcast_row(self.value(a), self.value(row), "add_row", |x, r| x + r)?;
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// Multiplies every row of an `n×m` matrix by a `1×m` row, elementwise.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = broadcast_row(self.value(a), self.value(row), "mul_row", |x, r| x * r)?;
        Ok(self.push(value, Op::MulRow(a, row)))
    }

    /// `a · s` for a `1×1` node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return shape_err(format!("scale_by expects a scalar, got {:?}", self.shape(s)));
        }
        let value = self.value(a).scale(self.value(s).item());
        Ok(self.push(value, Op::ScaleBy(a, s)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(logistic);
        self.push(value, Op::Sigmoid(a))
    }

    /// Softmax over all entries (used for simplex weights).
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_slice(self.value(a).data());
        let (r, c) = self.shape(a);
        let value = Matrix::from_vec(r, c, value).expect("softmax of finite input");
        self.push(value, Op::Softmax(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = src.clone();
        for i in 0..src.rows() {
            let row = softmax_slice(src.row(i));
            value.row_mut(i).copy_from_slice(&row);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// `a⁻¹ z` for square `a`.
    pub fn solve(&mut self, a: Var, z: Var) -> Result<Var> {
        let value = solve_gram(self.value(a), 0.0, self.value(z))?;
        Ok(self.push(value, Op::Solve(a, z)))
    }

    /// Orthonormal factor of the thin QR of `w`.
    pub fn qr_q(&mut self, w: Var) -> Result<Var> {
        let (q, r) = crate::linalg::qr_thin(self.value(w))?;
        Ok(self.push(q, Op::QrQ(w, r)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let rows = self.shape(a).0;
        if start + len > rows {
            return shape_err(format!("slice {start}..{} of {rows} rows", start + len));
        }
        let value = self.value(a).slice_rows(start, len);
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Matrix> = parts.iter().map(|p| self.value(*p).clone()).collect();
        let value = Matrix::vstack(&values)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut parts = Vec::with_capacity(ids.len() * t.cols());
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::Vocab { id, vocab: t.rows() });
            }
            parts.extend_from_slice(t.row(id));
        }
        let value = Matrix::from_vec(ids.len(), t.cols(), parts)?;
        Ok(self.push(value, Op::Gather(table, ids.to_vec())))
    }

    /// Per-row standardization `(x − mean)/sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let src = self.value(a);
        let m = src.cols() as f64;
        let mut value = src.clone();
        let mut inv_std = Vec::with_capacity(src.rows());
        for i in 0..src.rows() {
            let row = src.row(i);
            let mean = row.iter().sum::<f64>() / m;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, x) in value.row_mut(i).iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(value, Op::LayerNorm(a, inv_std))
    }

    pub fn entry(&mut self, a: Var, i: usize, j: usize) -> Var {
        let value = Matrix::scalar(self.value(a).get(i, j));
        self.push(value, Op::Entry(a, i, j))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Mean softmax cross-entropy of `n×C` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if l.rows() != labels.len() || l.rows() == 0 {
            return shape_err(format!("{} logit rows for {} labels", l.rows(), labels.len()));
        }
        if let Some(bad) = labels.iter().find(|y| **y >= l.cols()) {
            return shape_err(format!("label {bad} out of range for {} classes", l.cols()));
        }
        let loss = crate::training::cross_entropy(l, labels);
        Ok(self.push(Matrix::scalar(loss), Op::CrossEntropy(logits, labels.to_vec())))
    }

    /// Accumulates `∂loss/∂p` into every trainable parameter that reaches `loss`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return shape_err(format!("loss must be scalar, got {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if p.trainable {
                        p.grad.add_assign(&g);
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_unchecked(&self.value(*b).transpose());
                    let gb = self.value(*a).transpose().matmul_unchecked(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, column_sums(&g));
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    let ga = broadcast_row(&g, r, "mul_row", |x, r| x * r)?;
                    let gr = column_sums(&g.hadamard(self.value(*a))?);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *row, gr);
                }
                Op::ScaleBy(a, s) => {
                    let sv = self.value(*s).item();
                    let gs = g.hadamard(self.value(*a))?.sum();
                    accumulate(&mut grads, *s, Matrix::scalar(gs));
                    accumulate(&mut grads, *a, g.scale(sv));
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(g, y)| g * y).sum();
                    let ga = zip_map(&g, y, |g, y| y * (g - dot));
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for i in 0..y.rows() {
                        let (gr, yr) = (g.row(i), y.row(i));
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((o, g), y) in ga.row_mut(i).iter_mut().zip(gr).zip(yr) {
                            *o = y * (g - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Solve(a, z) => {
                    // u = A⁻¹z  ⇒  z̄ = A⁻ᵀū,  Ā = −z̄ uᵀ
                    let gz = solve_lu(&self.value(*a).transpose(), &g)?;
                    let ga = gz.matmul_unchecked(&node.value.transpose()).scale(-1.0);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *z, gz);
                }
                Op::QrQ(w, r) => {
                    let ga = qr_q_backward(&node.value, r, &g)?;
                    accumulate(&mut grads, *w, ga);
                }
                Op::SliceRows(a, start) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    ga.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.shape(*p).0;
                        accumulate(&mut grads, *p, g.slice_rows(offset, rows));
                        offset += rows;
                    }
                }
                Op::Gather(table, ids) => {
                    let (rows, cols) = self.shape(*table);
                    let mut gt = Matrix::zeros(rows, cols);
                    for (i, &id) in ids.iter().enumerate() {
                        for (o, v) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::LayerNorm(a, inv_std) => {
                    // x̄ = (ḡ − mean(ḡ) − y·mean(ḡ∘y)) / σ
                    let y = &node.value;
                    let m = y.cols() as f64;
                    let mut ga = g.clone();
                    for i in 0..y.rows() {
                        let (gr, yr) = (g.row(i), y.row(i));
                        let mg = gr.iter().sum::<f64>() / m;
                        let mgy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / m;
                        for ((o, g), y) in ga.row_mut(i).iter_mut().zip(gr).zip(yr) {
                            *o = (g - mg - y * mgy) * inv_std[i];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Entry(a, i, j) => {
                    let (rows, cols) = self.shape(*a);
                    let mut ga = Matrix::zeros(rows, cols);
                    ga.set(*i, *j, g.item());
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads, *a, Matrix::filled(rows, cols, g.item()));
                }
                Op::CrossEntropy(logits, labels) => {
                    let l = self.value(*logits);
                    let n = l.rows() as f64;
                    let mut gl = Matrix::zeros(l.rows(), l.cols());
                    for (i, &y) in labels.iter().enumerate() {
                        let p = softmax_slice(l.row(i));
                        for (c, pc) in p.into_iter().enumerate() {
                            let target = if c == y { 1.0 } else { 0.0 };
                            gl.set(i, c, g.item() * (pc - target) / n);
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).unwrap_or_else(|_| Matrix::zeros(a.rows(), a.cols()))
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

fn broadcast_row(a: &Matrix, row: &Matrix, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return shape_err(format!("{op}: row {:?} does not broadcast over {:?}", row.shape(), a.shape()));
    }
    let mut out = a.clone();
    for i in 0..a.rows() {
        for (o, r) in out.row_mut(i).iter_mut().zip(row.row(0)) {
            *o = f(*o, *r);
        }
    }
    Ok(out)
}

/// Thin-QR backward for the orthonormal factor only (`R̄ = 0`):
///
/// `W̄ = [Q̄ − Q(QᵀQ̄) + Q·tril(QᵀQ̄ − Q̄ᵀQ)] R⁻ᵀ`
///
/// which is the standard reverse-mode relation for `W = QR` specialised to a
/// loss that depends on `Q` alone.
fn qr_q_backward(q: &Matrix, r: &Matrix, gq: &Matrix) -> Result<Matrix> {
    let qt_gq = q.transpose().matmul_unchecked(gq);
    let skew = qt_gq.sub(&qt_gq.transpose())?;
    let n = skew.rows();
    let mut lower = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            lower.set(i, j, skew.get(i, j));
        }
    }
    let inner = gq.sub(&q.matmul_unchecked(&qt_gq))?.add(&q.matmul_unchecked(&lower))?;
    // inner · R⁻ᵀ = (R⁻¹ innerᵀ)ᵀ
    Ok(solve_lu(r, &inner.transpose())?.transpose())
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Forward ops append nodes; [`Tape::backward`] walks them in reverse and
//! accumulates vector-Jacobian products. Parameters are borrowed from a
//! [`ParamSet`] rather than copied onto the tape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::real::gemm;
use super::{Grads, NumericsError, ParamId, ParamSet, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

enum Value<T> {
    Owned(Tensor<T>),
    Param(usize),
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, T),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Ln(Var),
    Softmax(Var),
    MaskedFill(Var, Vec<bool>),
    LayerNorm(Var, Vec<T>),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    RowWhere(Vec<bool>, Var, Var),
    ScatterCols(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    RowSum(Var),
    WeightedSum(Var, Vec<T>),
    CrossEntropy(Var, Vec<usize>, Vec<bool>, Vec<T>),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of a forward computation.
pub struct Tape<'p, T: Real> {
    params: Option<&'p ParamSet<T>>,
    nodes: Vec<Node<T>>,
}

fn mismatch(op: &'static str, detail: alloc::string::String) -> NumericsError {
    NumericsError::ShapeMismatch { op, detail }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::from_f64(0.797_884_560_802_865_4);
    let k = T::from_f64(0.044_715);
    let half = T::from_f64(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let value = half * x * (T::one() + t);
    let d_inner = c * (T::one() + T::from_f64(3.0) * k * x * x);
    let deriv = half * (T::one() + t) + half * x * (T::one() - t * t) * d_inner;
    (value, deriv)
}

/// Row-wise softmax. Rows that are entirely `-inf` become all-zero.
pub(crate) fn softmax_rows<T: Real>(x: &[T], cols: usize, out: &mut [T]) {
    for (xr, yr) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = xr
            .iter()
            .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        if max == T::neg_infinity() {
            yr.iter_mut().for_each(|y| *y = T::zero());
            continue;
        }
        let mut sum = T::zero();
        for (y, &v) in yr.iter_mut().zip(xr) {
            *y = (v - max).exp();
            sum = sum + *y;
        }
        yr.iter_mut().for_each(|y| *y = *y / sum);
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet<T>) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => &self.params.expect("param node without param set").tensors()[*i],
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf; its gradient is available from [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let params = self.params.expect("tape has no parameter set");
        assert!(id.0 < params.len(), "unknown parameter {}", id.0);
        self.nodes.push(Node {
            value: Value::Param(id.0),
            op: Op::Param(id.0),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(mismatch("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_rows(m, n, out)?, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(mismatch("matmul_nt", format!("[{m},{k}] x [{n},{k2}]^T")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            true,
            &mut out,
            false,
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_rows(m, n, out)?, Op::MatMulNT(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::from_rows(n, m, out)?, Op::Transpose(a), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p + q)
            .collect();
        let t = Tensor::new(x.shape(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| p * q)
            .collect();
        let t = Tensor::new(x.shape(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (_, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(mismatch(
                "add_row",
                format!("cols {n} vs vector {}", self.value(row).len()),
            ));
        }
        let (x, r) = (self.value(a), self.value(row).data());
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(n) {
            chunk.iter_mut().zip(r).for_each(|(p, &q)| *p = *p + q);
        }
        let t = Tensor::new(x.shape(), data)?;
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(t, Op::AddRow(a, row), ng))
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (_, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(mismatch(
                "mul_row",
                format!("cols {n} vs vector {}", self.value(row).len()),
            ));
        }
        let (x, r) = (self.value(a), self.value(row).data());
        let mut data = x.data().to_vec();
        for chunk in data.chunks_mut(n) {
            chunk.iter_mut().zip(r).for_each(|(p, &q)| *p = *p * q);
        }
        let t = Tensor::new(x.shape(), data)?;
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(t, Op::MulRow(a, row), ng))
    }

    /// Scales row `i` of `a` by element `i` of a length-`rows` vector.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        if self.value(col).len() != m {
            return Err(mismatch(
                "mul_col",
                format!("rows {m} vs vector {}", self.value(col).len()),
            ));
        }
        let (x, c) = (self.value(a), self.value(col).data());
        let mut data = x.data().to_vec();
        for (chunk, &s) in data.chunks_mut(n).zip(c) {
            chunk.iter_mut().for_each(|p| *p = *p * s);
        }
        let t = Tensor::new(x.shape(), data)?;
        let ng = self.needs(a) || self.needs(col);
        Ok(self.push(t, Op::MulCol(a, col), ng))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&p| scale * p + shift).collect();
        let t = Tensor::new(x.shape(), data).expect("same shape");
        let ng = self.needs(a);
        self.push(t, Op::Affine(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.affine(a, s, T::zero())
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&p| f(p)).collect();
        let t = Tensor::new(x.shape(), data).expect("same shape");
        let ng = self.needs(a);
        self.push(t, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            Op::Relu(a),
        )
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, |x| gelu_parts(x).0, Op::Gelu(a))
    }

    /// Natural log, clamped below at the smallest positive normal value.
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::min_positive_value()).ln(), Op::Ln(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols();
        let mut out = vec![T::zero(); x.len()];
        softmax_rows(x.data(), n, &mut out);
        let t = Tensor::new(x.shape(), out).expect("same shape");
        let ng = self.needs(a);
        self.push(t, Op::Softmax(a), ng)
    }

    /// Replaces entries where `mask` is true with `fill`.
    pub fn masked_fill(&mut self, a: Var, mask: Vec<bool>, fill: T) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(mismatch(
                "masked_fill",
                format!("{} values vs mask {}", x.len(), mask.len()),
            ));
        }
        let data = x
            .data()
            .iter()
            .zip(&mask)
            .map(|(&p, &m)| if m { fill } else { p })
            .collect();
        let t = Tensor::new(x.shape(), data)?;
        let ng = self.needs(a);
        Ok(self.push(t, Op::MaskedFill(a, mask), ng))
    }

    /// Normalizes each row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols();
        let nf = T::from_f64(n as f64);
        let eps = T::from_f64(LAYER_NORM_EPS);
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(x.rows());
        for (xr, yr) in x.data().chunks(n).zip(out.chunks_mut(n)) {
            let mean = xr.iter().fold(T::zero(), |s, &v| s + v) / nf;
            let var = xr
                .iter()
                .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
                / nf;
            let inv = T::one() / (var + eps).sqrt();
            for (y, &v) in yr.iter_mut().zip(xr) {
                *y = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let t = Tensor::new(x.shape(), out).expect("same shape");
        let ng = self.needs(a);
        self.push(t, Op::LayerNorm(a, inv_std), ng)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (rows, cols) = self.dims(table);
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(mismatch("gather", format!("index {i} out of {rows} rows")));
            }
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::from_rows(ids.len(), cols, out)?;
        let ng = self.needs(table);
        Ok(self.push(t, Op::Gather(table, ids.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(mismatch("concat_cols", format!("rows {r} vs {rows}")));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_rows(rows, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = self.dims(a);
        if start + len > cols {
            return Err(mismatch(
                "slice_cols",
                format!("[{start}, {}) of {cols}", start + len),
            ));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::from_rows(rows, len, out)?,
            Op::SliceCols(a, start),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(mismatch("concat_rows", format!("cols {c} vs {cols}")));
            }
            out.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_rows(rows, cols, out)?,
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Row `i` comes from `a` where `cond[i]`, otherwise from `b`.
    pub fn row_where(&mut self, cond: Vec<bool>, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("row_where", a, b)?;
        let (rows, _) = self.dims(a);
        if cond.len() != rows {
            return Err(mismatch(
                "row_where",
                format!("{rows} rows vs {} flags", cond.len()),
            ));
        }
        let mut out = Vec::with_capacity(self.value(a).len());
        for (r, &c) in cond.iter().enumerate() {
            out.extend_from_slice(if c {
                self.value(a).row(r)
            } else {
                self.value(b).row(r)
            });
        }
        let t = Tensor::new(self.value(a).shape(), out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::RowWhere(cond, a, b), ng))
    }

    /// `out[r, ids[j]] += a[r, j]` over a zero `[rows, width]` matrix.
    pub fn scatter_cols(
        &mut self,
        a: Var,
        ids: &[usize],
        width: usize,
    ) -> Result<Var, NumericsError> {
        let (rows, cols) = self.dims(a);
        if ids.len() != cols || ids.iter().any(|&i| i >= width) {
            return Err(mismatch(
                "scatter_cols",
                format!("{cols} cols, {} ids, width {width}", ids.len()),
            ));
        }
        let x = self.value(a);
        let mut out = vec![T::zero(); rows * width];
        for r in 0..rows {
            for (j, &id) in ids.iter().enumerate() {
                out[r * width + id] = out[r * width + id] + x.get(r, j);
            }
        }
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::from_rows(rows, width, out)?,
            Op::ScatterCols(a, ids.to_vec()),
            ng,
        ))
    }

    /// `out[r] = a[r, idx[r]]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let (rows, cols) = self.dims(a);
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(mismatch(
                "pick",
                format!("{rows}x{cols} with {} indices", idx.len()),
            ));
        }
        let x = self.value(a);
        let out = idx.iter().enumerate().map(|(r, &c)| x.get(r, c)).collect();
        let ng = self.needs(a);
        Ok(self.push(Tensor::new(&[rows], out)?, Op::Pick(a, idx.to_vec()), ng))
    }

    /// Sum over the last axis, giving one value per row.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols();
        let out: Vec<T> = x
            .data()
            .chunks(n)
            .map(|r| r.iter().fold(T::zero(), |s, &v| s + v))
            .collect();
        let rows = out.len();
        let ng = self.needs(a);
        self.push(Tensor::new(&[rows], out).expect("rows"), Op::RowSum(a), ng)
    }

    /// Scalar `Σ w_i a_i` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<T>) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if weights.len() != x.len() {
            return Err(mismatch(
                "weighted_sum",
                format!("{} values vs {} weights", x.len(), weights.len()),
            ));
        }
        let s = x
            .data()
            .iter()
            .zip(&weights)
            .fold(T::zero(), |s, (&v, &w)| s + v * w);
        let ng = self.needs(a);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, weights), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        self.weighted_sum(a, vec![T::one(); n])
            .expect("matching weights")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let w = T::one() / T::from_f64(n.max(1) as f64);
        self.weighted_sum(a, vec![w; n]).expect("matching weights")
    }

    /// Summed negative log-softmax at `targets`, skipping rows whose target
    /// equals `ignore`. Returns a scalar; divide by the counted rows for a mean.
    pub fn cross_entropy_sum(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var, NumericsError> {
        let (rows, cols) = self.dims(logits);
        if targets.len() != rows {
            return Err(mismatch(
                "cross_entropy",
                format!("{rows} rows vs {} targets", targets.len()),
            ));
        }
        let active: Vec<bool> = targets.iter().map(|&t| Some(t) != ignore).collect();
        if targets.iter().zip(&active).any(|(&t, &a)| a && t >= cols) {
            return Err(mismatch(
                "cross_entropy",
                format!("target out of {cols} classes"),
            ));
        }
        let x = self.value(logits);
        let mut probs = vec![T::zero(); x.len()];
        softmax_rows(x.data(), cols, &mut probs);
        let mut total = T::zero();
        for r in 0..rows {
            if !active[r] {
                continue;
            }
            let row = x.row(r);
            let max = row
                .iter()
                .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
            let lse = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp()).ln() + max;
            total = total + (lse - row[targets[r]]);
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy(logits, targets.to_vec(), active, probs),
            ng,
        ))
    }

    /// Mean cross-entropy over non-ignored rows.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var, NumericsError> {
        let count = targets.iter().filter(|&&t| Some(t) != ignore).count();
        let s = self.cross_entropy_sum(logits, targets, ignore)?;
        Ok(self.scale(s, T::one() / T::from_f64(count.max(1) as f64)))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            param_of: self
                .nodes
                .iter()
                .map(|n| match n.op {
                    Op::Param(p) => Some(p),
                    _ => None,
                })
                .collect(),
        })
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = self.value(Var(i));
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.value(v).len();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(slot);
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| gemm(m, n, k, g, false, bv, true, s, true));
                acc(*b, &mut |s| gemm(k, m, n, av, true, g, false, s, true));
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| gemm(m, n, k, g, false, bv, false, s, true));
                acc(*b, &mut |s| gemm(n, m, k, g, true, av, false, s, true));
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                acc(*a, &mut |s| {
                    for r in 0..m {
                        for c in 0..n {
                            s[r * n + c] = s[r * n + c] + g[c * m + r];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d)
                });
                acc(*b, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for ((x, &d), &y) in s.iter_mut().zip(g).zip(bv) {
                        *x = *x + d * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, &d), &y) in s.iter_mut().zip(g).zip(av) {
                        *x = *x + d * y;
                    }
                });
            }
            Op::AddRow(a, r) => {
                let n = self.dims(*a).1;
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d)
                });
                acc(*r, &mut |s| {
                    for chunk in g.chunks(n) {
                        s.iter_mut().zip(chunk).for_each(|(x, &d)| *x = *x + d);
                    }
                });
            }
            Op::MulRow(a, r) => {
                let n = self.dims(*a).1;
                let (av, rv) = (self.value(*a).data(), self.value(*r).data());
                acc(*a, &mut |s| {
                    for (sc, gc) in s.chunks_mut(n).zip(g.chunks(n)) {
                        for ((x, &d), &w) in sc.iter_mut().zip(gc).zip(rv) {
                            *x = *x + d * w;
                        }
                    }
                });
                acc(*r, &mut |s| {
                    for (gc, ac) in g.chunks(n).zip(av.chunks(n)) {
                        for ((x, &d), &v) in s.iter_mut().zip(gc).zip(ac) {
                            *x = *x + d * v;
                        }
                    }
                });
            }
            Op::MulCol(a, c) => {
                let n = self.dims(*a).1;
                let (av, cv) = (self.value(*a).data(), self.value(*c).data());
                acc(*a, &mut |s| {
                    for ((sc, gc), &w) in s.chunks_mut(n).zip(g.chunks(n)).zip(cv) {
                        sc.iter_mut().zip(gc).for_each(|(x, &d)| *x = *x + d * w);
                    }
                });
                acc(*c, &mut |s| {
                    for ((x, gc), ac) in s.iter_mut().zip(g.chunks(n)).zip(av.chunks(n)) {
                        *x = *x + gc.iter().zip(ac).fold(T::zero(), |t, (&d, &v)| t + d * v);
                    }
                });
            }
            Op::Affine(a, scale) => {
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(x, &d)| *x = *x + d * *scale)
                });
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(*a, &mut |s| {
                    for ((x, &d), &v) in s.iter_mut().zip(g).zip(y) {
                        *x = *x + d * v * (T::one() - v);
                    }
                });
            }
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                acc(*a, &mut |s| {
                    for ((x, &d), &v) in s.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *x = *x + d;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let xv = self.value(*a).data();
                acc(*a, &mut |s| {
                    for ((x, &d), &v) in s.iter_mut().zip(g).zip(xv) {
                        *x = *x + d * gelu_parts(v).1;
                    }
                });
            }
            Op::Ln(a) => {
                let xv = self.value(*a).data();
                acc(*a, &mut |s| {
                    for ((x, &d), &v) in s.iter_mut().zip(g).zip(xv) {
                        if v > T::min_positive_value() {
                            *x = *x + d / v;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let n = out.cols();
                let y = out.data();
                acc(*a, &mut |s| {
                    for ((sc, gc), yc) in s.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot = gc.iter().zip(yc).fold(T::zero(), |t, (&d, &v)| t + d * v);
                        for ((x, &d), &v) in sc.iter_mut().zip(gc).zip(yc) {
                            *x = *x + v * (d - dot);
                        }
                    }
                });
            }
            Op::MaskedFill(a, mask) => {
                acc(*a, &mut |s| {
                    for ((x, &d), &m) in s.iter_mut().zip(g).zip(mask) {
                        if !m {
                            *x = *x + d;
                        }
                    }
                });
            }
            Op::LayerNorm(a, inv_std) => {
                let n = out.cols();
                let nf = T::from_f64(n as f64);
                let xhat = out.data();
                acc(*a, &mut |s| {
                    for (((sc, gc), hc), &inv) in s
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xhat.chunks(n))
                        .zip(inv_std)
                    {
                        let mean_g = gc.iter().fold(T::zero(), |t, &d| t + d) / nf;
                        let mean_gh =
                            gc.iter().zip(hc).fold(T::zero(), |t, (&d, &h)| t + d * h) / nf;
                        for ((x, &d), &h) in sc.iter_mut().zip(gc).zip(hc) {
                            *x = *x + inv * (d - mean_g - h * mean_gh);
                        }
                    }
                });
            }
            Op::Gather(table, ids) => {
                let cols = self.dims(*table).1;
                acc(*table, &mut |s| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut s[id * cols..(id + 1) * cols];
                        dst.iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(x, &d)| *x = *x + d);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let (rows, c) = self.dims(p);
                    acc(p, &mut |s| {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            s[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, &d)| *x = *x + d);
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.dims(*a);
                let len = out.cols();
                acc(*a, &mut |s| {
                    for r in 0..rows {
                        let dst = &mut s[r * cols + start..r * cols + start + len];
                        dst.iter_mut()
                            .zip(&g[r * len..(r + 1) * len])
                            .for_each(|(x, &d)| *x = *x + d);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &mut |s| {
                        s.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(x, &d)| *x = *x + d)
                    });
                    offset += n;
                }
            }
            Op::RowWhere(cond, a, b) => {
                let n = out.cols();
                for (side, pick) in [(*a, true), (*b, false)] {
                    acc(side, &mut |s| {
                        for (r, &c) in cond.iter().enumerate() {
                            if c == pick {
                                let dst = &mut s[r * n..(r + 1) * n];
                                dst.iter_mut()
                                    .zip(&g[r * n..(r + 1) * n])
                                    .for_each(|(x, &d)| *x = *x + d);
                            }
                        }
                    });
                }
            }
            Op::ScatterCols(a, ids) => {
                let width = out.cols();
                let cols = ids.len();
                acc(*a, &mut |s| {
                    for (r, sc) in s.chunks_mut(cols).enumerate() {
                        for (x, &id) in sc.iter_mut().zip(ids) {
                            *x = *x + g[r * width + id];
                        }
                    }
                });
            }
            Op::Pick(a, idx) => {
                let cols = self.dims(*a).1;
                acc(*a, &mut |s| {
                    for (r, &c) in idx.iter().enumerate() {
                        s[r * cols + c] = s[r * cols + c] + g[r];
                    }
                });
            }
            Op::RowSum(a) => {
                let n = self.dims(*a).1;
                acc(*a, &mut |s| {
                    for (sc, &d) in s.chunks_mut(n).zip(g) {
                        sc.iter_mut().for_each(|x| *x = *x + d);
                    }
                });
            }
            Op::WeightedSum(a, w) => {
                let d = g[0];
                acc(*a, &mut |s| {
                    s.iter_mut().zip(w).for_each(|(x, &wi)| *x = *x + d * wi)
                });
            }
            Op::CrossEntropy(logits, targets, active, probs) => {
                let cols = self.dims(*logits).1;
                let d = g[0];
                acc(*logits, &mut |s| {
                    for (r, (&t, &on)) in targets.iter().zip(active).enumerate() {
                        if !on {
                            continue;
                        }
                        let row = &mut s[r * cols..(r + 1) * cols];
                        for (x, &p) in row.iter_mut().zip(&probs[r * cols..(r + 1) * cols]) {
                            *x = *x + d * p;
                        }
                        row[t] = row[t] - d;
                    }
                });
            }
        }
    }
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    param_of: Vec<Option<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss or is a constant.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into `out`. A parameter used several
    /// times on the tape contributes each use.
    pub fn accumulate_into(&self, out: &mut Grads<T>) {
        for (g, p) in self.grads.iter().zip(&self.param_of) {
            if let (Some(g), Some(p)) = (g, p) {
                out.get_mut(ParamId(*p))
                    .iter_mut()
                    .zip(g)
                    .for_each(|(x, &d)| *x = *x + d);
            }
        }
    }
}

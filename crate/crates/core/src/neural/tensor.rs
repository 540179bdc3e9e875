//! A small reverse-mode differentiation engine over rank-2 arrays.
//!
//! A [`Graph`] records every operation with its inputs; [`Graph::backward`]
//! walks the record in reverse and accumulates gradients. Row-wise reductions
//! accumulate in `f64` whatever the element type.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, NdFloat, Zip};
use num_traits::{FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub trait Scalar: NdFloat + FromPrimitive + ToPrimitive + Default {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant representable")
}

#[inline]
fn f<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("finite float")
}

/// Named trainable arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Array2<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Array2<T> {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array2<T> {
        &mut self.values[i]
    }

    pub fn values(&self) -> &[Array2<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.mapv(|x| c::<U>(f(x)))).collect(),
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulCol(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, T, T),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var, T),
    LogSoftmax(Var, T),
    LogSumExpRows(Var),
    SumRows(Var),
    SumAll(Var),
    MeanAll(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<usize, Var>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// Numerically stable `ln σ(x)`.
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise `max + ln Σ exp(x − max)` accumulated in `f64`.
fn row_lse<T: Scalar>(row: ndarray::ArrayView1<T>) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(f(x)));
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|&x| (f(x) - max).exp()).sum::<f64>().ln()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A constant input.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// The node for parameter `index`; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet<T>, index: usize) -> Var {
        if let Some(&v) = self.param_nodes.get(&index) {
            return v;
        }
        let v = self.push(params.get(index).clone(), Op::Param(index), &[]);
        self.param_nodes.insert(index, v);
        v
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `a + bias` with `bias` of shape `[1, d]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(shape_err("add_bias", &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        let v = self.value(a) + self.value(bias);
        Ok(self.push(v, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let v = self.value(a) / self.value(b);
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// `a[i, j] · col[i, 0]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(shape_err("mul_col", &[sa.0, sa.1], &[sc.0, sc.1]));
        }
        let v = self.value(a) * self.value(col);
        Ok(self.push(v, Op::MulCol(a, col), &[a, col]))
    }

    /// `a[i, j] · row[0, j]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(shape_err("mul_row", &[sa.0, sa.1], &[sr.0, sr.1]));
        }
        let v = self.value(a) * self.value(row);
        Ok(self.push(v, Op::MulRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = c::<T>(s);
        let v = self.value(a).mapv(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let s = c::<T>(s);
        let v = self.value(a).mapv(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    fn unary(&mut self, a: Var, op: Op<T>, func: impl Fn(T) -> T) -> Var {
        let v = self.value(a).mapv(func);
        self.push(v, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), log_sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), T::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), T::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), T::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; the gradient vanishes outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (c::<T>(lo), c::<T>(hi));
        self.unary(a, Op::Clamp(a, l, h), |x| x.max(l).min(h))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of shape `[1, d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (sx, sg) = (self.shape(x), self.shape(gamma));
        if sg != (1, sx.1) || self.shape(beta) != sg {
            return Err(shape_err("layer_norm", &[sx.0, sx.1], &[sg.0, sg.1]));
        }
        let d = sx.1 as f64;
        let mut xhat = Array2::<T>::zeros(sx);
        let mut inv_std = Vec::with_capacity(sx.0);
        for (row, mut out) in self.value(x).rows().into_iter().zip(xhat.rows_mut()) {
            let mean = row.iter().map(|&v| f(v)).sum::<f64>() / d;
            let var = row.iter().map(|&v| (f(v) - mean).powi(2)).sum::<f64>() / d;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(c::<T>(is));
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o = c::<T>((f(v) - mean) * is);
            }
        }
        let y = &(&xhat * self.value(gamma)) + self.value(beta);
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    fn row_softmax(&self, a: Var, tau: f64) -> Array2<T> {
        let mut out = self.value(a).mapv(|x| c::<T>(f(x) / tau));
        for mut row in out.rows_mut() {
            let lse = row_lse(row.view());
            row.mapv_inplace(|x| c::<T>((f(x) - lse).exp()));
        }
        out
    }

    /// Row-wise `softmax(a / tau)`.
    pub fn softmax(&mut self, a: Var, tau: f64) -> Var {
        let v = self.row_softmax(a, tau);
        self.push(v, Op::Softmax(a, c::<T>(tau)), &[a])
    }

    /// Row-wise `log softmax(a / tau)`.
    pub fn log_softmax(&mut self, a: Var, tau: f64) -> Var {
        let mut out = self.value(a).mapv(|x| c::<T>(f(x) / tau));
        for mut row in out.rows_mut() {
            let lse = row_lse(row.view());
            row.mapv_inplace(|x| c::<T>(f(x) - lse));
        }
        self.push(out, Op::LogSoftmax(a, c::<T>(tau)), &[a])
    }

    /// Row-wise log-sum-exp, shape `[b, 1]`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let rows = self.shape(a).0;
        let v = Array2::from_shape_fn((rows, 1), |(i, _)| c::<T>(row_lse(self.value(a).row(i))));
        self.push(v, Op::LogSumExpRows(a), &[a])
    }

    /// Row sums, shape `[b, 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let rows = self.shape(a).0;
        let v = Array2::from_shape_fn((rows, 1), |(i, _)| {
            c::<T>(self.value(a).row(i).iter().map(|&x| f(x)).sum::<f64>())
        });
        self.push(v, Op::SumRows(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().map(|&x| f(x)).sum();
        self.push(Array2::from_elem((1, 1), c::<T>(s)), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).iter().map(|&x| f(x)).sum();
        self.push(Array2::from_elem((1, 1), c::<T>(s / n)), Op::MeanAll(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        let rows = self.shape(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            let sb = self.shape(bad);
            return Err(shape_err("concat_cols", &[rows], &[sb.0, sb.1]));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a);
        if start + len > sa.1 {
            return Err(shape_err("slice_cols", &[sa.0, sa.1], &[start, len]));
        }
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        Ok(self.push(v, Op::SliceCols(a, start), &[a]))
    }

    /// Scalar value of a `[1, 1]` node as `f64`.
    pub fn scalar(&self, v: Var) -> f64 {
        f(self.value(v)[[0, 0]])
    }

    /// Gradients of `sum(root)` with respect to every parameter used in the
    /// graph, indexed like `params`; unused parameters get `None`.
    pub fn backward(&self, root: Var, param_count: usize) -> Vec<Option<Array2<T>>> {
        let mut grads: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem(self.nodes[root.0].value.dim(), T::one()));
        let mut out = vec![None; param_count];
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut acc = |v: Var, d: Array2<T>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot => *slot = Some(d),
                }
            };
            let val = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    if *p < param_count {
                        out[*p] = Some(g);
                    }
                }
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::AddBias(a, b) => {
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.mapv(|x| -x));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * self.value(*b));
                    acc(*b, &g * self.value(*a));
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    acc(*a, &g / bv);
                    let mut db = &g * self.value(*a);
                    Zip::from(&mut db).and(bv).for_each(|d, &y| *d = -*d / (y * y));
                    acc(*b, db);
                }
                Op::MulCol(a, col) => {
                    let dc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, &g * self.value(*col));
                    acc(*col, dc);
                }
                Op::MulRow(a, row) => {
                    let dr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*a, &g * self.value(*row));
                    acc(*row, dr);
                }
                Op::Scale(a, s) => acc(*a, g.mapv(|x| x * *s)),
                Op::AddScalar(a) => acc(*a, g),
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val).for_each(|d, &y| {
                        if y <= T::zero() {
                            *d = T::zero()
                        }
                    });
                    acc(*a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val).for_each(|d, &y| *d = *d * y * (T::one() - y));
                    acc(*a, d);
                }
                Op::LogSigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d *= sigmoid(-x));
                    acc(*a, d);
                }
                Op::Exp(a) => acc(*a, &g * val),
                Op::Ln(a) => acc(*a, &g / self.value(*a)),
                Op::Sqrt(a) => {
                    let half = c::<T>(0.5);
                    let mut d = g;
                    Zip::from(&mut d).and(val).for_each(|d, &y| *d = *d * half / y);
                    acc(*a, d);
                }
                Op::Square(a) => {
                    let two = c::<T>(2.0);
                    acc(*a, &g * &self.value(*a).mapv(|x| two * x));
                }
                Op::Clamp(a, lo, hi) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = T::zero()
                        }
                    });
                    acc(*a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * self.value(*gamma);
                    let d = xhat.ncols() as f64;
                    let mut dx = Array2::<T>::zeros(xhat.dim());
                    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let s1: f64 = dh.iter().map(|&v| f(v)).sum();
                        let s2: f64 = dh.iter().zip(xh.iter()).map(|(&a, &b)| f(a) * f(b)).sum();
                        let is = f(inv_std[r]);
                        for j in 0..out.len() {
                            out[j] = c::<T>(is / d * (d * f(dh[j]) - s1 - f(xh[j]) * s2));
                        }
                    }
                    acc(*x, dx);
                }
                Op::Softmax(a, tau) => {
                    let mut dx = Array2::<T>::zeros(val.dim());
                    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
                        let y = val.row(r);
                        let gr = g.row(r);
                        let dot: f64 = gr.iter().zip(y.iter()).map(|(&a, &b)| f(a) * f(b)).sum();
                        for j in 0..out.len() {
                            out[j] = c::<T>(f(y[j]) * (f(gr[j]) - dot) / f(*tau));
                        }
                    }
                    acc(*a, dx);
                }
                Op::LogSoftmax(a, tau) => {
                    let mut dx = Array2::<T>::zeros(val.dim());
                    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
                        let gr = g.row(r);
                        let total: f64 = gr.iter().map(|&v| f(v)).sum();
                        for j in 0..out.len() {
                            let p = f(val[[r, j]]).exp();
                            out[j] = c::<T>((f(gr[j]) - p * total) / f(*tau));
                        }
                    }
                    acc(*a, dx);
                }
                Op::LogSumExpRows(a) => {
                    let x = self.value(*a);
                    let mut dx = Array2::<T>::zeros(x.dim());
                    for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
                        let lse = f(val[[r, 0]]);
                        let gr = f(g[[r, 0]]);
                        for j in 0..out.len() {
                            out[j] = c::<T>(gr * (f(x[[r, j]]) - lse).exp());
                        }
                    }
                    acc(*a, dx);
                }
                Op::SumRows(a) => {
                    let cols = self.shape(*a).1;
                    let d = Array2::from_shape_fn((val.nrows(), cols), |(r, _)| g[[r, 0]]);
                    acc(*a, d);
                }
                Op::SumAll(a) => acc(*a, Array2::from_elem(self.value(*a).dim(), g[[0, 0]])),
                Op::MeanAll(a) => {
                    let n = c::<T>(self.value(*a).len() as f64);
                    acc(*a, Array2::from_elem(self.value(*a).dim(), g[[0, 0]] / n));
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::<T>::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
            }
        }
        out
    }
}

//! Dense row-major matrices with a reverse-mode tape.
//!
//! Every array is two-dimensional (`[rows, cols]`; scalars are `[1, 1]`).
//! A [`Tape`] records each primitive applied to [`Var`] handles and
//! [`Tape::backward`] walks the record in reverse. Arithmetic is generic over
//! [`Real`], so the model forward runs in `f32` for training and in `f64` for
//! finite-difference checks. Learnable arrays live in a [`ParamStore`].
//!
//! Broadcasting is limited to a `[1, n]` row operand (bias-like) or an
//! `[m, 1]` column operand (per-row scale).

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use num_traits::Float;

use crate::error::{QecError, Result};

pub trait Real: Float + Default + Send + Sync + std::fmt::Debug + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;

    /// `c (+)= a * b` for an `m x k` by `k x n` product with arbitrary
    /// strides on the inputs and a contiguous row-major `c`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
        accumulate: bool,
    );
}

fn check_span(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize)) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
        assert!(last >= 0 && (last as usize) < len, "gemm operand out of bounds");
    }
}

macro_rules! impl_real {
    ($t:ty, $erf:path, $gemm:path) => {
        impl Real for $t {
            fn of(x: f64) -> Self {
                x as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn erf(self) -> Self {
                $erf(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                c: &mut [Self],
                accumulate: bool,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_span(a.len(), m, k, a_strides);
                check_span(b.len(), k, n, b_strides);
                assert!(c.len() >= m * n, "gemm output too small");
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: every index touched is bounds-checked above and the
                // output does not alias either input.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, libm::erff, matrixmultiply::sgemm);
impl_real!(f64, libm::erf, matrixmultiply::dgemm);

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R = f32> {
    shape: [usize; 2],
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: [usize; 2], data: Vec<R>) -> Result<Self> {
        if data.len() != shape[0] * shape[1] {
            return Err(QecError::Shape {
                op: "tensor",
                detail: format!("{} values for shape {:?}", data.len(), shape),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Tensor {
            shape,
            data: vec![R::zero(); shape[0] * shape[1]],
        }
    }

    pub fn full(shape: [usize; 2], v: R) -> Self {
        Tensor {
            shape,
            data: vec![v; shape[0] * shape[1]],
        }
    }

    pub fn scalar(v: R) -> Self {
        Tensor {
            shape: [1, 1],
            data: vec![v],
        }
    }

    pub fn from_fn(shape: [usize; 2], mut f: impl FnMut(usize, usize) -> R) -> Self {
        let data = (0..shape[0] * shape[1])
            .map(|i| f(i / shape[1], i % shape[1]))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[R] {
        &self.data[r * self.shape[1]..(r + 1) * self.shape[1]]
    }

    pub fn at(&self, r: usize, c: usize) -> R {
        self.data[r * self.shape[1] + c]
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| S::of(x.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Tensor<R>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
}

enum Op<R> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Transpose(Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, R),
    AddScalar(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        src: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        src: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Max(Var, Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log(Var),
    Neg(Var),
    Clamp {
        src: Var,
        lo: R,
        hi: R,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<R>,
        inv_std: Vec<R>,
    },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

/// Records one forward computation. Not `Sync`: a tape stays on the thread
/// that built it.
pub struct Tape<R: Real = f32> {
    nodes: RefCell<Vec<Node<R>>>,
    params: RefCell<HashMap<ParamId, Var>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> QecError {
    QecError::Shape { op, detail }
}

fn bcast_of(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<Bcast> {
    if a == b {
        Ok(Bcast::Same)
    } else if b == [1, a[1]] {
        Ok(Bcast::Row)
    } else if b == [a[0], 1] {
        Ok(Bcast::Col)
    } else {
        Err(shape_err(op, format!("{a:?} vs {b:?}")))
    }
}

fn bcast_index(bc: Bcast, cols: usize, i: usize) -> usize {
    match bc {
        Bcast::Same => i,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
    }
}

/// Sums `g` down to the shape of a broadcast operand.
fn reduce_to<R: Real>(g: &Tensor<R>, bc: Bcast, shape: [usize; 2]) -> Tensor<R> {
    match bc {
        Bcast::Same => g.clone(),
        _ => {
            let mut acc = vec![0.0f64; shape[0] * shape[1]];
            for (i, &x) in g.data.iter().enumerate() {
                acc[bcast_index(bc, g.shape[1], i)] += x.as_f64();
            }
            Tensor {
                shape,
                data: acc.into_iter().map(R::of).collect(),
            }
        }
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<R>, op: Op<R>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    fn shape_of(&self, v: Var) -> [usize; 2] {
        self.nodes.borrow()[v.0].value.shape
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<R>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.shape_of(v)
    }

    /// A differentiable input.
    pub fn var(&self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a stored parameter; repeated requests share one leaf.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.borrow().get(&id) {
            return v;
        }
        let v = self.var(store.get(id).cast());
        self.params.borrow_mut().insert(id, v);
        v
    }

    fn unary(&self, a: Var, op: Op<R>, f: impl Fn(R) -> R) -> Var {
        let value = self.value(a).map(f);
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_t(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let value = {
            let (av, bv) = (self.value(a), self.value(b));
            let [m, k] = av.shape;
            let (kb, n, bs) = if transpose_b {
                (bv.shape[1], bv.shape[0], (1, bv.shape[1] as isize))
            } else {
                (bv.shape[0], bv.shape[1], (bv.shape[1] as isize, 1))
            };
            if k != kb {
                return Err(shape_err("matmul", format!("{:?} x {:?}", av.shape, bv.shape)));
            }
            let mut out = Tensor::zeros([m, n]);
            R::gemm(m, k, n, &av.data, (k as isize, 1), &bv.data, bs, &mut out.data, false);
            out
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul { a, b, transpose_b }, needs))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let value = {
            let av = self.value(a);
            let [m, n] = av.shape;
            Tensor::from_fn([n, m], |i, j| av.data[j * n + i])
        };
        let needs = self.needs(a);
        self.push(value, Op::Transpose(a), needs)
    }

    fn binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(R, R) -> R,
        op: impl FnOnce(Bcast) -> Op<R>,
    ) -> Result<Var> {
        let (value, bc) = {
            let (av, bv) = (self.value(a), self.value(b));
            let bc = bcast_of(name, av.shape, bv.shape)?;
            let cols = av.shape[1];
            let data = av
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv.data[bcast_index(bc, cols, i)]))
                .collect();
            (Tensor { shape: av.shape, data }, bc)
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op(bc), needs))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |bc| Op::Add(a, b, bc))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |bc| Op::Sub(a, b, bc))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |bc| Op::Mul(a, b, bc))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let s = R::of(s);
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&self, a: Var, s: f64) -> Var {
        let s = R::of(s);
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    /// Concatenation along `axis` (0: stack rows, 1: join columns).
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(shape_err("concat", format!("{} parts on axis {axis}", parts.len())));
        }
        let value = {
            let vals: Vec<Ref<'_, Tensor<R>>> = parts.iter().map(|&p| self.value(p)).collect();
            let other = 1 - axis;
            let fixed = vals[0].shape[other];
            if vals.iter().any(|v| v.shape[other] != fixed) {
                let shapes: Vec<_> = vals.iter().map(|v| v.shape).collect();
                return Err(shape_err("concat", format!("{shapes:?} on axis {axis}")));
            }
            let total: usize = vals.iter().map(|v| v.shape[axis]).sum();
            if axis == 0 {
                let data = vals.iter().flat_map(|v| v.data.iter().copied()).collect();
                Tensor {
                    shape: [total, fixed],
                    data,
                }
            } else {
                let mut data = Vec::with_capacity(fixed * total);
                for r in 0..fixed {
                    for v in &vals {
                        data.extend_from_slice(v.row(r));
                    }
                }
                Tensor {
                    shape: [fixed, total],
                    data,
                }
            }
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// `len` rows or columns of `a` starting at `start`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = {
            let av = self.value(a);
            if axis > 1 || start + len > av.shape[axis] {
                return Err(shape_err(
                    "slice",
                    format!("{start}+{len} on axis {axis} of {:?}", av.shape),
                ));
            }
            let [m, n] = av.shape;
            if axis == 0 {
                Tensor {
                    shape: [len, n],
                    data: av.data[start * n..(start + len) * n].to_vec(),
                }
            } else {
                Tensor::from_fn([m, len], |i, j| av.data[i * n + start + j])
            }
        };
        let needs = self.needs(a);
        Ok(self.push(value, Op::Slice { src: a, axis, start }, needs))
    }

    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let value = {
            let av = self.value(a);
            if let Some(&bad) = idx.iter().find(|&&i| i >= av.shape[0]) {
                return Err(shape_err("gather_rows", format!("row {bad} of {:?}", av.shape)));
            }
            let n = av.shape[1];
            let mut data = Vec::with_capacity(idx.len() * n);
            for &i in idx {
                data.extend_from_slice(av.row(i));
            }
            Tensor {
                shape: [idx.len(), n],
                data,
            }
        };
        let needs = self.needs(a);
        Ok(self.push(
            value,
            Op::GatherRows {
                src: a,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    /// Places row `k` of `a` at row `idx[k]` of an `n_rows`-row zero matrix
    /// (rows hit twice are summed).
    pub fn scatter_rows(&self, a: Var, idx: &[usize], n_rows: usize) -> Result<Var> {
        let value = {
            let av = self.value(a);
            if idx.len() != av.shape[0] || idx.iter().any(|&i| i >= n_rows) {
                return Err(shape_err(
                    "scatter_rows",
                    format!("{} indices into {n_rows} rows from {:?}", idx.len(), av.shape),
                ));
            }
            let n = av.shape[1];
            let mut out = Tensor::zeros([n_rows, n]);
            for (k, &i) in idx.iter().enumerate() {
                for (o, &x) in out.data[i * n..(i + 1) * n].iter_mut().zip(av.row(k)) {
                    *o = *o + x;
                }
            }
            out
        };
        let needs = self.needs(a);
        Ok(self.push(
            value,
            Op::ScatterRows {
                src: a,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    pub fn sum(&self, a: Var) -> Var {
        let value = Tensor::scalar(R::of(self.value(a).sum_f64()));
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    pub fn mean(&self, a: Var) -> Var {
        let value = {
            let av = self.value(a);
            Tensor::scalar(R::of(av.sum_f64() / av.len().max(1) as f64))
        };
        let needs = self.needs(a);
        self.push(value, Op::Mean(a), needs)
    }

    pub fn max_elementwise(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (av, bv) = (self.value(a), self.value(b));
            if av.shape != bv.shape {
                return Err(shape_err("max", format!("{:?} vs {:?}", av.shape, bv.shape)));
            }
            let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x.max(y)).collect();
            Tensor { shape: av.shape, data }
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Max(a, b), needs))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(R::zero()))
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&self, a: Var) -> Var {
        let half = R::of(0.5);
        let inv_sqrt2 = R::of(std::f64::consts::FRAC_1_SQRT_2);
        self.unary(a, Op::Gelu(a), |x| half * x * (R::one() + (x * inv_sqrt2).erf()))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (R::of(lo), R::of(hi));
        self.unary(a, Op::Clamp { src: a, lo, hi }, |x| x.max(lo).min(hi))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        self.softmax_masked(a, None).expect("unmasked softmax cannot fail")
    }

    /// Row-wise softmax restricted to entries where `mask` is true. Masked
    /// entries are zero, and a row with no admissible entry is all zero.
    pub fn softmax_masked(&self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let value = {
            let av = self.value(a);
            if let Some(m) = mask {
                if m.len() != av.len() {
                    return Err(shape_err("softmax", format!("mask of {} for {:?}", m.len(), av.shape)));
                }
            }
            let [rows, n] = av.shape;
            let mut out = Tensor::zeros(av.shape);
            let allowed = |i: usize| mask.is_none_or(|m| m[i]);
            for r in 0..rows {
                let idx = r * n..(r + 1) * n;
                let max = idx
                    .clone()
                    .filter(|&i| allowed(i))
                    .map(|i| av.data[i].as_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for i in idx.clone().filter(|&i| allowed(i)) {
                    let e = (av.data[i].as_f64() - max).exp();
                    out.data[i] = R::of(e);
                    total += e;
                }
                for i in idx {
                    out.data[i] = R::of(out.data[i].as_f64() / total);
                }
            }
            out
        };
        let needs = self.needs(a);
        Ok(self.push(value, Op::Softmax(a), needs))
    }

    /// Row-wise normalization to zero mean and unit variance, then
    /// `gain * x + bias` with `[1, n]` gain and bias.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (value, xhat, inv_std) = {
            let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
            let [rows, n] = xv.shape;
            if gv.shape != [1, n] || bv.shape != [1, n] {
                return Err(shape_err(
                    "layer_norm",
                    format!("{:?} with gain {:?} bias {:?}", xv.shape, gv.shape, bv.shape),
                ));
            }
            let mut out = Tensor::zeros([rows, n]);
            let mut xhat = vec![R::zero(); rows * n];
            let mut inv_std = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = xv.row(r);
                let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + LN_EPS).sqrt();
                inv_std.push(R::of(is));
                for c in 0..n {
                    let h = R::of((row[c].as_f64() - mean) * is);
                    xhat[r * n + c] = h;
                    out.data[r * n + c] = gv.data[c] * h + bv.data[c];
                }
            }
            (out, xhat, inv_std)
        };
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Reverse pass from a scalar `root`, seeding its gradient with `seed`.
    /// Consumes the tape.
    pub fn backward_scaled(self, root: Var, seed: f64) -> Result<Gradients<R>> {
        let nodes = self.nodes.into_inner();
        let root_shape = nodes[root.0].value.shape;
        if root_shape != [1, 1] {
            return Err(QecError::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(R::of(seed)));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, t: Tensor<R>| {
                if nodes[v.0].needs_grad {
                    match &mut grads[v.0] {
                        Some(acc) => acc.add_assign(&t),
                        slot => *slot = Some(t),
                    }
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            let elementwise = |f: &dyn Fn(usize, R) -> R| Tensor {
                shape: g.shape,
                data: g.data.iter().enumerate().map(|(k, &gk)| f(k, gk)).collect(),
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                &Op::MatMul { a, b, transpose_b } => {
                    let (av, bv) = (val(a), val(b));
                    let [m, k] = av.shape;
                    let n = g.shape[1];
                    if nodes[a.0].needs_grad {
                        let mut da = Tensor::zeros([m, k]);
                        // dA = dC * B^T (or dC * B when B was transposed).
                        let bs = if transpose_b { (k as isize, 1) } else { (1, n as isize) };
                        R::gemm(m, n, k, &g.data, (n as isize, 1), &bv.data, bs, &mut da.data, false);
                        send(a, da);
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = Tensor::zeros(bv.shape);
                        if transpose_b {
                            // dB = dC^T * A, shape n x k.
                            R::gemm(
                                n,
                                m,
                                k,
                                &g.data,
                                (1, n as isize),
                                &av.data,
                                (k as isize, 1),
                                &mut db.data,
                                false,
                            );
                        } else {
                            // dB = A^T * dC, shape k x n.
                            R::gemm(
                                k,
                                m,
                                n,
                                &av.data,
                                (1, k as isize),
                                &g.data,
                                (n as isize, 1),
                                &mut db.data,
                                false,
                            );
                        }
                        send(b, db);
                    }
                }
                &Op::Transpose(a) => {
                    let [m, n] = g.shape;
                    send(a, Tensor::from_fn([n, m], |r, c| g.data[c * n + r]));
                }
                &Op::Add(a, b, bc) => {
                    send(b, reduce_to(&g, bc, val(b).shape));
                    send(a, g);
                }
                &Op::Sub(a, b, bc) => {
                    send(b, reduce_to(&g.map(|x| -x), bc, val(b).shape));
                    send(a, g);
                }
                &Op::Mul(a, b, bc) => {
                    let (av, bv) = (val(a), val(b));
                    let cols = g.shape[1];
                    if nodes[a.0].needs_grad {
                        send(a, elementwise(&|k, gk| gk * bv.data[bcast_index(bc, cols, k)]));
                    }
                    if nodes[b.0].needs_grad {
                        let full = elementwise(&|k, gk| gk * av.data[k]);
                        send(b, reduce_to(&full, bc, bv.shape));
                    }
                }
                &Op::Scale(a, s) => send(a, g.map(|x| x * s)),
                &Op::AddScalar(a) => send(a, g),
                Op::Concat { parts, axis } => {
                    let mut offset = 0;
                    for &p in parts {
                        let [pm, pn] = val(p).shape;
                        let piece = if *axis == 0 {
                            Tensor {
                                shape: [pm, pn],
                                data: g.data[offset * pn..(offset + pm) * pn].to_vec(),
                            }
                        } else {
                            let n = g.shape[1];
                            Tensor::from_fn([pm, pn], |r, c| g.data[r * n + offset + c])
                        };
                        offset += if *axis == 0 { pm } else { pn };
                        send(p, piece);
                    }
                }
                &Op::Slice { src, axis, start } => {
                    let shape = val(src).shape;
                    let mut full = Tensor::zeros(shape);
                    let [gm, gn] = g.shape;
                    for r in 0..gm {
                        for c in 0..gn {
                            let (sr, sc) = if axis == 0 { (start + r, c) } else { (r, start + c) };
                            full.data[sr * shape[1] + sc] = g.data[r * gn + c];
                        }
                    }
                    send(src, full);
                }
                Op::GatherRows { src, idx } => {
                    let shape = val(*src).shape;
                    let n = shape[1];
                    let mut full = Tensor::zeros(shape);
                    for (k, &r) in idx.iter().enumerate() {
                        for (o, &x) in full.data[r * n..(r + 1) * n].iter_mut().zip(g.row(k)) {
                            *o = *o + x;
                        }
                    }
                    send(*src, full);
                }
                Op::ScatterRows { src, idx } => {
                    let n = g.shape[1];
                    let mut data = Vec::with_capacity(idx.len() * n);
                    for &r in idx {
                        data.extend_from_slice(g.row(r));
                    }
                    send(
                        *src,
                        Tensor {
                            shape: [idx.len(), n],
                            data,
                        },
                    );
                }
                &Op::Sum(a) => send(a, Tensor::full(val(a).shape, g.data[0])),
                &Op::Mean(a) => {
                    let shape = val(a).shape;
                    let n = (shape[0] * shape[1]).max(1) as f64;
                    send(a, Tensor::full(shape, R::of(g.data[0].as_f64() / n)));
                }
                &Op::Max(a, b) => {
                    let (av, bv) = (val(a), val(b));
                    let half = R::of(0.5);
                    let share = |k: usize, mine: R, theirs: R| {
                        let gk = g.data[k];
                        if mine > theirs {
                            gk
                        } else if mine == theirs {
                            gk * half
                        } else {
                            R::zero()
                        }
                    };
                    let da = Tensor::from_fn(g.shape, |r, c| {
                        let k = r * g.shape[1] + c;
                        share(k, av.data[k], bv.data[k])
                    });
                    let db = Tensor::from_fn(g.shape, |r, c| {
                        let k = r * g.shape[1] + c;
                        share(k, bv.data[k], av.data[k])
                    });
                    send(a, da);
                    send(b, db);
                }
                &Op::Relu(a) => {
                    let av = val(a);
                    send(
                        a,
                        elementwise(&|k, gk| if av.data[k] > R::zero() { gk } else { R::zero() }),
                    );
                }
                &Op::Gelu(a) => {
                    let av = val(a);
                    send(
                        a,
                        elementwise(&|k, gk| {
                            let x = av.data[k].as_f64();
                            let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                            gk * R::of(cdf + x * std_normal_pdf(x))
                        }),
                    );
                }
                &Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(a, elementwise(&|k, gk| gk * y.data[k] * (R::one() - y.data[k])));
                }
                &Op::Softmax(a) => {
                    let y = &node.value;
                    let [rows, n] = y.shape;
                    let mut da = Tensor::zeros(y.shape);
                    for r in 0..rows {
                        let span = r * n..(r + 1) * n;
                        let dot: f64 = span.clone().map(|k| y.data[k].as_f64() * g.data[k].as_f64()).sum();
                        for k in span {
                            da.data[k] = R::of(y.data[k].as_f64() * (g.data[k].as_f64() - dot));
                        }
                    }
                    send(a, da);
                }
                &Op::Log(a) => {
                    let av = val(a);
                    send(a, elementwise(&|k, gk| gk / av.data[k]));
                }
                &Op::Neg(a) => send(a, g.map(|x| -x)),
                &Op::Clamp { src, lo, hi } => {
                    let av = val(src);
                    send(
                        src,
                        elementwise(&|k, gk| {
                            let x = av.data[k];
                            if x >= lo && x <= hi {
                                gk
                            } else {
                                R::zero()
                            }
                        }),
                    );
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = val(*gain);
                    let [rows, n] = g.shape;
                    if nodes[gain.0].needs_grad || nodes[bias.0].needs_grad {
                        let mut dg = vec![0.0f64; n];
                        let mut db = vec![0.0f64; n];
                        for k in 0..rows * n {
                            dg[k % n] += (g.data[k] * xhat[k]).as_f64();
                            db[k % n] += g.data[k].as_f64();
                        }
                        send(
                            *gain,
                            Tensor {
                                shape: [1, n],
                                data: dg.into_iter().map(R::of).collect(),
                            },
                        );
                        send(
                            *bias,
                            Tensor {
                                shape: [1, n],
                                data: db.into_iter().map(R::of).collect(),
                            },
                        );
                    }
                    if nodes[x.0].needs_grad {
                        let mut dx = Tensor::zeros([rows, n]);
                        for (r, is) in inv_std.iter().enumerate() {
                            let span = r * n..(r + 1) * n;
                            let dxh: Vec<f64> = span.clone().map(|k| (g.data[k] * gv.data[k % n]).as_f64()).collect();
                            let mean_d = dxh.iter().sum::<f64>() / n as f64;
                            let mean_dx = dxh
                                .iter()
                                .zip(span.clone())
                                .map(|(d, k)| d * xhat[k].as_f64())
                                .sum::<f64>()
                                / n as f64;
                            let is = is.as_f64();
                            for (c, k) in span.enumerate() {
                                dx.data[k] = R::of(is * (dxh[c] - mean_d - xhat[k].as_f64() * mean_dx));
                            }
                        }
                        send(*x, dx);
                    }
                }
            }
        }
        let params = self.params.into_inner();
        Ok(Gradients { grads, params })
    }

    pub fn backward(self, root: Var) -> Result<Gradients<R>> {
        self.backward_scaled(root, 1.0)
    }
}

pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// Gradients of every differentiable leaf reached by a reverse pass.
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
    params: HashMap<ParamId, Var>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of a leaf, `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<R>> {
        self.params.get(&id).and_then(|&v| self.get(v))
    }

    /// Adds the parameter gradients into `acc`.
    pub fn accumulate(&self, acc: &mut ParamGrads) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.get(v) {
                for (a, &x) in acc.0[id.0].data.iter_mut().zip(&g.data) {
                    *a += x.as_f64() as f32;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable arrays in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<f32>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(QecError::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<f32> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<f32> {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Writes the checkpoint layout documented in the README: magic
    /// `NMWPCKPT`, `u32` version, `u32` entry count, then per entry a `u32`
    /// name length, UTF-8 name, `u32` rank (always 2) and `u32` dims; after
    /// the manifest, every payload as little-endian `f32` in entry order.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, t) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&2u32.to_le_bytes())?;
            for d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
        }
        for (_, t) in self.iter() {
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(QecError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CKPT_VERSION {
            return Err(QecError::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut manifest = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| QecError::Format("parameter name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)?;
            if rank != 2 {
                return Err(QecError::Format(format!("{name}: rank {rank}, expected 2")));
            }
            let shape = [read_u32(&mut r)? as usize, read_u32(&mut r)? as usize];
            manifest.push((name, shape));
        }
        let mut store = ParamStore::new();
        for (name, shape) in manifest {
            let mut data = vec![0f32; shape[0] * shape[1]];
            let mut buf = [0u8; 4];
            for x in &mut data {
                r.read_exact(&mut buf)?;
                *x = f32::from_le_bytes(buf);
            }
            store.add(name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| self.write_to(w))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub const CKPT_MAGIC: &[u8; 8] = b"NMWPCKPT";
pub const CKPT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Per-parameter gradient accumulators, shaped like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads(pub Vec<Tensor<f32>>);

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads(store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect())
    }

    pub fn clear(&mut self) {
        for t in &mut self.0 {
            t.data.fill(0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<f32> {
        &self.0[id.0]
    }

    pub fn scale(&mut self, s: f32) {
        for t in &mut self.0 {
            for x in &mut t.data {
                *x *= s;
            }
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }
}

/// Finite-difference oracle for gradient tests.
pub mod check {
    use super::*;

    /// Central differences of a scalar `f` with respect to every entry of
    /// every input, using step `eps`.
    pub fn numeric_gradient(f: impl Fn(&[Tensor<f64>]) -> f64, inputs: &[Tensor<f64>], eps: f64) -> Vec<Tensor<f64>> {
        let mut work = inputs.to_vec();
        let mut out = Vec::with_capacity(inputs.len());
        for t in 0..inputs.len() {
            let mut g = Tensor::zeros(inputs[t].shape());
            for k in 0..inputs[t].len() {
                let x0 = work[t].data[k];
                work[t].data[k] = x0 + eps;
                let up = f(&work);
                work[t].data[k] = x0 - eps;
                let down = f(&work);
                work[t].data[k] = x0;
                g.data[k] = (up - down) / (2.0 * eps);
            }
            out.push(g);
        }
        out
    }

    /// `|a - b| / max(|a|, |b|)` over flattened gradients (0 when both
    /// vanish).
    pub fn relative_error(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
        let flat = |ts: &[Tensor<f64>]| -> Vec<f64> { ts.iter().flat_map(|t| t.data.iter().copied()).collect() };
        let (a, b) = (flat(a), flat(b));
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    /// Analytic gradient of `build`'s scalar output with respect to every
    /// input, via the tape.
    pub fn tape_gradient(
        build: impl Fn(&Tape<f64>, &[Var]) -> Result<Var>,
        inputs: &[Tensor<f64>],
    ) -> Result<(f64, Vec<Tensor<f64>>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
        let root = build(&tape, &vars)?;
        let value = tape.value(root).data[0];
        let grads = tape.backward(root)?;
        let g = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, g))
    }

    /// Relative error between the tape gradient and central differences.
    pub fn gradient_error(
        build: impl Fn(&Tape<f64>, &[Var]) -> Result<Var>,
        inputs: &[Tensor<f64>],
        eps: f64,
    ) -> Result<f64> {
        let (_, analytic) = tape_gradient(&build, inputs)?;
        let f = |xs: &[Tensor<f64>]| {
            let tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|t| tape.var(t.clone())).collect();
            let root = build(&tape, &vars).expect("forward failed during differencing");
            let v = tape.value(root).data[0];
            v
        };
        let numeric = numeric_gradient(f, inputs, eps);
        Ok(relative_error(&analytic, &numeric))
    }
}

/// Random-shape finite-difference sweep over every primitive.
pub mod suite {
    use rand::{Rng, RngCore};

    use super::check::gradient_error;
    use super::*;

    pub const PRIMITIVES: [&str; 23] = [
        "matmul",
        "matmul_t",
        "transpose",
        "add",
        "mul",
        "sub",
        "concat",
        "slice",
        "gather_rows",
        "scatter_rows",
        "mean",
        "max_elementwise",
        "relu",
        "gelu",
        "sigmoid",
        "softmax",
        "layer_norm",
        "log",
        "neg",
        "clamp",
        "sum",
        "scale",
        "add_scalar",
    ];

    fn rand_tensor(rng: &mut dyn RngCore, shape: [usize; 2], lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _| rng.random_range(lo..hi))
    }

    /// Values bounded away from zero, so kinked primitives are smooth within
    /// one differencing step.
    fn off_kink(rng: &mut dyn RngCore, shape: [usize; 2]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _| {
            let m = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }

    type Build = Box<dyn Fn(&Tape<f64>, &[Var]) -> Result<Var>>;

    fn row_std(row: &[f64]) -> f64 {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64).sqrt()
    }

    /// Reduces `y` to a scalar through fixed random weights so that every
    /// output entry carries a distinct gradient.
    fn project(tape: &Tape<f64>, y: Var, seed: u64) -> Result<Var> {
        let shape = tape.shape(y);
        let mut rng = crate::rng::stream_rng(seed, crate::rng::Substream::Init, 0);
        let w = tape.constant(rand_tensor(&mut rng, shape, -1.0, 1.0));
        Ok(tape.sum(tape.mul(y, w)?))
    }

    /// Worst relative gradient error of `name` over `trials` random shapes.
    pub fn primitive_error(name: &str, trials: usize, rng: &mut dyn RngCore, eps: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for t in 0..trials {
            let m = rng.random_range(1..6);
            let n = rng.random_range(1..6);
            let k = rng.random_range(1..6);
            let seed = rng.next_u64();
            let u = |rng: &mut dyn RngCore, s| rand_tensor(rng, s, -1.5, 1.5);
            let (inputs, build): (Vec<Tensor<f64>>, Build) = match name {
                "matmul" => (
                    vec![u(rng, [m, k]), u(rng, [k, n])],
                    Box::new(move |t, v| project(t, t.matmul(v[0], v[1])?, seed)),
                ),
                "matmul_t" => (
                    vec![u(rng, [m, k]), u(rng, [n, k])],
                    Box::new(move |t, v| project(t, t.matmul_t(v[0], v[1])?, seed)),
                ),
                "transpose" => (
                    vec![u(rng, [m, n])],
                    Box::new(move |t, v| project(t, t.transpose(v[0]), seed)),
                ),
                "add" | "mul" | "sub" => {
                    let b_shape = match t % 3 {
                        0 => [m, n],
                        1 => [1, n],
                        _ => [m, 1],
                    };
                    let op = name.to_string();
                    (
                        vec![u(rng, [m, n]), u(rng, b_shape)],
                        Box::new(move |t, v| {
                            let y = match op.as_str() {
                                "add" => t.add(v[0], v[1])?,
                                "mul" => t.mul(v[0], v[1])?,
                                _ => t.sub(v[0], v[1])?,
                            };
                            project(t, y, seed)
                        }),
                    )
                }
                "concat" => {
                    let axis = t % 2;
                    let other = if axis == 0 { [k, n] } else { [m, k] };
                    (
                        vec![u(rng, [m, n]), u(rng, other)],
                        Box::new(move |t, v| project(t, t.concat(v, axis)?, seed)),
                    )
                }
                "slice" => {
                    let axis = t % 2;
                    let size = if axis == 0 { m } else { n };
                    let start = rng.random_range(0..size);
                    let len = rng.random_range(1..=size - start);
                    (
                        vec![u(rng, [m, n])],
                        Box::new(move |t, v| project(t, t.slice(v[0], axis, start, len)?, seed)),
                    )
                }
                "gather_rows" => {
                    let idx: Vec<usize> = (0..k).map(|_| rng.random_range(0..m)).collect();
                    (
                        vec![u(rng, [m, n])],
                        Box::new(move |t, v| project(t, t.gather_rows(v[0], &idx)?, seed)),
                    )
                }
                "scatter_rows" => {
                    let idx: Vec<usize> = (0..k).map(|_| rng.random_range(0..m)).collect();
                    (
                        vec![u(rng, [k, n])],
                        Box::new(move |t, v| project(t, t.scatter_rows(v[0], &idx, m)?, seed)),
                    )
                }
                "mean" => (
                    vec![u(rng, [m, n])],
                    Box::new(move |t, v| {
                        let y = t.mul(v[0], v[0])?;
                        Ok(t.mean(y))
                    }),
                ),
                "max_elementwise" => {
                    let a = u(rng, [m, n]);
                    // Keep the two operands at least 0.1 apart.
                    let b = Tensor::from_fn([m, n], |i, j| {
                        let gap = rng.random_range(0.1..1.0);
                        a.at(i, j) + if rng.random_bool(0.5) { gap } else { -gap }
                    });
                    (
                        vec![a, b],
                        Box::new(move |t, v| project(t, t.max_elementwise(v[0], v[1])?, seed)),
                    )
                }
                "relu" => (
                    vec![off_kink(rng, [m, n])],
                    Box::new(move |t, v| project(t, t.relu(v[0]), seed)),
                ),
                "gelu" => (
                    vec![u(rng, [m, n])],
                    Box::new(move |t, v| project(t, t.gelu(v[0]), seed)),
                ),
                "sigmoid" => (
                    vec![u(rng, [m, n])],
                    Box::new(move |t, v| project(t, t.sigmoid(v[0]), seed)),
                ),
                "softmax" => {
                    let masked = t % 2 == 1;
                    let mask: Vec<bool> = (0..m * n).map(|_| rng.random_bool(0.7)).collect();
                    (
                        vec![u(rng, [m, n])],
                        Box::new(move |t, v| {
                            let y = if masked {
                                t.softmax_masked(v[0], Some(&mask))?
                            } else {
                                t.softmax(v[0])
                            };
                            project(t, y, seed)
                        }),
                    )
                }
                "layer_norm" => {
                    let n = n.max(2);
                    // Near-constant rows make the normalisation so curved
                    // that a 1e-3 difference step is no longer accurate.
                    let mut x = u(rng, [m, n]);
                    for r in 0..m {
                        while row_std(x.row(r)) < 0.25 {
                            for c in 0..n {
                                x.data[r * n + c] = rng.random_range(-1.5..1.5);
                            }
                        }
                    }
                    (
                        vec![x, u(rng, [1, n]), u(rng, [1, n])],
                        Box::new(move |t, v| project(t, t.layer_norm(v[0], v[1], v[2])?, seed)),
                    )
                }
                "log" => (
                    vec![rand_tensor(rng, [m, n], 0.3, 2.0)],
                    Box::new(move |t, v| project(t, t.log(v[0]), seed)),
                ),
                "neg" => (
                    vec![u(rng, [m, n])],
                    Box::new(move |t, v| project(t, t.neg(v[0]), seed)),
                ),
                "clamp" => (
                    // Bounds at +-0.5; off_kink keeps entries near them rare,
                    // so shift any within a step of a bound.
                    vec![off_kink(rng, [m, n]).map(|x| if (x.abs() - 0.5).abs() < 0.02 { x * 1.2 } else { x })],
                    Box::new(move |t, v| project(t, t.clamp(v[0], -0.5, 0.5), seed)),
                ),
                "sum" => (
                    vec![u(rng, [m, n])],
                    Box::new(move |t, v| {
                        let y = t.mul(v[0], v[0])?;
                        Ok(t.sum(y))
                    }),
                ),
                "scale" => (
                    vec![u(rng, [m, n])],
                    Box::new(move |t, v| project(t, t.scale(v[0], -1.7), seed)),
                ),
                "add_scalar" => (
                    vec![u(rng, [m, n])],
                    Box::new(move |t, v| {
                        let y = t.add_scalar(v[0], 0.3);
                        let y = t.mul(y, y)?;
                        project(t, y, seed)
                    }),
                ),
                other => return Err(QecError::InvalidArgument(format!("unknown primitive {other}"))),
            };
            worst = worst.max(gradient_error(build, &inputs, eps)?);
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn t64(shape: [usize; 2], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).data()[0], 0.5);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data()[0], 0.25);
    }

    #[test]
    fn matmul_matches_naive_product() {
        let a = t64([2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t64([3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let tape = Tape::new();
        let (va, vb) = (tape.var(a.clone()), tape.var(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        let naive = Tensor::from_fn([2, 2], |i, j| (0..3).map(|k| a.at(i, k) * b.at(k, j)).sum());
        assert_eq!(*tape.value(c), naive);
        let bt = tape.transpose(vb);
        let c2 = tape.matmul_t(va, bt).unwrap();
        assert_eq!(*tape.value(c2), naive);
    }

    #[test]
    fn sum_of_weights_has_unit_gradient() {
        let tape = Tape::<f64>::new();
        let w = tape.var(Tensor::from_fn([3, 4], |i, j| (i * 4 + j) as f64));
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(*g.get(w).unwrap(), Tensor::full([3, 4], 1.0));
    }

    #[test]
    fn linear_gradient_is_the_input() {
        let x = Tensor::from_fn([2, 3], |i, j| (i as f64 - j as f64) * 0.5);
        let tape = Tape::<f64>::new();
        let w = tape.var(Tensor::full([2, 3], 0.3));
        let xc = tape.constant(x.clone());
        let s = tape.sum(tape.mul(w, xc).unwrap());
        let g = tape.backward(s).unwrap();
        assert_eq!(*g.get(w).unwrap(), x);
        assert!(g.get(xc).is_none());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::<f32>::new();
        let x = tape.var(Tensor::zeros([2, 2]));
        assert!(matches!(tape.backward(x), Err(QecError::NonScalarRoot([2, 2]))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let tape = Tape::<f32>::new();
        let a = tape.var(Tensor::zeros([2, 3]));
        let b = tape.var(Tensor::zeros([2, 2]));
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.add(a, b).is_err());
        assert!(tape.concat(&[a, b], 0).is_err());
    }

    #[test]
    fn max_splits_ties() {
        let tape = Tape::<f64>::new();
        let a = tape.var(t64([1, 3], &[1.0, 2.0, 3.0]));
        let b = tape.var(t64([1, 3], &[1.0, 5.0, 0.0]));
        let s = tape.sum(tape.max_elementwise(a, b).unwrap());
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.5, 0.0, 1.0]);
        assert_eq!(g.get(b).unwrap().data(), &[0.5, 1.0, 0.0]);
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.var(t64([2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.softmax_masked(x, Some(&[false, false, true, true])).unwrap();
        let v = tape.value(y).clone();
        assert_eq!(&v.data()[..2], &[0.0, 0.0]);
        assert!((v.data()[2] + v.data()[3] - 1.0).abs() < 1e-12);
    }

    /// Standard normal CDF by composite Simpson integration of the density.
    fn phi_simpson(x: f64) -> f64 {
        let (a, n) = (-12.0, 20_000);
        let h = (x - a) / n as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(a) + pdf(x);
        for i in 1..n {
            s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn gelu_is_exact_gaussian_cdf_form() {
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.1).collect();
        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::new([1, grid.len()], grid.clone()).unwrap());
        let y = tape.gelu(x);
        for (i, &g) in grid.iter().enumerate() {
            let want = g * phi_simpson(g);
            assert!((tape.value(y).data()[i] - want).abs() < 1e-6, "x = {g}");
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let tape = Tape::<f32>::new();
        let x = tape.var(Tensor::from_fn([4, 16], |i, j| {
            (i as f32 + 1.0) * (j as f32).sin() + i as f32
        }));
        let gain = tape.constant(Tensor::full([1, 16], 1.0));
        let bias = tape.constant(Tensor::zeros([1, 16]));
        let y = tape.layer_norm(x, gain, bias).unwrap();
        let v = tape.value(y);
        for r in 0..4 {
            let row: Vec<f64> = v.row(r).iter().map(|&z| z as f64).collect();
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = crate::rng::stream_rng(11, crate::rng::Substream::Init, 0);
        for name in suite::PRIMITIVES {
            let err = suite::primitive_error(name, 20, &mut rng, 1e-3).unwrap();
            assert!(err < 1e-4, "{name}: relative error {err:e}");
        }
    }

    #[test]
    fn clamp_passes_gradient_only_inside() {
        let tape = Tape::<f64>::new();
        let x = tape.var(t64([1, 3], &[-1.0, 0.5, 2.0]));
        let s = tape.sum(tape.clamp(x, 0.0, 1.0));
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn param_leaves_are_shared_and_gradients_accumulate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::full([1, 2], 2.0)).unwrap();
        let mut acc = ParamGrads::zeros_like(&store);
        for _ in 0..2 {
            let tape = Tape::<f32>::new();
            let (a, b) = (tape.param(&store, id), tape.param(&store, id));
            assert_eq!(a, b);
            let s = tape.sum(tape.mul(a, b).unwrap());
            tape.backward(s).unwrap().accumulate(&mut acc);
        }
        assert_eq!(acc.get(id).data(), &[8.0, 8.0]);
        acc.clear();
        assert_eq!(acc.get(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::new();
        store
            .add("a.w", Tensor::from_fn([2, 3], |i, j| (i * 3 + j) as f32 * 0.25))
            .unwrap();
        store.add("b", Tensor::full([1, 1], -1.5)).unwrap();
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], CKPT_MAGIC);
        // Header (magic, version, count), then per entry name length, name,
        // rank and two dims, then 7 floats.
        let header = 8 + 4 + 4;
        let manifest = (4 + 3 + 4 + 8) + (4 + 1 + 4 + 8);
        assert_eq!(buf.len(), header + manifest + 7 * 4);
        let back = ParamStore::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, store);
        buf[0] = b'X';
        assert!(matches!(
            ParamStore::read_from(buf.as_slice()),
            Err(QecError::Format(_))
        ));
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>()) {
            let mut rng = crate::rng::stream_rng(seed, crate::rng::Substream::Init, 0);
            use rand::Rng;
            let x = Tensor::<f32>::from_fn([rows, cols], |_, _| rng.random_range(-20.0..20.0));
            let tape = Tape::new();
            let y = tape.softmax(tape.var(x));
            for r in 0..rows {
                let s: f64 = tape.value(y).row(r).iter().map(|&v| v as f64).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}

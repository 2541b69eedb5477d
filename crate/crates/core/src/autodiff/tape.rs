//! Wengert-list reverse-mode differentiation over rank-2 tensors.
//!
//! Every primitive appends one node holding its forward value. `backward`
//! walks the list once in reverse, accumulating vector-Jacobian products
//! into per-node buffers. Only parameter leaves keep their gradients.

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    LayerNorm { x: Var, inv_std: Vec<T> },
    Concat(Var, Var),
    SliceCols { x: Var, start: usize },
    Clamp { x: Var, lo: T, hi: T },
    Min(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    is_param: bool,
}

/// Recording of a forward computation.
#[derive(Debug)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    tracing: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to the parameter leaves of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of `shape` when the loss does not depend on it.
    pub fn take_or_zeros(&mut self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape that records operations for differentiation.
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(64),
            tracing: true,
        }
    }

    /// A tape that only evaluates; `backward` on it fails.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::with_capacity(64),
            tracing: false,
        }
    }

    pub fn is_tracing(&self) -> bool {
        self.tracing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[T] {
        self.nodes[var.0].value.data()
    }

    fn dims(&self, var: Var) -> Result<(usize, usize), AutodiffError> {
        self.nodes[var.0].value.dims2()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = self.tracing && inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf whose gradient `backward` reports.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: self.tracing,
            is_param: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            is_param: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, AutodiffError> {
        self.same_shape(name, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_raw(self.shape(a).to_vec(), data);
        Ok(self.push(value, op, &[a, b]))
    }

    /// `[m,k]·[k,n] → [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(AutodiffError::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, false);
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a `[1,n]` row to every row of `[m,n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(x)?;
        if self.shape(bias) != [1, n] {
            return Err(AutodiffError::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        Ok(self.push(Tensor::from_raw(vec![m, n], data), Op::AddBias(x, bias), &[x, bias]))
    }

    /// Multiplies every row of `[m,n]` elementwise by a `[1,n]` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(x)?;
        if self.shape(row) != [1, n] {
            return Err(AutodiffError::shape("mul_row", self.shape(x), self.shape(row)));
        }
        let g = self.data(row);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * g[i % n])
            .collect();
        Ok(self.push(Tensor::from_raw(vec![m, n], data), Op::MulRow(x, row), &[x, row]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("min", a, b, |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    /// Multiplies a tensor by a `[1,1]` node.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, AutodiffError> {
        if self.value(s).len() != 1 {
            return Err(AutodiffError::shape("mul_scalar", self.shape(x), self.shape(s)));
        }
        let k = self.value(s).item();
        let value = self.value(x).map(|v| v * k);
        Ok(self.push(value, Op::MulScalar(x, s), &[x, s]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, T::ln, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// `ln(1 + eˣ)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, T::abs, Op::Abs(x))
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    /// Sum of all elements, as `[1,1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean of all elements, as `[1,1]`.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).len()).unwrap();
        let s: T = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(x), &[x])
    }

    /// Per-row sum `[m,n] → [m,1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(x)?;
        let data = self
            .data(x)
            .chunks_exact(n)
            .map(|row| row.iter().copied().sum())
            .collect();
        Ok(self.push(Tensor::from_raw(vec![m, 1], data), Op::SumCols(x), &[x]))
    }

    /// Per-row normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(x)?;
        let nf = T::from_usize(n).unwrap();
        let mut out = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for row in self.data(x).chunks_exact(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            out.extend(row.iter().map(|&v| (v - mean) * inv));
        }
        let value = Tensor::from_raw(vec![m, n], out);
        Ok(self.push(value, Op::LayerNorm { x, inv_std }, &[x]))
    }

    /// Elementwise product with a precomputed dropout mask (entries 0 or 1/(1-rate)).
    pub fn apply_mask(&mut self, x: Var, mask: Tensor<T>) -> Result<Var, AutodiffError> {
        let mask = self.constant(mask);
        self.mul(x, mask)
    }

    /// Inverted dropout: zeroes entries with probability `rate` and rescales survivors.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut R,
    ) -> Result<Var, AutodiffError> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.shape(x), rate, rng);
        self.apply_mask(x, mask)
    }

    /// Column-wise concatenation `[m,a] ++ [m,b] → [m,a+b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, na) = self.dims(a)?;
        let (mb, nb) = self.dims(b)?;
        if m != mb {
            return Err(AutodiffError::shape("concat", self.shape(a), self.shape(b)));
        }
        let mut data = Vec::with_capacity(m * (na + nb));
        for (ra, rb) in self.data(a).chunks_exact(na).zip(self.data(b).chunks_exact(nb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let value = Tensor::from_raw(vec![m, na + nb], data);
        Ok(self.push(value, Op::Concat(a, b), &[a, b]))
    }

    /// Columns `start..start+len` of `[m,n]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims(x)?;
        if start + len > n || len == 0 {
            return Err(AutodiffError::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let data = self
            .data(x)
            .chunks_exact(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let value = Tensor::from_raw(vec![m, len], data);
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if !self.tracing {
            return Err(AutodiffError::NotTracing);
        }
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.propagate(id, &dy, &mut grads);
        }

        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.is_param {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce() -> Vec<T>) {
        if !self.wants(v) {
            return;
        }
        let delta = f();
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(Tensor::from_raw(self.shape(v).to_vec(), delta)),
        }
    }

    fn propagate(&self, id: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &self.nodes[id].value;
        let g = dy.data();
        let zip_map = |x: Var, f: &dyn Fn(T, T) -> T| -> Vec<T> {
            self.data(x).iter().zip(g).map(|(&xv, &gv)| f(xv, gv)).collect()
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = y.dims2().unwrap().1;
                self.accumulate(grads, *a, || {
                    let mut out = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, false, self.data(*b), true, &mut out, false);
                    out
                });
                self.accumulate(grads, *b, || {
                    let mut out = vec![T::zero(); k * n];
                    T::gemm(k, m, n, self.data(*a), true, g, false, &mut out, false);
                    out
                });
            }
            Op::AddBias(x, b) => {
                let n = y.dims2().unwrap().1;
                self.accumulate(grads, *x, || g.to_vec());
                self.accumulate(grads, *b, || column_sums(g, n));
            }
            Op::MulRow(x, r) => {
                let n = y.dims2().unwrap().1;
                let row = self.data(*r);
                self.accumulate(grads, *x, || {
                    g.iter().enumerate().map(|(i, &gv)| gv * row[i % n]).collect()
                });
                self.accumulate(grads, *r, || {
                    let prod: Vec<T> = zip_map(*x, &|xv, gv| xv * gv);
                    column_sums(&prod, n)
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, || zip_map(*b, &|bv, gv| bv * gv));
                self.accumulate(grads, *b, || zip_map(*a, &|av, gv| av * gv));
            }
            Op::Min(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, || {
                    (0..g.len())
                        .map(|i| if da[i] <= db[i] { g[i] } else { T::zero() })
                        .collect()
                });
                self.accumulate(grads, *b, || {
                    (0..g.len())
                        .map(|i| if da[i] <= db[i] { T::zero() } else { g[i] })
                        .collect()
                });
            }
            Op::MulScalar(x, s) => {
                let k = self.value(*s).item();
                self.accumulate(grads, *x, || g.iter().map(|&v| v * k).collect());
                self.accumulate(grads, *s, || {
                    vec![self.data(*x).iter().zip(g).map(|(&a, &b)| a * b).sum()]
                });
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, || g.iter().map(|&v| v * *c).collect()),
            Op::AddScalar(x) => self.accumulate(grads, *x, || g.to_vec()),
            Op::Tanh(x) => self.accumulate(grads, *x, || {
                y.data()
                    .iter()
                    .zip(g)
                    .map(|(&t, &gv)| gv * (T::one() - t * t))
                    .collect()
            }),
            Op::Relu(x) => self.accumulate(grads, *x, || {
                zip_map(*x, &|xv, gv| if xv > T::zero() { gv } else { T::zero() })
            }),
            Op::Exp(x) => self.accumulate(grads, *x, || {
                y.data().iter().zip(g).map(|(&e, &gv)| e * gv).collect()
            }),
            Op::Log(x) => self.accumulate(grads, *x, || zip_map(*x, &|xv, gv| gv / xv)),
            Op::Square(x) => {
                let two = T::one() + T::one();
                self.accumulate(grads, *x, || zip_map(*x, &|xv, gv| two * xv * gv))
            }
            Op::Softplus(x) => self.accumulate(grads, *x, || {
                zip_map(*x, &|xv, gv| gv * sigmoid(xv))
            }),
            Op::Abs(x) => self.accumulate(grads, *x, || {
                zip_map(*x, &|xv, gv| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })
            }),
            Op::Clamp { x, lo, hi } => self.accumulate(grads, *x, || {
                zip_map(*x, &|xv, gv| {
                    if xv >= *lo && xv <= *hi {
                        gv
                    } else {
                        T::zero()
                    }
                })
            }),
            Op::Sum(x) => {
                let gv = g[0];
                self.accumulate(grads, *x, || vec![gv; self.value(*x).len()]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let gv = g[0] / T::from_usize(n).unwrap();
                self.accumulate(grads, *x, || vec![gv; n]);
            }
            Op::SumCols(x) => {
                let n = self.value(*x).dims2().unwrap().1;
                self.accumulate(grads, *x, || {
                    (0..self.value(*x).len()).map(|i| g[i / n]).collect()
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let n = y.dims2().unwrap().1;
                let nf = T::from_usize(n).unwrap();
                self.accumulate(grads, *x, || {
                    let mut out = Vec::with_capacity(g.len());
                    for ((gr, xr), &inv) in g
                        .chunks_exact(n)
                        .zip(y.data().chunks_exact(n))
                        .zip(inv_std)
                    {
                        let sum_g: T = gr.iter().copied().sum();
                        let sum_gx: T = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                        out.extend(
                            gr.iter()
                                .zip(xr)
                                .map(|(&gv, &xh)| inv * (nf * gv - sum_g - xh * sum_gx) / nf),
                        );
                    }
                    out
                });
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).dims2().unwrap().1;
                let n = y.dims2().unwrap().1;
                self.accumulate(grads, *a, || {
                    g.chunks_exact(n).flat_map(|r| r[..na].iter().copied()).collect()
                });
                self.accumulate(grads, *b, || {
                    g.chunks_exact(n).flat_map(|r| r[na..].iter().copied()).collect()
                });
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).dims2().unwrap();
                let len = y.dims2().unwrap().1;
                self.accumulate(grads, *x, || {
                    let mut out = vec![T::zero(); m * n];
                    for (row, gr) in out.chunks_exact_mut(n).zip(g.chunks_exact(len)) {
                        row[*start..*start + len].copy_from_slice(gr);
                    }
                    out
                });
            }
        }
    }
}

fn column_sums<T: Scalar>(g: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for row in g.chunks_exact(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    Tensor::from_fn(shape, |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

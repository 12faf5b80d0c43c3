//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied to its tensors in creation
//! order, which is already a topological order, so [`Graph::backward`] is a
//! single reverse sweep. Tensors are flat row-major buffers; images use the
//! `[batch, channels, height, width]` layout.
//!
//! Gradients are only propagated into nodes that (transitively) depend on a
//! parameter, so the first convolution never computes an input gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::exec::{chunks, par_map, Exec};
use crate::real::{matmul_acc, Real};

/// Handle to a tensor in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Conv2d { x: Var, w: Var, b: Var, spec: Conv2dSpec },
    MaxPool { x: Var, argmax: Vec<u32> },
    Upsample2(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    LogSoftmax(Var),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
}

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

/// Samples per convolution task. Fixed so that gradient summation order,
/// and therefore every bit of the result, is independent of thread count.
const CONV_CHUNK: usize = 8;

pub struct Graph<'e, T: Real> {
    nodes: Vec<Node<T>>,
    exec: &'e dyn Exec,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the variable does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Summation with `O(log n)` rounding error growth.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    if xs.len() <= 32 {
        xs.iter().copied().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<'e, T: Real> Graph<'e, T> {
    pub fn new(exec: &'e dyn Exec) -> Self {
        Self { nodes: Vec::new(), exec }
    }

    pub fn exec(&self) -> &'e dyn Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// First element; intended for scalar losses.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape), "value/shape mismatch");
        self.nodes.push(Node { value, shape, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that is not differentiated.
    pub fn constant(&mut self, value: Vec<T>, shape: &[usize]) -> Var {
        assert_eq!(value.len(), numel(shape), "constant: value length does not match shape");
        self.push(value, shape.to_vec(), Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Vec<T>, shape: &[usize]) -> Var {
        assert_eq!(value.len(), numel(shape), "param: value length does not match shape");
        self.push(value, shape.to_vec(), Op::Leaf, true)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(value, shape, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Var {
        assert_eq!(self.value(a).len(), self.value(b).len(), "elementwise op on different sizes: {:?} vs {:?}", self.shape(a), self.shape(b));
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(value, shape, op, ng)
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul shapes {sa:?} x {sb:?}");
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); n * m];
        matmul_acc(n, k, m, self.value(a), self.value(b), &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, vec![n, m], Op::MatMul(a, b), ng)
    }

    /// Adds the vector `b` (length `m`) to every row of `a` (`[n, m]`).
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let m = *self.shape(a).last().expect("add_row on scalar");
        assert_eq!(self.value(b).len(), m, "add_row: bias length");
        let bias = self.value(b);
        let value = self.value(a).chunks(m).flat_map(|row| row.iter().zip(bias).map(|(&x, &y)| x + y)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(value, shape, Op::AddRow(a, b), ng)
    }

    /// `x [n, k] * w [k, m] + b [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Minimum(a, b), |x, y| if x <= y { x } else { y })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c_t = T::of(c);
        self.unary(x, Op::Scale(x, c), |v| v * c_t)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c_t = T::of(c);
        self.unary(x, Op::AddScalar(x), |v| v + c_t)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.ln())
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), |v| v.sqrt())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::of(lo), T::of(hi));
        self.unary(x, Op::Clamp(x, lo, hi), |v| if v < l { l } else if v > h { h } else { v })
    }

    /// Reinterprets the buffer with a new shape of the same size.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(numel(shape), self.value(x).len(), "reshape to {shape:?} from {:?}", self.shape(x));
        let value = self.value(x).to_vec();
        let ng = self.ng(x);
        self.push(value, shape.to_vec(), Op::Reshape(x), ng)
    }

    /// Flattens everything but the leading (batch) dimension.
    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.shape(x)[0];
        let rest = self.value(x).len() / n.max(1);
        self.reshape(x, &[n, rest])
    }

    /// `[n, p] ++ [n, q] -> [n, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2 && sa[0] == sb[0], "concat_cols shapes {sa:?} {sb:?}");
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let mut value = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            value.extend_from_slice(&self.value(a)[i * p..(i + 1) * p]);
            value.extend_from_slice(&self.value(b)[i * q..(i + 1) * q]);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(value, vec![n, p + q], Op::ConcatCols(a, b), ng)
    }

    /// Columns `start..end` of `[n, d]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let s = self.shape(x);
        assert!(s.len() == 2 && start <= end && end <= s[1], "slice_cols {start}..{end} of {s:?}");
        let (n, d) = (s[0], s[1]);
        let mut value = Vec::with_capacity(n * (end - start));
        for row in self.value(x).chunks(d.max(1)).take(n) {
            value.extend_from_slice(&row[start..end]);
        }
        let ng = self.ng(x);
        self.push(value, vec![n, end - start], Op::SliceCols(x, start), ng)
    }

    /// Selects rows of `x` (`[n, d]`), with repetition allowed.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let s = self.shape(x);
        let d = if s.len() == 1 { 1 } else { s[1..].iter().product() };
        let mut value = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            value.extend_from_slice(&self.value(x)[i * d..(i + 1) * d]);
        }
        let mut shape = s.to_vec();
        shape[0] = indices.len();
        let ng = self.ng(x);
        self.push(value, shape, Op::GatherRows(x, indices.to_vec()), ng)
    }

    /// Sums the last dimension: `[n, d] -> [n]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let d = *s.last().expect("sum_rows on scalar");
        let n = self.value(x).len() / d.max(1);
        let value = self.value(x).chunks(d).map(|r| r.iter().copied().sum()).collect();
        let ng = self.ng(x);
        self.push(value, vec![n], Op::SumRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = pairwise_sum(self.value(x));
        let ng = self.ng(x);
        self.push(vec![s], vec![1], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = pairwise_sum(self.value(x));
        let ng = self.ng(x);
        self.push(vec![s / T::of(n.max(1) as f64)], vec![1], Op::Mean(x), ng)
    }

    /// Row-wise log-softmax of `[n, k]` logits.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let k = *self.shape(x).last().expect("log_softmax on scalar");
        let mut value = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).chunks(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            value.extend(row.iter().map(|&v| v - lse));
        }
        let shape = self.shape(x).to_vec();
        let ng = self.ng(x);
        self.push(value, shape, Op::LogSoftmax(x), ng)
    }

    /// 2-D convolution: `x [n, c, h, w]`, `w [oc, c, kh, kw]`, `b [oc]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Var {
        let geo = ConvGeometry::new(self.shape(x), self.shape(w), spec);
        assert_eq!(self.value(b).len(), geo.oc, "conv2d bias length");
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let per_out = geo.oc * geo.patches();
        let parts = par_map(self.exec, geo.n.div_ceil(CONV_CHUNK), |c| {
            let mut col = vec![T::zero(); geo.rows() * geo.patches()];
            let mut out = Vec::with_capacity(CONV_CHUNK * per_out);
            for s in chunks(geo.n, CONV_CHUNK).nth(c).unwrap() {
                geo.im2col(&xv[s * geo.in_len()..(s + 1) * geo.in_len()], &mut col);
                let start = out.len();
                out.resize(start + per_out, T::zero());
                let o = &mut out[start..];
                for (oc, row) in o.chunks_mut(geo.patches()).enumerate() {
                    row.iter_mut().for_each(|v| *v = bv[oc]);
                }
                matmul_acc(geo.oc, geo.rows(), geo.patches(), wv, &col, o, true);
            }
            out
        });
        let value: Vec<T> = parts.concat();
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(value, vec![geo.n, geo.oc, geo.oh, geo.ow], Op::Conv2d { x, w, b, spec }, ng)
    }

    /// Max pooling with `-inf` padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let s = self.shape(x);
        assert_eq!(s.len(), 4, "max_pool2d expects [n, c, h, w]");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let oh = (h + 2 * pad - kernel) / stride + 1;
        let ow = (w + 2 * pad - kernel) / stride + 1;
        let xv = self.value(x);
        let mut value = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = u32::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if best_i == u32::MAX || src[i] > best {
                                best = src[i];
                                best_i = i as u32;
                            }
                        }
                    }
                    value.push(best);
                    argmax.push(best_i);
                }
            }
        }
        let ng = self.ng(x);
        self.push(value, vec![n, c, oh, ow], Op::MaxPool { x, argmax }, ng)
    }

    /// Nearest-neighbour 2x upsampling of `[n, c, h, w]`.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        assert_eq!(s.len(), 4, "upsample2 expects [n, c, h, w]");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(n * c * h * w * 4);
        for plane in xv.chunks(h * w) {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    value.push(plane[(y / 2) * w + xx / 2]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(value, vec![n, c, 2 * h, 2 * w], Op::Upsample2(x), ng)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one(); self.nodes[loss.0].value.len()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let len = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                if self.ng(*a) {
                    let da = accumulate(grads, *a, n * k);
                    T::gemm(n, m, k, T::one(), g, m as isize, 1, self.value(*b), 1, m as isize, T::one(), da, k as isize, 1);
                }
                if self.ng(*b) {
                    let db = accumulate(grads, *b, k * m);
                    T::gemm(k, n, m, T::one(), self.value(*a), 1, k as isize, g, m as isize, 1, T::one(), db, m as isize, 1);
                }
            }
            Op::AddRow(a, b) => {
                if self.ng(*a) {
                    let da = accumulate(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
                if self.ng(*b) {
                    let m = len(*b);
                    let db = accumulate(grads, *b, m);
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if self.ng(*a) {
                    let da = accumulate(grads, *a, g.len());
                    da.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
                if self.ng(*b) {
                    let db = accumulate(grads, *b, g.len());
                    db.iter_mut().zip(g).for_each(|(d, &v)| *d += sign * v);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b);
                    let da = accumulate(grads, *a, g.len());
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    let db = accumulate(grads, *b, g.len());
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                for (target, pick_a) in [(*a, true), (*b, false)] {
                    if !self.ng(target) {
                        continue;
                    }
                    let d = accumulate(grads, target, g.len());
                    for i in 0..g.len() {
                        if (av[i] <= bv[i]) == pick_a {
                            d[i] += g[i];
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                let c = T::of(*c);
                let d = accumulate(grads, *x, g.len());
                d.iter_mut().zip(g).for_each(|(d, &v)| *d += c * v);
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let d = accumulate(grads, *x, g.len());
                d.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
            Op::Relu(x) => self.pointwise(*x, g, grads, |xv, _| if xv > T::zero() { T::one() } else { T::zero() }, node),
            Op::Tanh(x) => self.pointwise(*x, g, grads, |_, y| T::one() - y * y, node),
            Op::Sigmoid(x) => self.pointwise(*x, g, grads, |_, y| y * (T::one() - y), node),
            Op::Exp(x) => self.pointwise(*x, g, grads, |_, y| y, node),
            Op::Log(x) => self.pointwise(*x, g, grads, |xv, _| T::one() / xv, node),
            Op::Sqrt(x) => self.pointwise(*x, g, grads, |_, y| if y > T::zero() { T::of(0.5) / y } else { T::zero() }, node),
            Op::Square(x) => self.pointwise(*x, g, grads, |xv, _| T::of(2.0) * xv, node),
            Op::Clamp(x, lo, hi) => {
                let (l, h) = (T::of(*lo), T::of(*hi));
                self.pointwise(*x, g, grads, |xv, _| if xv >= l && xv <= h { T::one() } else { T::zero() }, node)
            }
            Op::ConcatCols(a, b) => {
                let n = node.shape[0];
                let (p, q) = (self.shape(*a)[1], self.shape(*b)[1]);
                if self.ng(*a) {
                    let da = accumulate(grads, *a, n * p);
                    for i in 0..n {
                        for j in 0..p {
                            da[i * p + j] += g[i * (p + q) + j];
                        }
                    }
                }
                if self.ng(*b) {
                    let db = accumulate(grads, *b, n * q);
                    for i in 0..n {
                        for j in 0..q {
                            db[i * q + j] += g[i * (p + q) + p + j];
                        }
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let d = self.shape(*x)[1];
                let w = node.shape[1];
                let dx = accumulate(grads, *x, len(*x));
                for (drow, grow) in dx.chunks_mut(d).zip(g.chunks(w.max(1))) {
                    drow[*start..*start + w].iter_mut().zip(grow).for_each(|(a, &v)| *a += v);
                }
            }
            Op::GatherRows(x, idx) => {
                let d = g.len() / idx.len().max(1);
                let dx = accumulate(grads, *x, len(*x));
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dx[i * d + j] += g[r * d + j];
                    }
                }
            }
            Op::SumRows(x) => {
                let d = *self.shape(*x).last().unwrap();
                let dx = accumulate(grads, *x, len(*x));
                for (row, &gv) in dx.chunks_mut(d).zip(g) {
                    row.iter_mut().for_each(|v| *v += gv);
                }
            }
            Op::Sum(x) => {
                let dx = accumulate(grads, *x, len(*x));
                dx.iter_mut().for_each(|v| *v += g[0]);
            }
            Op::Mean(x) => {
                let n = len(*x);
                let gv = g[0] / T::of(n.max(1) as f64);
                let dx = accumulate(grads, *x, n);
                dx.iter_mut().for_each(|v| *v += gv);
            }
            Op::LogSoftmax(x) => {
                let k = *node.shape.last().unwrap();
                let dx = accumulate(grads, *x, node.value.len());
                for ((drow, grow), yrow) in dx.chunks_mut(k).zip(g.chunks(k)).zip(node.value.chunks(k)) {
                    let gsum: T = grow.iter().copied().sum();
                    for j in 0..k {
                        drow[j] += grow[j] - yrow[j].exp() * gsum;
                    }
                }
            }
            Op::Upsample2(x) => {
                let s = self.shape(*x);
                let (h, w) = (s[2], s[3]);
                let dx = accumulate(grads, *x, len(*x));
                for (dplane, gplane) in dx.chunks_mut(h * w).zip(g.chunks(4 * h * w)) {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dplane[(y / 2) * w + xx / 2] += gplane[y * 2 * w + xx];
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let s = self.shape(*x);
                let plane_in = s[2] * s[3];
                let plane_out = node.shape[2] * node.shape[3];
                let dx = accumulate(grads, *x, len(*x));
                for (p, (gplane, aplane)) in g.chunks(plane_out).zip(argmax.chunks(plane_out)).enumerate() {
                    for (&gv, &a) in gplane.iter().zip(aplane) {
                        dx[p * plane_in + a as usize] += gv;
                    }
                }
            }
            Op::Conv2d { x, w, b, spec } => self.conv_backward(*x, *w, *b, *spec, g, grads),
        }
    }

    fn pointwise(&self, x: Var, g: &[T], grads: &mut [Option<Vec<T>>], df: impl Fn(T, T) -> T, node: &Node<T>) {
        let xv = self.value(x);
        let dx = accumulate(grads, x, g.len());
        for i in 0..g.len() {
            dx[i] += g[i] * df(xv[i], node.value[i]);
        }
    }

    fn conv_backward(&self, x: Var, w: Var, b: Var, spec: Conv2dSpec, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let geo = ConvGeometry::new(self.shape(x), self.shape(w), spec);
        let (xv, wv) = (self.value(x), self.value(w));
        let (need_x, need_w, need_b) = (self.ng(x), self.ng(w), self.ng(b));
        let per_out = geo.oc * geo.patches();
        let parts = par_map(self.exec, geo.n.div_ceil(CONV_CHUNK), |c| {
            let mut dw = if need_w { vec![T::zero(); wv.len()] } else { Vec::new() };
            let mut db = if need_b { vec![T::zero(); geo.oc] } else { Vec::new() };
            let range = chunks(geo.n, CONV_CHUNK).nth(c).unwrap();
            let mut dx = if need_x { vec![T::zero(); range.len() * geo.in_len()] } else { Vec::new() };
            let mut col = vec![T::zero(); geo.rows() * geo.patches()];
            for (local, s) in range.enumerate() {
                let gs = &g[s * per_out..(s + 1) * per_out];
                if need_w {
                    geo.im2col(&xv[s * geo.in_len()..(s + 1) * geo.in_len()], &mut col);
                    let (p, r) = (geo.patches(), geo.rows());
                    T::gemm(geo.oc, p, r, T::one(), gs, p as isize, 1, &col, 1, p as isize, T::one(), &mut dw, r as isize, 1);
                }
                if need_b {
                    for (o, row) in gs.chunks(geo.patches()).enumerate() {
                        db[o] += row.iter().copied().sum::<T>();
                    }
                }
                if need_x {
                    let (p, r) = (geo.patches(), geo.rows());
                    T::gemm(r, geo.oc, p, T::one(), wv, 1, r as isize, gs, p as isize, 1, T::zero(), &mut col, p as isize, 1);
                    geo.col2im(&col, &mut dx[local * geo.in_len()..(local + 1) * geo.in_len()]);
                }
            }
            (dw, db, dx)
        });
        if need_w {
            let d = accumulate(grads, w, wv.len());
            for (pw, _, _) in &parts {
                d.iter_mut().zip(pw).for_each(|(a, &v)| *a += v);
            }
        }
        if need_b {
            let d = accumulate(grads, b, geo.oc);
            for (_, pb, _) in &parts {
                d.iter_mut().zip(pb).for_each(|(a, &v)| *a += v);
            }
        }
        if need_x {
            let d = accumulate(grads, x, xv.len());
            let mut offset = 0;
            for (_, _, px) in &parts {
                d[offset..offset + px.len()].iter_mut().zip(px).for_each(|(a, &v)| *a += v);
                offset += px.len();
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(xs: &[usize], ws: &[usize], spec: Conv2dSpec) -> Self {
        assert!(xs.len() == 4 && ws.len() == 4, "conv2d expects 4-d input and weight, got {xs:?} {ws:?}");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch {xs:?} {ws:?}");
        let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
        assert!(h + 2 * spec.pad >= kh && w + 2 * spec.pad >= kw, "conv2d kernel larger than padded input");
        Self {
            n: xs[0],
            c: xs[1],
            h,
            w,
            oc: ws[0],
            kh,
            kw,
            oh: (h + 2 * spec.pad - kh) / spec.stride + 1,
            ow: (w + 2 * spec.pad - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.pad,
        }
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn patches(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `lo..hi` whose input column `ox * stride + kx - pad`
    /// lies inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx { (self.pad - kx).div_ceil(self.stride) } else { 0 };
        let hi = if self.w + self.pad > kx { ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.ow) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let p = self.patches();
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let (lo, hi) = self.valid_cols(kx);
                    let row = &mut col[r * p..(r + 1) * p];
                    for oy in 0..self.oh {
                        let dst = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize || lo >= hi {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &x[(ci * self.h + iy as usize) * self.w..][..self.w];
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        let first = lo * self.stride + kx - self.pad;
                        if self.stride == 1 {
                            dst[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                        } else {
                            for (k, d) in dst[lo..hi].iter_mut().enumerate() {
                                *d = src[first + k * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let p = self.patches();
        for ci in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (ci * self.kh + ky) * self.kw + kx;
                    let (lo, hi) = self.valid_cols(kx);
                    if lo >= hi {
                        continue;
                    }
                    let row = &col[r * p..(r + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &row[oy * self.ow..(oy + 1) * self.ow];
                        let dst = &mut dx[(ci * self.h + iy as usize) * self.w..][..self.w];
                        let first = lo * self.stride + kx - self.pad;
                        for (k, &v) in src[lo..hi].iter().enumerate() {
                            dst[first + k * self.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

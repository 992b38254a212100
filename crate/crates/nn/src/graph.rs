//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] records composite operations as they are evaluated. Parameters
//! are borrowed from a [`ParamStore`] rather than copied, so building a graph
//! for inference is cheap. [`Graph::backward`] walks the tape in reverse and
//! returns gradients for every parameter that influenced the output.

use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub const BCE_CLAMP: f64 = 1e-7;
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gather {
        src: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MaskedSoftmax(Var),
    WeightedBce {
        logits: Var,
        grad: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        grad: Vec<T>,
    },
    Sum(Var),
    AddN(Vec<Var>),
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameters, whose value lives in the store.
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Real> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
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
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(t),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter leaf. Repeated calls for the same id return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let out = if trans_b {
            let (n, k2) = (bv.rows(), bv.cols());
            assert_eq!(k, k2, "matmul_nt inner dimension mismatch");
            let mut out = Tensor::zeros(&[m, n]);
            T::gemm(
                m,
                k,
                n,
                av.data(),
                k,
                1,
                bv.data(),
                1,
                k,
                T::zero(),
                out.data_mut(),
            );
            out
        } else {
            let (k2, n) = (bv.rows(), bv.cols());
            assert_eq!(
                k,
                k2,
                "matmul inner dimension mismatch: {:?} x {:?}",
                av.shape(),
                bv.shape()
            );
            let mut out = Tensor::zeros(&[m, n]);
            T::gemm(
                m,
                k,
                n,
                av.data(),
                k,
                1,
                bv.data(),
                n,
                1,
                T::zero(),
                out.data_mut(),
            );
            out
        };
        self.push(Op::MatMul { a, b, trans_b }, out, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Add(a, b), out, &[a, b])
    }

    /// Broadcast-add a row vector `b` (length = cols of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let c = av.cols();
        assert_eq!(bv.len(), c, "add_row width mismatch");
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| *x + bd[i % c])
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::AddRow(a, b), out, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| *x * *y)
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        let av = self.value(a);
        let out = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().map(|x| *x * c).collect(),
        );
        self.push(Op::Scale(a, c), out, &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = T::from_f64_lossy(GELU_C);
        let k = T::from_f64_lossy(GELU_A);
        let half = T::from_f64_lossy(0.5);
        let data = av
            .data()
            .iter()
            .map(|&x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        self.push(Op::Gelu(a), out, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::new(
            av.shape().to_vec(),
            av.data().iter().map(|&x| sigmoid(x)).collect(),
        );
        self.push(Op::Sigmoid(a), out, &[a])
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        assert_eq!(g.len(), cols);
        assert_eq!(b.len(), cols);
        let n = T::from_f64_lossy(cols as f64);
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out);
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            out,
            &[x, gamma, beta],
        )
    }

    /// Rows of `src` selected by `ids` (embedding lookup when `src` is a table).
    pub fn gather(&mut self, src: Var, ids: &[usize]) -> Var {
        let sv = self.value(src);
        let c = sv.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            assert!(i < sv.rows(), "gather index {i} out of range {}", sv.rows());
            data.extend_from_slice(sv.row(i));
        }
        let out = Tensor::matrix(ids.len(), c, data);
        self.push(
            Op::Gather {
                src,
                ids: ids.to_vec(),
            },
            out,
            &[src],
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        assert!(start + len <= cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(rows, len, data);
        self.push(Op::SliceCols { a, start }, out, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(pv.row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data);
        self.push(Op::ConcatCols(parts.to_vec()), out, parts)
    }

    /// Row-wise softmax where `allowed[i*cols+j] == false` forces an exact 0.
    /// A row with no allowed entries yields all zeros.
    pub fn masked_softmax(&mut self, a: Var, allowed: &[bool]) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        assert_eq!(allowed.len(), rows * cols, "mask size mismatch");
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = av.row(r);
            let mask = &allowed[r * cols..(r + 1) * cols];
            let mut max = T::neg_infinity();
            for c in 0..cols {
                if mask[c] && row[c] > max {
                    max = row[c];
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let mut sum = T::zero();
            for c in 0..cols {
                if mask[c] {
                    let e = (row[c] - max).exp();
                    out[r * cols + c] = e;
                    sum += e;
                }
            }
            for v in &mut out[r * cols..(r + 1) * cols] {
                *v /= sum;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), out);
        self.push(Op::MaskedSoftmax(a), out, &[a])
    }

    /// Class-weighted binary cross entropy on logits, averaged over the
    /// positions where `mask` is true. Probabilities are clamped to
    /// `[BCE_CLAMP, 1 - BCE_CLAMP]`; clamped positions pass no gradient.
    pub fn weighted_bce(
        &mut self,
        logits: Var,
        labels: &[bool],
        mask: &[bool],
        w0: f64,
        w1: f64,
    ) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), labels.len(), "bce label length mismatch");
        assert_eq!(lv.len(), mask.len(), "bce mask length mismatch");
        let count = mask.iter().filter(|m| **m).count();
        let mut loss = 0.0f64;
        let mut grad = vec![T::zero(); lv.len()];
        if count > 0 {
            let inv = 1.0 / count as f64;
            for (i, &z) in lv.data().iter().enumerate() {
                if !mask[i] {
                    continue;
                }
                let p_raw = sigmoid(z.as_f64());
                let p = p_raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let (w, y) = if labels[i] { (w1, 1.0) } else { (w0, 0.0) };
                loss += weighted_bce(p, labels[i], w0, w1) * inv;
                let clamped = p != p_raw;
                if !clamped {
                    grad[i] = T::from_f64_lossy(w * (p - y) * inv);
                }
            }
        }
        let out = Tensor::scalar(T::from_f64_lossy(loss));
        self.push(Op::WeightedBce { logits, grad }, out, &[logits])
    }

    /// Negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, summed over rows. `None` targets are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        let (rows, cols) = (lv.rows(), lv.cols());
        assert_eq!(rows, targets.len(), "cross_entropy target count mismatch");
        let mut loss = T::zero();
        let mut grad = vec![T::zero(); rows * cols];
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            assert!(t < cols, "target {t} out of vocabulary {cols}");
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[t];
            for c in 0..cols {
                grad[r * cols + c] = (row[c] - lse).exp();
            }
            grad[r * cols + t] -= T::one();
        }
        let out = Tensor::scalar(loss);
        self.push(Op::CrossEntropy { logits, grad }, out, &[logits])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    /// Elementwise sum of same-shaped tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut acc = self.value(parts[0]).clone();
        for p in &parts[1..] {
            acc.add_assign(self.value(*p));
        }
        self.push(Op::AddN(parts.to_vec()), acc, parts)
    }

    /// Reverse sweep from scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![T::one()],
        ));
        let mut out = Gradients::new(self.store.len());

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = (av.rows(), av.cols());
                    let n = g.cols();
                    if self.wants(*a) {
                        let mut da = Tensor::zeros(av.shape());
                        if *trans_b {
                            // b stored [n,k]: da = g · b
                            T::gemm(
                                m,
                                n,
                                k,
                                g.data(),
                                n,
                                1,
                                bv.data(),
                                k,
                                1,
                                T::zero(),
                                da.data_mut(),
                            );
                        } else {
                            // b stored [k,n]: da = g · bᵀ
                            T::gemm(
                                m,
                                n,
                                k,
                                g.data(),
                                n,
                                1,
                                bv.data(),
                                1,
                                n,
                                T::zero(),
                                da.data_mut(),
                            );
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if self.wants(*b) {
                        let mut db = Tensor::zeros(bv.shape());
                        if *trans_b {
                            // db [n,k] = gᵀ · a
                            T::gemm(
                                n,
                                m,
                                k,
                                g.data(),
                                1,
                                n,
                                av.data(),
                                k,
                                1,
                                T::zero(),
                                db.data_mut(),
                            );
                        } else {
                            // db [k,n] = aᵀ · g
                            T::gemm(
                                k,
                                m,
                                n,
                                av.data(),
                                1,
                                k,
                                g.data(),
                                n,
                                1,
                                T::zero(),
                                db.data_mut(),
                            );
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.wants(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.wants(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, b) => {
                    if self.wants(*b) {
                        let bv = self.value(*b);
                        let c = bv.len();
                        let mut db = vec![T::zero(); c];
                        for (j, v) in g.data().iter().enumerate() {
                            db[j % c] += *v;
                        }
                        accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), db));
                    }
                    if self.wants(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.wants(*a) {
                        let d = g
                            .data()
                            .iter()
                            .zip(bv.data())
                            .map(|(x, y)| *x * *y)
                            .collect();
                        accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), d));
                    }
                    if self.wants(*b) {
                        let d = g
                            .data()
                            .iter()
                            .zip(av.data())
                            .map(|(x, y)| *x * *y)
                            .collect();
                        accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), d));
                    }
                }
                Op::Scale(a, c) => {
                    let d = g.data().iter().map(|x| *x * *c).collect();
                    accumulate(&mut grads, *a, Tensor::new(g.shape().to_vec(), d));
                }
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    let c = T::from_f64_lossy(GELU_C);
                    let k = T::from_f64_lossy(GELU_A);
                    let half = T::from_f64_lossy(0.5);
                    let three = T::from_f64_lossy(3.0);
                    let d = av
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gy)| {
                            let t = (c * (x + k * x * x * x)).tanh();
                            let dt = (T::one() - t * t) * c * (T::one() + three * k * x * x);
                            gy * (half * (T::one() + t) + half * x * dt)
                        })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), d));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("sigmoid value");
                    let d = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&s, &gy)| gy * s * (T::one() - s))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), d));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma).data();
                    let cols = gv.len();
                    let rows = inv_std.len();
                    let gd = g.data();
                    if self.wants(*gamma) || self.wants(*beta) {
                        let mut dg = vec![T::zero(); cols];
                        let mut db = vec![T::zero(); cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                dg[c] += gd[r * cols + c] * xhat[r * cols + c];
                                db[c] += gd[r * cols + c];
                            }
                        }
                        if self.wants(*gamma) {
                            accumulate(&mut grads, *gamma, Tensor::new(vec![cols], dg));
                        }
                        if self.wants(*beta) {
                            accumulate(&mut grads, *beta, Tensor::new(vec![cols], db));
                        }
                    }
                    if self.wants(*x) {
                        let n = T::from_f64_lossy(cols as f64);
                        let mut dx = vec![T::zero(); rows * cols];
                        for r in 0..rows {
                            let mut s1 = T::zero();
                            let mut s2 = T::zero();
                            for c in 0..cols {
                                let dh = gd[r * cols + c] * gv[c];
                                s1 += dh;
                                s2 += dh * xhat[r * cols + c];
                            }
                            for c in 0..cols {
                                let dh = gd[r * cols + c] * gv[c];
                                dx[r * cols + c] =
                                    inv_std[r] / n * (n * dh - s1 - xhat[r * cols + c] * s2);
                            }
                        }
                        let shape = self.value(*x).shape().to_vec();
                        accumulate(&mut grads, *x, Tensor::new(shape, dx));
                    }
                }
                Op::Gather { src, ids } => {
                    let sv = self.value(*src);
                    let c = sv.cols();
                    let mut d = Tensor::zeros(sv.shape());
                    let dd = d.data_mut();
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..c {
                            dd[i * c + j] += g.data()[r * c + j];
                        }
                    }
                    accumulate(&mut grads, *src, d);
                }
                Op::SliceCols { a, start } => {
                    let av = self.value(*a);
                    let (rows, cols) = (av.rows(), av.cols());
                    let len = g.cols();
                    let mut d = Tensor::zeros(av.shape());
                    for r in 0..rows {
                        d.data_mut()[r * cols + start..r * cols + start + len]
                            .copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let w = pv.cols();
                        if self.wants(*p) {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            accumulate(&mut grads, *p, Tensor::new(pv.shape().to_vec(), d));
                        }
                        offset += w;
                    }
                }
                Op::MaskedSoftmax(a) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let cols = y.cols();
                    let mut d = vec![T::zero(); y.len()];
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: T = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                        for c in 0..cols {
                            d[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), d));
                }
                Op::WeightedBce { logits, grad } | Op::CrossEntropy { logits, grad } => {
                    let s = g.item();
                    let shape = self.value(*logits).shape().to_vec();
                    let d = grad.iter().map(|v| *v * s).collect();
                    accumulate(&mut grads, *logits, Tensor::new(shape, d));
                }
                Op::Sum(a) => {
                    let s = g.item();
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, s));
                }
                Op::AddN(parts) => {
                    for p in parts {
                        if self.wants(*p) {
                            accumulate(&mut grads, *p, g.clone());
                        }
                    }
                }
            }
        }
        out
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `-w_y [y ln p + (1-y) ln(1-p)]` with `p` clamped to `[1e-7, 1-1e-7]`.
pub fn weighted_bce(p: f64, label: bool, w0: f64, w1: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if label {
        -w1 * p.ln()
    } else {
        -w0 * (1.0 - p).ln()
    }
}

/// `-log softmax(logits)[target]` via a single max-shifted log-sum-exp.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    assert!(target < logits.len(), "target out of range");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Row log-softmax of a slice.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_bce_closed_forms() {
        assert!(weighted_bce(1.0, true, 0.15, 1.0) < 1e-6);
        let v = weighted_bce(0.5, false, 0.15, 1.0);
        assert!((v - 0.15 * std::f64::consts::LN_2).abs() < 1e-12);
        // Unweighted reduction.
        for &(p, y) in &[(0.3, true), (0.8, false), (0.01, true)] {
            let unweighted = if y {
                -(p as f64).ln()
            } else {
                -(1.0 - p as f64).ln()
            };
            assert!((weighted_bce(p, y, 1.0, 1.0) - unweighted).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_closed_forms() {
        assert!((cross_entropy(&[0.0; 4], 2) - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&[50.0, 0.0, 0.0], 0) < 1e-20);
    }

    #[test]
    fn masked_positions_are_exact_zero() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 9.0]));
        let s = g.masked_softmax(a, &[true, false, true, true, true, false]);
        let v = g.value(s);
        assert_eq!(v.get2(0, 1), 0.0);
        assert_eq!(v.get2(1, 2), 0.0);
        for r in 0..2 {
            let sum: f64 = v.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardises_rows() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(
            2,
            4,
            vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 2.0, 7.0],
        ));
        let gamma = g.input(Tensor::full(&[4], 1.0));
        let beta = g.input(Tensor::zeros(&[4]));
        let y = g.layer_norm(x, gamma, beta);
        let v = g.value(y);
        for r in 0..2 {
            let row = v.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn param_leaf_is_shared() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add_const("w", &[2, 2], 1.0);
        let mut g = Graph::new(&store);
        assert_eq!(g.param(w), g.param(w));
    }
}

//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node; `backward` walks the tape from the loss
//! back to the leaves. Parameters enter through [`Graph::param`] and borrow
//! their buffers from a [`ParamStore`], so building a graph per sample does
//! not copy weights.

use std::borrow::Cow;
use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::scalar::Scalar;
use super::tensor::{
    dot, gemm, gemm_acc, gemm_nt, gemm_tn_acc, layer_norm_rows, leaky, leaky_grad, softmax_slice,
    Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Vec<(T, T)>,
    },
    LeakyRelu {
        x: Var,
        alpha: T,
    },
    Gelu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    MeanSquare {
        x: Var,
        target: Vec<T>,
    },
    Sum(Var),
}

struct Node<'a, T: Clone> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [rows @ .., cols] => (rows.iter().product(), *cols),
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    fn push(
        &mut self,
        shape: Vec<usize>,
        value: Cow<'a, [T]>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims(&self.nodes[v.0].shape)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.nodes[a.0].shape.clone(),
            rhs: self.nodes[b.0].shape.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of the sign pattern of every LeakyReLU input. Two evaluations with
    /// equal signatures lie on the same linear piece of each activation.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::LeakyRelu { x, .. } = node.op {
                for &v in self.nodes[x.0].value.iter() {
                    (v > T::zero()).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Snapshot of a node, with its gradient when one was computed.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        let mut t = Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shape");
        t.requires_grad = n.requires_grad;
        if n.requires_grad {
            t.grad = Some(
                self.grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); n.value.len()]),
            );
        }
        t
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, requires_grad)
    }

    /// Borrows the named parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?;
        let v = self.push(
            t.shape().to_vec(),
            Cow::Borrowed(t.data()),
            Op::Leaf,
            t.requires_grad,
        );
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        Ok(v)
    }

    /// Parameters touched by this graph, in first-use order.
    pub fn param_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.param_order
            .iter()
            .map(|n| (n.as_str(), self.params[n]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (kb, n) = self.dims(b);
        if k != kb {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`; linear layers store weights as `out × in`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, kb) = self.dims(b);
        if k != kb {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("add", a, b));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Mul(a, b), rg))
    }

    /// Adds a length-`n` vector to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims(a);
        if self.value(bias).len() != n {
            return Err(self.shape_err("add_row", a, bias));
        }
        let b = self.value(bias);
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let rg = self.rg(a) || self.rg(bias);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), Op::Scale(a, c), rg)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        self.softmax_masked(x, None)
    }

    /// Row-wise softmax where columns with `keep[j] == false` get exactly zero weight.
    pub fn softmax_masked(&mut self, x: Var, keep: Option<Vec<bool>>) -> Var {
        let (_, n) = self.dims(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            softmax_slice(row, keep.as_deref());
        }
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Softmax(x), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (_, d) = self.dims(x);
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        let mut out = vec![T::zero(); self.value(x).len()];
        let stats = layer_norm_rows(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            eps,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: T) -> Var {
        let out = self.value(x).iter().map(|&v| leaky(v, alpha)).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::LeakyRelu { x, alpha }, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| gelu(v).0).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, Cow::Owned(out), Op::Gelu(x), rg)
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Invalid(format!(
                "row {bad} out of range for table of {rows}"
            )));
        }
        let t = self.value(table);
        let out = ids
            .iter()
            .flat_map(|&i| t[i * d..(i + 1) * d].iter().copied())
            .collect();
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), d],
            Cow::Owned(out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Stacks matrices (or vectors, as single rows) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let (_, d) = self.dims(parts[0]);
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != d {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            vec![rows, d],
            Cow::Owned(out),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let (m, _) = self.dims(parts[0]);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let shape = if m == 1 && self.shape(parts[0]).len() == 1 {
            vec![total]
        } else {
            vec![m, total]
        };
        Ok(self.push(shape, Cow::Owned(out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, d) = self.dims(x);
        if start + len > m {
            return Err(Error::Invalid(format!(
                "rows {start}..{} out of {m}",
                start + len
            )));
        }
        let out = self.value(x)[start * d..(start + len) * d].to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            vec![len, d],
            Cow::Owned(out),
            Op::SliceRows { x, start },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, d) = self.dims(x);
        if start + len > d {
            return Err(Error::Invalid(format!(
                "cols {start}..{} out of {d}",
                start + len
            )));
        }
        let v = self.value(x);
        let out = (0..m)
            .flat_map(|i| v[i * d + start..i * d + start + len].iter().copied())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            vec![m, len],
            Cow::Owned(out),
            Op::SliceCols { x, start },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, c) = self.dims(logits);
        if targets.len() != m || targets.iter().any(|&t| t >= c) {
            return Err(Error::Invalid(format!(
                "targets {targets:?} do not fit logits of {m}x{c}"
            )));
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = T::zero();
        for (row, (&t, l)) in probs
            .chunks_mut(c)
            .zip(targets.iter().zip(self.value(logits).chunks(c)))
        {
            let max = l.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + l.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += lse - l[t];
            softmax_slice(row, None);
        }
        let mean = loss / T::from_usize(m).expect("batch fits scalar");
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![mean]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean of squared differences to a constant target.
    pub fn mean_square(&mut self, x: Var, target: &[T]) -> Result<Var> {
        if self.value(x).len() != target.len() {
            return Err(Error::Invalid("mean_square target length".into()));
        }
        let n = T::from_usize(target.len()).expect("len fits scalar");
        let loss = self
            .value(x)
            .iter()
            .zip(target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        let rg = self.rg(x);
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![loss]),
            Op::MeanSquare {
                x,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(x), rg)
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let lv = self.value(loss)[0];
        if !lv.is_finite() {
            return Err(Error::NonFinite {
                value: lv.as_f64(),
                context: "backward".into(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let len = |v: Var| nodes[v.0].value.len();
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                grads[v.0].get_or_insert_with(|| vec![T::zero(); len(v)])
            }};
        }

        match &nodes[idx].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = dims(&nodes[a.0].shape);
                let (_, n) = dims(&nodes[b.0].shape);
                if needs(a) {
                    // dA = dC · Bᵀ
                    let bv = &nodes[b.0].value;
                    let ga = acc!(a);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += dot(grow, &bv[p * n..(p + 1) * n]);
                        }
                    }
                }
                if needs(b) {
                    // dB = Aᵀ · dC
                    gemm_tn_acc(&nodes[a.0].value, g, acc!(b), m, k, n);
                }
            }
            &Op::MatMulNt(a, b) => {
                let (m, k) = dims(&nodes[a.0].shape);
                let (n, _) = dims(&nodes[b.0].shape);
                if needs(a) {
                    // dA = dC · B
                    gemm_acc(g, &nodes[b.0].value, acc!(a), m, n, k);
                }
                if needs(b) {
                    // dB = dCᵀ · A
                    gemm_tn_acc(g, &nodes[a.0].value, acc!(b), m, n, k);
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        acc!(v).iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    let bv = &nodes[b.0].value;
                    let ga = acc!(a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if needs(b) {
                    let av = &nodes[a.0].value;
                    let gb = acc!(b);
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            &Op::AddRow(a, bias) => {
                if needs(a) {
                    acc!(a).iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if needs(bias) {
                    let n = len(bias);
                    let gb = acc!(bias);
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            &Op::Scale(a, c) => {
                if needs(a) {
                    acc!(a).iter_mut().zip(g).for_each(|(x, &y)| *x += y * c);
                }
            }
            &Op::Softmax(x) => {
                if needs(x) {
                    let y = &nodes[idx].value;
                    let (_, n) = dims(&nodes[idx].shape);
                    let gx = acc!(x);
                    for ((yr, gr), out) in y.chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                        let s = dot(yr, gr);
                        for j in 0..n {
                            out[j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let d = len(gamma);
                let xv = &nodes[x.0].value;
                let gv = &nodes[gamma.0].value;
                let nf = T::from_usize(d).expect("width fits scalar");
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = vec![T::zero(); xv.len()];
                let mut ghat = vec![T::zero(); d];
                let mut xhat = vec![T::zero(); d];
                for (r, &(mean, rstd)) in stats.iter().enumerate() {
                    let xr = &xv[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for i in 0..d {
                        xhat[i] = (xr[i] - mean) * rstd;
                        ghat[i] = gr[i] * gv[i];
                        dgamma[i] += gr[i] * xhat[i];
                        dbeta[i] += gr[i];
                        sum_g += ghat[i];
                        sum_gx += ghat[i] * xhat[i];
                    }
                    let dr = &mut dx[r * d..(r + 1) * d];
                    for i in 0..d {
                        dr[i] = rstd / nf * (nf * ghat[i] - sum_g - xhat[i] * sum_gx);
                    }
                }
                if needs(x) {
                    acc!(x).iter_mut().zip(&dx).for_each(|(a, &b)| *a += b);
                }
                if needs(gamma) {
                    acc!(gamma)
                        .iter_mut()
                        .zip(&dgamma)
                        .for_each(|(a, &b)| *a += b);
                }
                if needs(beta) {
                    acc!(beta)
                        .iter_mut()
                        .zip(&dbeta)
                        .for_each(|(a, &b)| *a += b);
                }
            }
            &Op::LeakyRelu { x, alpha } => {
                if needs(x) {
                    let xv = &nodes[x.0].value;
                    let gx = acc!(x);
                    for i in 0..g.len() {
                        gx[i] += g[i] * leaky_grad(xv[i], alpha);
                    }
                }
            }
            &Op::Gelu(x) => {
                if needs(x) {
                    let xv = &nodes[x.0].value;
                    let gx = acc!(x);
                    for i in 0..g.len() {
                        gx[i] += g[i] * gelu(xv[i]).1;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let table = *table;
                if needs(table) {
                    let (_, d) = dims(&nodes[table.0].shape);
                    let gt = acc!(table);
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[i * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = len(p);
                    if needs(p) {
                        acc!(p)
                            .iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(a, &b)| *a += b);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = dims(&nodes[idx].shape);
                let mut col = 0;
                for &p in parts {
                    let (_, w) = dims(&nodes[p.0].shape);
                    if needs(p) {
                        let gp = acc!(p);
                        for i in 0..m {
                            for j in 0..w {
                                gp[i * w + j] += g[i * total + col + j];
                            }
                        }
                    }
                    col += w;
                }
            }
            &Op::SliceRows { x, start } => {
                if needs(x) {
                    let (_, d) = dims(&nodes[x.0].shape);
                    let gx = acc!(x);
                    gx[start * d..start * d + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, &b)| *a += b);
                }
            }
            &Op::SliceCols { x, start } => {
                if needs(x) {
                    let (_, d) = dims(&nodes[x.0].shape);
                    let (m, w) = dims(&nodes[idx].shape);
                    let gx = acc!(x);
                    for i in 0..m {
                        for j in 0..w {
                            gx[i * d + start + j] += g[i * w + j];
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let logits = *logits;
                if needs(logits) {
                    let (m, c) = dims(&nodes[logits.0].shape);
                    let scale = g[0] / T::from_usize(m).expect("batch fits scalar");
                    let gl = acc!(logits);
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            gl[r * c + j] += (probs[r * c + j] - onehot) * scale;
                        }
                    }
                }
            }
            Op::MeanSquare { x, target } => {
                let x = *x;
                if needs(x) {
                    let xv = &nodes[x.0].value;
                    let n = T::from_usize(target.len()).expect("len fits scalar");
                    let two = T::lit(2.0);
                    let gx = acc!(x);
                    for i in 0..target.len() {
                        gx[i] += g[0] * two * (xv[i] - target[i]) / n;
                    }
                }
            }
            &Op::Sum(x) => {
                if needs(x) {
                    acc!(x).iter_mut().for_each(|a| *a += g[0]);
                }
            }
        }
    }
}

/// GELU value and derivative (tanh approximation).
fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let one = T::one();
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let value = half * x * (one + t);
    let du = c * (one + T::lit(3.0) * k * x * x);
    let deriv = half * (one + t) + half * x * (one - t * t) * du;
    (value, deriv)
}

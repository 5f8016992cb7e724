use crate::error::{Error, Result};

use super::scalar::Scalar;

/// Dense row-major tensor.
///
/// `grad` is only populated by [`super::Graph::tensor`] after a backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) && !data.is_empty() {
            return Err(Error::Invalid(format!(
                "zero-sized shape {shape:?} with data"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Invalid("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(x: T) -> Self {
        Self::vector(vec![x])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows and columns when viewed as a matrix; a vector is one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [rows @ .., cols] => (rows.iter().product(), *cols),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let (_, cols) = self.dims2();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|&x| U::lit(x.as_f64())).collect()),
        }
    }
}

// ---- kernels over raw row-major buffers ----

/// `c = a · b` with `a: m×k`, `b: k×n`.
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    c.iter_mut().for_each(|x| *x = T::zero());
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c = a · bᵀ` with `a: m×k`, `b: n×k`.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = dot(arow, brow);
        }
    }
}

/// `c += aᵀ · b` with `a: m×k`, `b: m×n`, `c: k×n`.
pub(crate) fn gemm_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a · b` with `a: m×k`, `b: k×n`.
pub(crate) fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // four accumulators so the loop vectorizes without reassociation flags
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Stabilized softmax of one slice in place. Entries where `keep` is false get exactly zero.
pub(crate) fn softmax_slice<T: Scalar>(x: &mut [T], keep: Option<&[bool]>) {
    let kept = |i: usize| keep.is_none_or(|k| k[i]);
    let mut max = T::neg_infinity();
    for (i, &v) in x.iter().enumerate() {
        if kept(i) && v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut sum = T::zero();
    for (i, v) in x.iter_mut().enumerate() {
        if kept(i) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = T::zero();
        }
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Normalizes each length-`d` row; returns per-row (mean, 1/std).
pub(crate) fn layer_norm_rows<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
    out: &mut [T],
) -> Vec<(T, T)> {
    let d = gamma.len();
    let n = T::from_usize(d).expect("width fits scalar");
    x.chunks(d)
        .zip(out.chunks_mut(d))
        .map(|(row, o)| {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + eps).sqrt();
            for i in 0..d {
                o[i] = (row[i] - mean) * rstd * gamma[i] + beta[i];
            }
            (mean, rstd)
        })
        .collect()
}

#[inline]
pub(crate) fn leaky<T: Scalar>(x: T, alpha: T) -> T {
    if x > T::zero() {
        x
    } else {
        alpha * x
    }
}

/// Derivative of LeakyReLU; the kink at zero takes the negative-side slope `alpha`.
#[inline]
pub(crate) fn leaky_grad<T: Scalar>(x: T, alpha: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        alpha
    }
}

// ---- public tensor operations ----

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        _ => return Err(shape_err("matmul", a, b)),
    };
    let n = match b.shape() {
        [kb, n] if *kb == k => *n,
        _ => return Err(shape_err("matmul", a, b)),
    };
    let mut out = vec![T::zero(); m * n];
    gemm(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Invalid(format!(
            "axis {axis} out of range for {shape:?}"
        )));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.data().to_vec();
    let mut buf = vec![T::zero(); len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for j in 0..len {
                buf[j] = out[base + j * inner];
            }
            softmax_slice(&mut buf, None);
            for j in 0..len {
                out[base + j * inner] = buf[j];
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Layer normalization over the last axis.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let d = *x.shape().last().unwrap_or(&0);
    if d == 0 || gamma.numel() != d || beta.numel() != d {
        return Err(shape_err("layer_norm", x, gamma));
    }
    let mut out = vec![T::zero(); x.numel()];
    layer_norm_rows(x.data(), gamma.data(), beta.data(), eps, &mut out);
    Tensor::new(x.shape().to_vec(), out)
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, alpha: T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| leaky(v, alpha)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn shape_err<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let a = t(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(matmul(&a, &Tensor::eye(2)).unwrap(), a);
        let s = matmul(&t(&[vec![2.0]]), &t(&[vec![3.0]])).unwrap();
        assert_eq!(s.data(), &[6.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(7);
        let a = rng.normal_tensor::<f64>(&[3, 4], 1.0);
        let b = rng.normal_tensor::<f64>(&[4, 2], 1.0);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn identity_associativity_is_exact() {
        let mut rng = Rng::new(3);
        let a = rng.normal_tensor::<f32>(&[4, 5], 1.0);
        let b = rng.normal_tensor::<f32>(&[5, 3], 1.0);
        let ai = matmul(&a, &Tensor::eye(5)).unwrap();
        assert_eq!(matmul(&ai, &b).unwrap(), matmul(&a, &b).unwrap());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::vector(vec![0.0f64, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let x = Tensor::vector(vec![1.0f64, 2.0, 3.0]);
        let s = softmax(&x, 0).unwrap();
        // direct formula: e^i / sum e^j
        let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
        for (i, &v) in s.data().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-12);
        }
        for (v, e) in s.data().iter().zip([0.0900, 0.2447, 0.6652]) {
            assert!((v - e).abs() < 1e-4);
        }

        let shifted = Tensor::vector(x.data().iter().map(|v| v + 10.0).collect());
        let s2 = softmax(&shifted, 0).unwrap();
        for (a, b) in s.data().iter().zip(s2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = t(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        let s = softmax(&x, 0).unwrap();
        assert!((s.data()[0] + s.data()[2] - 1.0).abs() < 1e-12);
        assert_eq!(s.data()[1], 0.5);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let s = softmax(&Tensor::vector(vec![1e30f32, 0.0, -1e30]), 0).unwrap();
        assert!(s.data().iter().all(|v| v.is_finite()));
        assert_eq!(s.data()[0], 1.0);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::vector(vec![1.0f64, 1.0]);
        let zeros = Tensor::vector(vec![0.0f64, 0.0]);
        let c = layer_norm(&Tensor::vector(vec![3.0f64; 2]), &ones, &zeros, 1e-5).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0]);

        let y = layer_norm(&Tensor::vector(vec![1.0f64, -1.0]), &ones, &zeros, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);

        let mut rng = Rng::new(11);
        let x = rng.normal_tensor::<f64>(&[5], 2.0);
        let g = Tensor::vector(vec![1.0; 5]);
        let b = Tensor::vector(vec![0.0; 5]);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        let mean = x.data().iter().sum::<f64>() / 5.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        for (yi, xi) in y.data().iter().zip(x.data()) {
            assert!((yi - (xi - mean) / (var + 1e-5).sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn leaky_relu_examples() {
        let y = leaky_relu(&Tensor::vector(vec![5.0f64, -1.0, 0.0]), 0.01);
        assert_eq!(y.data(), &[5.0, -0.01, 0.0]);
        assert_eq!(leaky_grad(0.0f64, 0.01), 0.01);
    }
}

//! Dense row-major tensors and the numeric kernels shared by the tape.

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

/// Layer-norm epsilon used throughout the model.
pub const LAYERNORM_EPS: f64 = 1e-6;

/// A dense, row-major, n-dimensional array.
///
/// Gradients are not stored on the tensor itself: trainable tensors live in a
/// [`ParamStore`](crate::ParamStore) next to their gradient buffer, and a
/// [`Tape`](crate::Tape) tracks which of its nodes require a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(contract(format!(
                "shape {shape:?} holds {numel} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(contract(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(contract(format!("item() on a tensor of shape {:?}", self.shape)))
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
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

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        same_shape(op, self, other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        same_shape("add_assign", self, other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        same_shape("max_abs_diff", self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn transpose2(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new([c, r], out)
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if start + len > r {
            return Err(contract(format!("row slice {start}+{len} exceeds {r} rows")));
        }
        Self::new([len, c], self.data[start * c..(start + len) * c].to_vec())
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if start + len > c {
            return Err(contract(format!("column slice {start}+{len} exceeds {c} columns")));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
        }
        Self::new([r, len], out)
    }

    pub fn gather_rows(&self, index: &[usize]) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(contract(format!("gather index {i} out of {r} rows")));
            }
            out.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Self::new([index.len(), c], out)
    }

    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let c = match parts.first() {
            Some(p) => p.dims2()?.1,
            None => return Err(contract("concat of zero tensors")),
        };
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (pr, pc) = p.dims2()?;
            if pc != c {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: parts[0].shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            rows += pr;
            out.extend_from_slice(&p.data);
        }
        Self::new([rows, c], out)
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let r = match parts.first() {
            Some(p) => p.dims2()?.0,
            None => return Err(contract("concat of zero tensors")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = p.dims2()?;
            if pr != r {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: parts[0].shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Self::new([r, total], out)
    }
}

fn same_shape<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

pub(crate) fn check_same_shape<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    same_shape(op, a, b)
}

/// `op(a) · op(b)` where `op` optionally transposes a matrix.
pub fn matmul_t<T: Scalar>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Result<Tensor<T>> {
    let (ar, ac) = a.dims2()?;
    let (br, bc) = b.dims2()?;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    if k > 0 {
        let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a.data,
            rsa,
            csa,
            &b.data,
            rsb,
            csb,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
    }
    Tensor::new([m, n], out)
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_t(a, false, b, false)
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(contract(format!("axis {axis} invalid for shape {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis`.
///
/// `key_mask` (last axis only) marks entries that receive exactly zero weight.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize, key_mask: Option<&[bool]>) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_extents(&x.shape, axis)?;
    if let Some(mask) = key_mask {
        if inner != 1 || mask.len() != len {
            return Err(contract("key mask must cover the last axis"));
        }
        if mask.iter().all(|&m| m) {
            return Err(contract("key mask excludes every entry"));
        }
    }
    let masked = |j: usize| key_mask.is_some_and(|m| m[j]);
    let mut out = vec![T::zero(); x.data.len()];
    if inner == 1 && key_mask.is_none() {
        for (src, dst) in x.data.chunks_exact(len).zip(out.chunks_exact_mut(len)) {
            let max = src.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut total = T::zero();
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - max).exp();
                total += *d;
            }
            let inv = T::one() / total;
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        return Tensor::new(x.shape.clone(), out);
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let mut max = T::neg_infinity();
            for j in (0..len).filter(|&j| !masked(j)) {
                max = max.max(x.data[at(j)]);
            }
            let mut total = T::zero();
            for j in (0..len).filter(|&j| !masked(j)) {
                let e = (x.data[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            let inv = T::one() / total;
            for j in (0..len).filter(|&j| !masked(j)) {
                out[at(j)] *= inv;
            }
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Gradient of softmax given its output `y` and upstream gradient `g`.
pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_extents(&y.shape, axis)?;
    let mut out = vec![T::zero(); y.data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let dot: T = (0..len).map(|j| y.data[at(j)] * g.data[at(j)]).sum();
            for j in 0..len {
                out[at(j)] = y.data[at(j)] * (g.data[at(j)] - dot);
            }
        }
    }
    Tensor::new(y.shape.clone(), out)
}

/// Row-wise layer normalisation of a matrix; also returns per-row mean and
/// reciprocal standard deviation for the backward pass.
pub fn layernorm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (r, c) = x.dims2()?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Shape {
            op: "layernorm",
            lhs: x.shape.clone(),
            rhs: gamma.shape.clone(),
        });
    }
    let eps = T::of(LAYERNORM_EPS);
    let n = T::of(c as f64);
    let mut out = vec![T::zero(); r * c];
    let mut means = Vec::with_capacity(r);
    let mut rstds = Vec::with_capacity(r);
    for i in 0..r {
        let row = &x.data[i * c..(i + 1) * c];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        for j in 0..c {
            out[i * c + j] = (row[j] - mean) * rstd * gamma.data[j] + beta.data[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    Ok((Tensor::new([r, c], out)?, means, rstds))
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// GELU, tanh approximation, written as `x·σ(2u)` with
/// `u = √(2/π)(x + 0.044715x³)` (one `exp` instead of a `tanh`).
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    x * sigmoid2(x)
}

#[inline]
fn gelu_arg<T: Scalar>(x: T) -> T {
    T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x)
}

/// `σ(2u) = (1 + tanh u) / 2`.
#[inline]
fn sigmoid2<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (T::of(-2.0) * gelu_arg(x)).exp())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid2(x);
    let du = T::of(GELU_K) * (T::one() + T::of(3.0 * GELU_C) * x * x);
    s + T::of(2.0) * x * s * (T::one() - s) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = t(&[2, 2], &[1., 0., 0., 0.]);
        let b = t(&[2, 2], &[0., 1., 1., 0.]);
        assert_eq!(matmul(&a, &b).unwrap(), t(&[2, 2], &[0., 1., 0., 0.]));
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let err = matmul(&Tensor::<f64>::zeros([2, 3]), &Tensor::zeros([2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_products_agree() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[2, 3], &[0.5, -1., 2., 3., 0., 1.]);
        let direct = matmul(&a, &b.transpose2().unwrap()).unwrap();
        assert_eq!(matmul_t(&a, false, &b, true).unwrap(), direct);
        let direct = matmul(&a.transpose2().unwrap(), &b).unwrap();
        assert_eq!(matmul_t(&a, true, &b, false).unwrap(), direct);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&t(&[2], &[0., 0.]), 0, None).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&t(&[2], &[1000., 0.]), 0, None).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1] < 1e-300 && s.all_finite());
        let w = [1.0f64, 2.0, 3.0];
        let logw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let s = softmax(&t(&[3], &logw), 0, None).unwrap();
        for (p, wi) in s.data().iter().zip(w) {
            assert!((p - wi / 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_inner_axis() {
        let x = t(&[2, 2], &[0., 1., 0., 1.]);
        let s = softmax(&x, 0, None).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let x = t(&[1, 3], &[5., 1., 2.]);
        let s = softmax(&x, 1, Some(&[true, false, false])).unwrap();
        assert_eq!(s.data()[0], 0.0);
        assert!((s.data()[1] + s.data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layernorm_is_finite_on_constant_rows() {
        let x = t(&[1, 4], &[3., 3., 3., 3.]);
        let (y, _, _) = layernorm(&x, &Tensor::ones([4]), &Tensor::zeros([4])).unwrap();
        assert!(y.all_finite());
        assert_eq!(y.data(), &[0., 0., 0., 0.]);
    }

    #[test]
    fn gelu_equals_tanh_form() {
        for i in -400..=400 {
            let x = i as f64 / 40.0;
            let u = GELU_K * (x + GELU_C * x * x * x);
            let tanh_form = 0.5 * x * (1.0 + u.tanh());
            assert!((gelu(x) - tanh_form).abs() < 1e-12, "x = {x}");
        }
        assert_eq!(gelu(-1e4f32), 0.0);
        assert_eq!(gelu(1e4f32), 1e4);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_191_990_607_477).abs() < 1e-12);
        let h = 1e-6;
        for x in [-2.0f64, -0.3, 0.0, 0.7, 3.0] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}

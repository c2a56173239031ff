//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every primitive evaluates eagerly and appends a node; nodes only
//! reference earlier nodes, so the tape is topologically ordered by
//! construction. [`Tape::backward`] walks it once in reverse.

use std::borrow::Cow;

use crate::error::{contract, Error, Result};
use crate::param::{GradBuffer, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{self, check_same_shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Gelu(Var),
    Ln(Var),
    Sqrt(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        means: Vec<T>,
        rstds: Vec<T>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Tensor<T>,
        counted: usize,
    },
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive applications for one forward pass.
///
/// Parameter leaves borrow their values from a [`ParamStore`], so the
/// store must outlive the tape. A tape built with [`Tape::inference`]
/// evaluates the same primitives but never requires gradients.
pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
    grad_enabled: bool,
    trainable: Option<Vec<bool>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            trainable: None,
        }
    }

    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Restricts gradient tracking to parameters whose flag is set.
    pub fn with_trainable(mut self, trainable: Vec<bool>) -> Self {
        self.trainable = Some(trainable);
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that participates in differentiation (if the tape allows it).
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push_raw(Cow::Owned(value), Op::Leaf { param: None }, rg)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(Cow::Owned(value), Op::Leaf { param: None }, false)
    }

    pub fn constant_ref(&mut self, value: &'p Tensor<T>) -> Var {
        self.push_raw(Cow::Borrowed(value), Op::Leaf { param: None }, false)
    }

    pub fn param(&mut self, store: &'p ParamStore<T>, id: ParamId) -> Var {
        let trainable = self
            .trainable
            .as_ref()
            .is_none_or(|t| t.get(id.index()).copied().unwrap_or(false));
        let rg = self.grad_enabled && trainable;
        self.push_raw(Cow::Borrowed(store.value(id)), Op::Leaf { param: Some(id) }, rg)
    }

    fn push_raw(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(Cow::Owned(value), op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, true)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let out = tensor::matmul_t(self.value(a), ta, self.value(b), tb)?;
        self.push("matmul", out, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (r, c) = xv.dims2()?;
        if bv.numel() != c {
            return Err(Error::Shape {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for i in 0..r {
            for (o, &b) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow { x, bias }, &[x, bias])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push("scale", out, Op::Scale { x, factor }, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(tensor::gelu);
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.ln());
        self.push("ln", out, Op::Ln(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.sqrt());
        self.push("sqrt", out, Op::Sqrt(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = tensor::softmax(self.value(x), axis, None)?;
        self.push("softmax", out, Op::Softmax { x, axis }, &[x])
    }

    /// Row softmax of a matrix where masked columns receive exactly zero.
    pub fn masked_softmax(&mut self, x: Var, key_mask: &[bool]) -> Result<Var> {
        self.value(x).dims2()?;
        let out = tensor::softmax(self.value(x), 1, Some(key_mask))?;
        self.push("masked_softmax", out, Op::Softmax { x, axis: 1 }, &[x])
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, means, rstds) = tensor::layernorm(self.value(x), self.value(gamma), self.value(beta))?;
        self.push(
            "layernorm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                means,
                rstds,
            },
            &[x, gamma, beta],
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_rows(start, len)?;
        self.push("slice_rows", out, Op::SliceRows { x, start }, &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_cols(start, len)?;
        self.push("slice_cols", out, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_rows(&values)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_cols(&values)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let out = self.value(x).gather_rows(index)?;
        self.push(
            "gather_rows",
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.numel() == 0 {
            return Err(contract("mean of an empty tensor"));
        }
        let out = Tensor::scalar(v.sum() / T::of(v.numel() as f64));
        self.push("mean", out, Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Mean softmax cross-entropy over the rows of `logits` whose target is
    /// `Some`; `None` rows are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        let (r, k) = lv.dims2()?;
        if targets.len() != r {
            return Err(contract(format!("{} targets for {r} logit rows", targets.len())));
        }
        let probs = tensor::softmax(lv, 1, None)?;
        let mut total = 0.0f64;
        let mut counted = 0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= k {
                    return Err(contract(format!("label {t} out of range for {k} classes")));
                }
                // log-sum-exp form keeps the loss finite for saturated rows
                let row = lv.row(i);
                let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v)).as_f64();
                let lse = max + row.iter().map(|&v| (v.as_f64() - max).exp()).sum::<f64>().ln();
                total += lse - row[t].as_f64();
                counted += 1;
            }
        }
        if counted == 0 {
            return Err(contract("cross-entropy with every target ignored"));
        }
        let out = Tensor::scalar(T::of(total / counted as f64));
        self.push(
            "cross_entropy",
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                counted,
            },
            &[logits],
        )
    }

    /// Runs reverse-mode differentiation from a scalar `loss`, consuming
    /// the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params = Vec::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, params });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf { param } = node.op {
                if let Some(p) = param {
                    params.push((p, i));
                }
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads, params })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                check_same_shape("backward", self.value(v), &g)?;
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            &Op::MatMul { a, b, ta, tb } => {
                let av = self.value(a);
                let bv = self.value(b);
                if self.rg(a) {
                    let da = match (ta, tb) {
                        (false, false) => tensor::matmul_t(g, false, bv, true)?,
                        (false, true) => tensor::matmul_t(g, false, bv, false)?,
                        (true, false) => tensor::matmul_t(bv, false, g, true)?,
                        (true, true) => tensor::matmul_t(bv, true, g, true)?,
                    };
                    self.acc(grads, a, da)?;
                }
                if self.rg(b) {
                    let db = match (ta, tb) {
                        (false, false) => tensor::matmul_t(av, true, g, false)?,
                        (true, false) => tensor::matmul_t(av, false, g, false)?,
                        (false, true) => tensor::matmul_t(g, true, av, false)?,
                        (true, true) => tensor::matmul_t(g, true, av, true)?,
                    };
                    self.acc(grads, b, db)?;
                }
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, g.clone())?;
                self.acc(grads, b, g.clone())?;
            }
            &Op::Sub(a, b) => {
                self.acc(grads, a, g.clone())?;
                self.acc(grads, b, g.map(|v| -v))?;
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    let da = g.zip_map(self.value(b), "mul", |x, y| x * y)?;
                    self.acc(grads, a, da)?;
                }
                if self.rg(b) {
                    let db = g.zip_map(self.value(a), "mul", |x, y| x * y)?;
                    self.acc(grads, b, db)?;
                }
            }
            &Op::AddRow { x, bias } => {
                self.acc(grads, x, g.clone())?;
                if self.rg(bias) {
                    let (r, c) = g.dims2()?;
                    let mut db = vec![T::zero(); c];
                    for row in 0..r {
                        for (d, &v) in db.iter_mut().zip(g.row(row)) {
                            *d += v;
                        }
                    }
                    let shape = self.value(bias).shape().to_vec();
                    self.acc(grads, bias, Tensor::new(shape, db)?)?;
                }
            }
            &Op::Scale { x, factor } => self.acc(grads, x, g.map(|v| v * factor))?,
            &Op::Gelu(x) => {
                let dx = g.zip_map(self.value(x), "gelu", |gv, xv| gv * tensor::gelu_grad(xv))?;
                self.acc(grads, x, dx)?;
            }
            &Op::Ln(x) => {
                let dx = g.zip_map(self.value(x), "ln", |gv, xv| gv / xv)?;
                self.acc(grads, x, dx)?;
            }
            &Op::Sqrt(x) => {
                let two = T::of(2.0);
                let dx = g.zip_map(y, "sqrt", |gv, yv| gv / (two * yv))?;
                self.acc(grads, x, dx)?;
            }
            &Op::Softmax { x, axis } => {
                let dx = tensor::softmax_backward(y, g, axis)?;
                self.acc(grads, x, dx)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                means,
                rstds,
            } => {
                let xv = self.value(*x);
                let gam = self.value(*gamma);
                let (r, c) = xv.dims2()?;
                let mut dx = vec![T::zero(); r * c];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let n = T::of(c as f64);
                let mut xhat = vec![T::zero(); c];
                let mut dxhat = vec![T::zero(); c];
                for row in 0..r {
                    let xr = xv.row(row);
                    let gr = g.row(row);
                    let (mean, rstd) = (means[row], rstds[row]);
                    for j in 0..c {
                        xhat[j] = (xr[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gam.data()[j];
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                    }
                    let m1 = dxhat.iter().copied().sum::<T>() / n;
                    let m2 = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
                    for j in 0..c {
                        dx[row * c + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                if self.rg(*x) {
                    self.acc(grads, *x, Tensor::new([r, c], dx)?)?;
                }
                if self.rg(*gamma) {
                    let shape = gam.shape().to_vec();
                    self.acc(grads, *gamma, Tensor::new(shape, dgamma)?)?;
                }
                if self.rg(*beta) {
                    let shape = self.value(*beta).shape().to_vec();
                    self.acc(grads, *beta, Tensor::new(shape, dbeta)?)?;
                }
            }
            &Op::SliceRows { x, start } => {
                let (_, c) = g.dims2()?;
                let mut dx = Tensor::zeros(self.value(x).shape().to_vec());
                dx.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                self.acc(grads, x, dx)?;
            }
            &Op::SliceCols { x, start } => {
                let (r, len) = g.dims2()?;
                let (_, c) = self.value(x).dims2()?;
                let mut dx = Tensor::zeros([r, c]);
                for row in 0..r {
                    dx.data_mut()[row * c + start..row * c + start + len].copy_from_slice(g.row(row));
                }
                self.acc(grads, x, dx)?;
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let (pr, _) = self.value(p).dims2()?;
                    if self.rg(p) {
                        self.acc(grads, p, g.slice_rows(row, pr)?)?;
                    }
                    row += pr;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let (_, pc) = self.value(p).dims2()?;
                    if self.rg(p) {
                        self.acc(grads, p, g.slice_cols(col, pc)?)?;
                    }
                    col += pc;
                }
            }
            Op::GatherRows { x, index } => {
                let (_, c) = g.dims2()?;
                let mut dx = Tensor::zeros(self.value(*x).shape().to_vec());
                for (k, &src) in index.iter().enumerate() {
                    for (d, &v) in dx.data_mut()[src * c..(src + 1) * c].iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                self.acc(grads, *x, dx)?;
            }
            &Op::Sum(x) => {
                let gv = g.item()?;
                self.acc(grads, x, Tensor::full(self.value(x).shape().to_vec(), gv))?;
            }
            &Op::Mean(x) => {
                let xv = self.value(x);
                let gv = g.item()? / T::of(xv.numel() as f64);
                self.acc(grads, x, Tensor::full(xv.shape().to_vec(), gv))?;
            }
            &Op::Reshape(x) => {
                let shape = self.value(x).shape().to_vec();
                self.acc(grads, x, g.clone().reshape(shape)?)?;
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                counted,
            } => {
                let gv = g.item()? / T::of(*counted as f64);
                let (_, k) = probs.dims2()?;
                let mut dx = Tensor::zeros(probs.shape().to_vec());
                for (row, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        let d = &mut dx.data_mut()[row * k..(row + 1) * k];
                        for (dv, &p) in d.iter_mut().zip(probs.row(row)) {
                            *dv = p * gv;
                        }
                        d[t] -= gv;
                    }
                }
                self.acc(grads, *logits, dx)?;
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a leaf created on the originating tape.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Collects parameter gradients; a parameter bound to the tape more than
    /// once receives the sum.
    pub fn into_param_grads(mut self, num_params: usize) -> Result<GradBuffer<T>> {
        let mut buf = GradBuffer::empty(num_params);
        for (p, node) in self.params {
            if let Some(g) = self.grads[node].take() {
                match &mut buf.slots[p.index()] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2, 3], &[1., -2., 3., 0.5, 0., 9.]).unwrap(), true);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &Tensor::ones([2, 3]));
    }

    #[test]
    fn mse_of_self_has_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([3], &[0.3, -1.0, 2.0]).unwrap(), true);
        let d = tape.sub(x, x).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let m = tape.mean(sq).unwrap();
        let g = tape.backward(m).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &Tensor::zeros([3]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros([2]), true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn inference_tape_tracks_nothing() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::ones([2, 2])).unwrap();
        let mut tape = Tape::inference();
        let w = tape.param(&store, id);
        let y = tape.matmul(w, w).unwrap();
        assert!(!tape.requires_grad(y));
        assert_eq!(tape.value(y).data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn param_grads_accumulate_in_store() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64([2], &[1.0, 2.0]).unwrap()).unwrap();
        for _ in 0..2 {
            let grads = {
                let mut tape = Tape::new();
                let w = tape.param(&store, id);
                let s = tape.sum(w).unwrap();
                tape.backward(s).unwrap().into_param_grads(store.len()).unwrap()
            };
            store.accumulate(&grads).unwrap();
        }
        assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[2.0, 2.0]);
        store.zero_grad();
        assert!(store.get(id).grad.is_none());
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::ones([1])).unwrap();
        let b = store.add("b", Tensor::ones([1])).unwrap();
        let mut tape = Tape::new().with_trainable(vec![false, true]);
        let av = tape.param(&store, a);
        let bv = tape.param(&store, b);
        let p = tape.mul(av, bv).unwrap();
        let grads = tape.backward(p).unwrap().into_param_grads(2).unwrap();
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(Tensor::zeros([1, 4]), true);
        let ce = tape.cross_entropy(l, &[Some(2)]).unwrap();
        assert!((tape.value(ce).item().unwrap() - 4f64.ln()).abs() < 1e-12);
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(Tensor::zeros([2, 4]), true);
        assert!(tape.cross_entropy(l, &[None, None]).is_err());
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(Tensor::zeros([1, 4]), true);
        assert!(tape.cross_entropy(l, &[Some(4)]).is_err());
    }
}

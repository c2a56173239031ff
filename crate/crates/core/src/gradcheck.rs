//! Finite-difference verification of tape gradients.
//!
//! The finite-difference side only ever calls the forward function, so it
//! shares no code path with [`Tape::backward`].

use crate::error::{contract, Result};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum admissible relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is ~0 are judged on absolute error at this scale.
    pub scale_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-5,
            scale_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index (across all checked tensors) of the worst entry.
    pub worst: Option<usize>,
    /// Flat indices whose relative error exceeds the tolerance.
    pub failures: Vec<usize>,
    /// Two evaluations at the same point disagreed bit-for-bit.
    pub nondeterministic: bool,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.nondeterministic && self.failures.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

struct Accumulator {
    cfg: GradCheckConfig,
    report: GradCheckReport,
}

impl Accumulator {
    fn new(cfg: GradCheckConfig) -> Self {
        Self {
            cfg,
            report: GradCheckReport {
                checked: 0,
                max_rel_error: 0.0,
                worst: None,
                failures: Vec::new(),
                nondeterministic: false,
            },
        }
    }

    fn push(&mut self, analytic: f64, numeric: f64) {
        let idx = self.report.checked;
        let err = relative_error(analytic, numeric, self.cfg.scale_floor);
        if err > self.report.max_rel_error || self.report.worst.is_none() {
            self.report.max_rel_error = err.max(self.report.max_rel_error);
            self.report.worst = Some(idx);
        }
        // NaN errors must fail
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(err <= self.cfg.tolerance) {
            self.report.failures.push(idx);
        }
        self.report.checked += 1;
    }
}

fn scalar_of(tape: &Tape<'_, f64>, v: Var) -> Result<f64> {
    tape.value(v).item()
}

/// Compares the tape gradient of a scalar function of `x` with central
/// differences, element by element.
pub fn gradient_check<F>(f: F, x: &Tensor<f64>, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a, f64>, Var) -> Result<Var>,
{
    let eval = |point: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::inference();
        let v = tape.constant(point.clone());
        let out = f(&mut tape, v)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    let base = scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .wrt(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut acc = Accumulator::new(cfg);
    acc.report.nondeterministic = eval(x)?.to_bits() != base.to_bits() || eval(x)?.to_bits() != base.to_bits();

    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + cfg.step;
        let hi = eval(&probe)?;
        probe.data_mut()[i] = orig - cfg.step;
        let lo = eval(&probe)?;
        probe.data_mut()[i] = orig;
        acc.push(analytic.data()[i], (hi - lo) / (2.0 * cfg.step));
    }
    Ok(acc.report)
}

/// Anything that owns a parameter store.
pub trait HasParams {
    fn params(&self) -> &ParamStore<f64>;
    fn params_mut(&mut self) -> &mut ParamStore<f64>;
}

/// Gradient check over every scalar of every parameter of `model`.
///
/// `f` must build the loss from the model's parameters on the given tape.
pub fn check_params<M, F>(model: &mut M, f: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    M: HasParams,
    F: for<'a> Fn(&mut Tape<'a, f64>, &'a M) -> Result<Var>,
{
    let (base, grads) = {
        let mut tape = Tape::new();
        let out = f(&mut tape, &*model)?;
        let base = scalar_of(&tape, out)?;
        let n = model.params().len();
        (base, tape.backward(out)?.into_param_grads(n)?)
    };
    let eval = |m: &M| -> Result<f64> {
        let mut tape = Tape::inference();
        let out = f(&mut tape, m)?;
        scalar_of(&tape, out)
    };

    let mut acc = Accumulator::new(cfg);
    acc.report.nondeterministic = eval(model)?.to_bits() != base.to_bits();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let numel = model.params().value(id).numel();
        let analytic = grads.get(id).cloned();
        for i in 0..numel {
            let orig = model.params().value(id).data()[i];
            model.params_mut().get_mut(id).value.data_mut()[i] = orig + cfg.step;
            let hi = eval(model)?;
            model.params_mut().get_mut(id).value.data_mut()[i] = orig - cfg.step;
            let lo = eval(model)?;
            model.params_mut().get_mut(id).value.data_mut()[i] = orig;
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[i]);
            acc.push(a, (hi - lo) / (2.0 * cfg.step));
        }
    }
    if acc.report.checked == 0 {
        return Err(contract("model has no parameters to check"));
    }
    Ok(acc.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, Purpose::Test, 0);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_is_exact_on_dyadic_points() {
        let x = Tensor::from_f64([2, 3], &[1., 2., -3., 4., 0., 8.]).unwrap();
        let cfg = GradCheckConfig {
            step: 2f64.powi(-20),
            ..Default::default()
        };
        let r = gradient_check(|t, x| t.sum(x), &x, cfg).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn softmax_entropy_vector() {
        let x = random(&[8], 1);
        let f = |t: &mut Tape<'_, f64>, x: Var| {
            let p = t.softmax(x, 0)?;
            let lp = t.ln(p)?;
            let plp = t.mul(p, lp)?;
            let s = t.sum(plp)?;
            t.scale(s, -1.0)
        };
        let r = gradient_check(f, &x, GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn layernorm_gelu_matmul_chain() {
        let x = random(&[4, 4], 2);
        let w = random(&[4, 4], 3);
        let gamma = random(&[4], 4);
        let beta = random(&[4], 5);
        let f = |t: &mut Tape<'_, f64>, x: Var| {
            let g = t.constant(gamma.clone());
            let b = t.constant(beta.clone());
            let wv = t.constant(w.clone());
            let n = t.layernorm(x, g, b)?;
            let a = t.gelu(n)?;
            let m = t.matmul(a, wv)?;
            let sq = t.mul(m, m)?;
            t.sum(sq)
        };
        let r = gradient_check(f, &x, GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn matmul_fd_3x4_by_4x2() {
        let a = random(&[3, 4], 6);
        let b = random(&[4, 2], 7);
        let ra = gradient_check(
            |t, x| {
                let bv = t.constant(b.clone());
                let m = t.matmul(x, bv)?;
                t.sum(m)
            },
            &a,
            GradCheckConfig::default(),
        )
        .unwrap();
        let rb = gradient_check(
            |t, x| {
                let av = t.constant(a.clone());
                let m = t.matmul(av, x)?;
                t.sum(m)
            },
            &b,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(ra.max_rel_error < 1e-5 && rb.max_rel_error < 1e-5);
    }

    #[test]
    fn nondeterminism_is_reported_separately() {
        use std::sync::atomic::{AtomicU64, Ordering};
        let counter = AtomicU64::new(0);
        let x = Tensor::from_f64([1], &[1.0]).unwrap();
        let r = gradient_check(
            |t, x| {
                let k = counter.fetch_add(1, Ordering::SeqCst) as f64;
                let s = t.sum(x)?;
                t.scale(s, 1.0 + k * 1e-3)
            },
            &x,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.nondeterministic);
        assert!(!r.passed());
    }
}

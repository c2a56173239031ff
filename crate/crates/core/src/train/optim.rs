use crate::error::{contract, Error, Result};
use crate::param::{GradBuffer, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    ids: Vec<ParamId>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u32,
}

impl<T: Scalar> AdamW<T> {
    /// Optimizer over the listed parameters only.
    pub fn new(store: &ParamStore<T>, ids: Vec<ParamId>) -> Self {
        let zeros = |id: &ParamId| Tensor::zeros(store.value(*id).shape().to_vec());
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
            t: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient (their moments still decay).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &GradBuffer<T>, lr: f64, weight_decay: f64) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (k, &id) in self.ids.iter().enumerate() {
            let p = store.get_mut(id);
            if p.value.shape() != self.m[k].shape() {
                return Err(contract(format!("optimizer state for {} has the wrong shape", p.name)));
            }
            let g = grads.get(id);
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g.data()[i].as_f64());
                let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
                m[i] = T::of(mi);
                v[i] = T::of(vi);
                let decayed = w.as_f64() * (1.0 - lr * weight_decay);
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                *w = T::of(decayed - update);
            }
        }
        Ok(())
    }
}

//! Transformer building blocks bound to a [`ParamStore`].

use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub(crate) const INIT_STD: f64 = 0.02;

/// Normal(0, std²) truncated to ±2·std by rejection.
pub(crate) fn trunc_normal<T: Scalar>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::of(v);
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches by construction")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(
                format!("{name}.weight"),
                trunc_normal(rng, &[fan_in, fan_out], INIT_STD),
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros([fan_out]))?,
        })
    }

    pub fn forward<'p, T: Scalar>(&self, tape: &mut Tape<'p, T>, store: &'p ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([dim]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros([dim]))?,
        })
    }

    pub fn forward<'p, T: Scalar>(&self, tape: &mut Tape<'p, T>, store: &'p ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layernorm(x, g, b)
    }
}

/// Attention probabilities and keys of one block, one tensor per head.
#[derive(Clone, Debug)]
pub struct HeadTensors<T> {
    /// `S × S` row-stochastic matrices.
    pub probs: Vec<Tensor<T>>,
    /// `S × d_head` key projections.
    pub keys: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            query: Linear::new(store, rng, &format!("{name}.query"), dim, dim)?,
            key: Linear::new(store, rng, &format!("{name}.key"), dim, dim)?,
            value: Linear::new(store, rng, &format!("{name}.value"), dim, dim)?,
            out: Linear::new(store, rng, &format!("{name}.out"), dim, dim)?,
            heads,
            dim,
        })
    }

    pub fn forward<'p, T: Scalar>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        x: Var,
        key_mask: Option<&[bool]>,
        capture: bool,
    ) -> Result<(Var, Option<HeadTensors<T>>)> {
        let q = self.query.forward(tape, store, x)?;
        let k = self.key.forward(tape, store, x)?;
        let v = self.value.forward(tape, store, x)?;
        let dh = self.dim / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        let mut captured = capture.then(|| HeadTensors {
            probs: Vec::with_capacity(self.heads),
            keys: Vec::with_capacity(self.heads),
        });
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale)?;
            let probs = match key_mask {
                Some(mask) => tape.masked_softmax(scores, mask)?,
                None => tape.softmax(scores, 1)?,
            };
            if let Some(c) = captured.as_mut() {
                c.probs.push(tape.value(probs).clone());
                c.keys.push(tape.value(kh).clone());
            }
            outs.push(tape.matmul(probs, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        Ok((self.out.forward(tape, store, merged)?, captured))
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            fc1: Linear::new(store, rng, &format!("{name}.mlp.fc1"), dim, dim * mlp_ratio)?,
            fc2: Linear::new(store, rng, &format!("{name}.mlp.fc2"), dim * mlp_ratio, dim)?,
        })
    }

    pub fn forward<'p, T: Scalar>(
        &self,
        tape: &mut Tape<'p, T>,
        store: &'p ParamStore<T>,
        x: Var,
        key_mask: Option<&[bool]>,
        capture: bool,
    ) -> Result<(Var, Option<HeadTensors<T>>)> {
        let h = self.norm1.forward(tape, store, x)?;
        let (a, captured) = self.attn.forward(tape, store, h, key_mask, capture)?;
        let x = tape.add(x, a)?;
        let h = self.norm2.forward(tape, store, x)?;
        let h = self.fc1.forward(tape, store, h)?;
        let h = tape.gelu(h)?;
        let h = self.fc2.forward(tape, store, h)?;
        Ok((tape.add(x, h)?, captured))
    }
}

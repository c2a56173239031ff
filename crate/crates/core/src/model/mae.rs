use crate::error::{config, contract, Error, Result};
use crate::gradcheck::HasParams;
use crate::model::config::{EntropySource, ModelConfig, Task};
use crate::model::layers::{trunc_normal, Block, HeadTensors, LayerNorm, Linear, INIT_STD};
use crate::model::posembed::sincos_2d;
use crate::param::{ParamId, ParamStore};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

/// Per-head attention probabilities of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCapture<T> {
    pub layer: usize,
    /// `heads × S × S`; row = query token, column = key token.
    pub probs: Tensor<T>,
}

impl<T: Scalar> AttentionCapture<T> {
    fn from_heads(layer: usize, heads: HeadTensors<T>, source: EntropySource) -> Result<Self> {
        let mats = match source {
            EntropySource::Attention => heads.probs,
            EntropySource::Kkt => heads
                .keys
                .iter()
                .map(|k| {
                    let dh = k.dims2()?.1;
                    let s = tensor::matmul_t(k, false, k, true)?.map(|v| v * T::of(1.0 / (dh as f64).sqrt()));
                    tensor::softmax(&s, 1, None)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let s = mats[0].dims2()?.0;
        let mut data = Vec::with_capacity(mats.len() * s * s);
        for m in &mats {
            data.extend_from_slice(m.data());
        }
        Ok(Self {
            layer,
            probs: Tensor::new([mats.len(), s, s], data)?,
        })
    }

    pub fn heads(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn row(&self, head: usize, query: usize) -> &[T] {
        let s = self.seq_len();
        let start = (head * s + query) * s;
        &self.probs.data()[start..start + s]
    }
}

/// Encoder-side inputs: the observed patches and their grid positions.
#[derive(Clone, Debug)]
pub struct Visible<T> {
    patches: Tensor<T>,
    positions: Vec<usize>,
}

impl<T: Scalar> Visible<T> {
    pub fn new(patches: Tensor<T>, positions: Vec<usize>) -> Result<Self> {
        let (t, _) = patches.dims2()?;
        if t != positions.len() {
            return Err(contract(format!("{t} patches but {} positions", positions.len())));
        }
        Ok(Self { patches, positions })
    }

    pub fn empty(patch_dim: usize) -> Self {
        Self {
            patches: Tensor::zeros([0, patch_dim]),
            positions: Vec::new(),
        }
    }

    /// Picks rows of a full `N × P²C` patch table.
    pub fn select(all: &Tensor<T>, positions: &[usize]) -> Result<Self> {
        Self::new(all.gather_rows(positions)?, positions.to_vec())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn patches(&self) -> &Tensor<T> {
        &self.patches
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EncodeOptions {
    /// Pad the patch sequence to this many slots with masked pad tokens.
    pub pad_to: Option<usize>,
    /// Capture attention of this encoder block.
    pub capture_layer: Option<usize>,
}

pub struct Encoded<T> {
    /// `(t + 1) × E`, CLS first; pad rows are stripped.
    pub latents: Var,
    pub capture: Option<AttentionCapture<T>>,
}

pub struct Decoded<T> {
    /// `N × (C′·P²)` predictions in grid order; the CLS output is dropped.
    pub patch_out: Var,
    pub capture: Option<AttentionCapture<T>>,
}

/// Values of one forward pass, detached from any tape.
#[derive(Clone, Debug)]
pub struct Inference<T> {
    pub patch_out: Tensor<T>,
    pub class_logits: Option<Tensor<T>>,
    pub capture: Option<AttentionCapture<T>>,
}

#[derive(Clone, Debug)]
pub enum ClassHead {
    /// One linear layer.
    Linear(Linear),
    /// Linear → GELU → linear.
    Mlp { hidden: Linear, out: Linear },
}

/// Masked autoencoder: ViT encoder over visible patches, transformer
/// decoder over the full token grid with mask tokens, task heads.
#[derive(Clone, Debug)]
pub struct MaeModel<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    patch_embed: Linear,
    cls_token: ParamId,
    enc_pos: Tensor<T>,
    encoder: Vec<Block>,
    enc_norm: LayerNorm,
    dec_embed: Linear,
    mask_token: ParamId,
    dec_pos: Tensor<T>,
    decoder: Vec<Block>,
    dec_norm: LayerNorm,
    pixel_head: Linear,
    class_head: Option<ClassHead>,
}

/// Prefix shared by every classification-head parameter name.
pub const CLASS_HEAD_PREFIX: &str = "class_head.";

impl<T: Scalar> MaeModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Purpose::Init, 0);
        let mut params = ParamStore::new();
        let c = &config;
        let (rows, cols) = c.grid();

        let patch_embed = Linear::new(&mut params, &mut rng, "encoder.patch_embed", c.patch_dim(), c.enc_dim)?;
        let cls_token = params.add("encoder.cls_token", trunc_normal(&mut rng, &[1, c.enc_dim], INIT_STD))?;
        let encoder = (0..c.enc_layers)
            .map(|l| {
                Block::new(
                    &mut params,
                    &mut rng,
                    &format!("encoder.blocks.{l}"),
                    c.enc_dim,
                    c.enc_heads,
                    c.mlp_ratio,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let enc_norm = LayerNorm::new(&mut params, "encoder.norm", c.enc_dim)?;

        let dec_embed = Linear::new(&mut params, &mut rng, "decoder.embed", c.enc_dim, c.dec_dim)?;
        let mask_token = params.add("decoder.mask_token", trunc_normal(&mut rng, &[1, c.dec_dim], INIT_STD))?;
        let decoder = (0..c.dec_layers)
            .map(|l| {
                Block::new(
                    &mut params,
                    &mut rng,
                    &format!("decoder.blocks.{l}"),
                    c.dec_dim,
                    c.dec_heads,
                    c.mlp_ratio,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let dec_norm = LayerNorm::new(&mut params, "decoder.norm", c.dec_dim)?;
        let pixel_head = Linear::new(&mut params, &mut rng, "decoder.head", c.dec_dim, c.head_dim())?;

        let class_head = match (c.task, c.classifier_hidden) {
            (Task::Classification { num_classes }, None) => Some(ClassHead::Linear(Linear::new(
                &mut params,
                &mut rng,
                "class_head.0",
                c.enc_dim,
                num_classes,
            )?)),
            (Task::Classification { num_classes }, Some(hidden)) => Some(ClassHead::Mlp {
                hidden: Linear::new(&mut params, &mut rng, "class_head.0", c.enc_dim, hidden)?,
                out: Linear::new(&mut params, &mut rng, "class_head.1", hidden, num_classes)?,
            }),
            _ => None,
        };

        let enc_pos = sincos_2d(c.enc_dim, rows, cols);
        let dec_pos = {
            let grid = sincos_2d::<T>(c.dec_dim, rows, cols);
            Tensor::concat_rows(&[&Tensor::zeros([1, c.dec_dim]), &grid])?
        };

        Ok(Self {
            config,
            params,
            patch_embed,
            cls_token,
            enc_pos,
            encoder,
            enc_norm,
            dec_embed,
            mask_token,
            dec_pos,
            decoder,
            dec_norm,
            pixel_head,
            class_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same weights, different attention source (the weights do not depend
    /// on which block is read).
    pub fn with_source(&self, layer: usize, source: EntropySource) -> Result<Self> {
        let mut m = self.clone();
        m.config.attention_source_layer = Some(layer);
        m.config.entropy_source = source;
        m.config.validate()?;
        Ok(m)
    }

    /// Ids of the classification head's parameters.
    pub fn head_param_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix(CLASS_HEAD_PREFIX).collect()
    }

    /// Runs the encoder over the visible patches (CLS prepended).
    pub fn encode<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        visible: &Visible<T>,
        opts: EncodeOptions,
    ) -> Result<Encoded<T>> {
        let c = &self.config;
        let n = c.num_patches();
        let t = visible.len();
        let (_, pd) = visible.patches.dims2()?;
        if pd != c.patch_dim() {
            return Err(Error::Shape {
                op: "encode",
                lhs: visible.patches.shape().to_vec(),
                rhs: vec![t, c.patch_dim()],
            });
        }
        let mut seen = vec![false; n];
        for &p in &visible.positions {
            if p >= n {
                return Err(contract(format!("position {p} outside grid of {n} patches")));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(contract(format!("duplicate visible position {p}")));
            }
        }
        let slots = opts.pad_to.unwrap_or(t);
        if slots < t {
            return Err(contract(format!("cannot pad {t} patches to {slots} slots")));
        }
        let pads = slots - t;

        let x = tape.constant(visible.patches.clone());
        let emb = self.patch_embed.forward(tape, &self.params, x)?;
        let pos = tape.constant(self.enc_pos.gather_rows(&visible.positions)?);
        let emb = tape.add(emb, pos)?;
        let cls = tape.param(&self.params, self.cls_token);
        let mut parts = vec![cls, emb];
        if pads > 0 {
            parts.push(tape.constant(Tensor::zeros([pads, c.enc_dim])));
        }
        let mut x = tape.concat_rows(&parts)?;
        let mask: Option<Vec<bool>> = (pads > 0).then(|| (0..1 + slots).map(|i| i > t).collect());

        let mut capture = None;
        for (l, block) in self.encoder.iter().enumerate() {
            let want = opts.capture_layer == Some(l);
            let (y, cap) = block.forward(tape, &self.params, x, mask.as_deref(), want)?;
            x = y;
            if let Some(cap) = cap {
                capture = Some(AttentionCapture::from_heads(l, cap, EntropySource::Attention)?);
            }
        }
        let x = self.enc_norm.forward(tape, &self.params, x)?;
        let latents = if pads > 0 { tape.slice_rows(x, 0, t + 1)? } else { x };
        Ok(Encoded { latents, capture })
    }

    /// Runs the decoder over the full grid: projected latents at known
    /// positions, the mask token elsewhere. Captures attention at the
    /// configured source layer when `capture` is set.
    pub fn decode<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        latents: Var,
        positions: &[usize],
        capture: bool,
    ) -> Result<Decoded<T>> {
        let c = &self.config;
        let n = c.num_patches();
        let t = positions.len();
        let (rows, _) = tape.value(latents).dims2()?;
        if rows != t + 1 {
            return Err(contract(format!("{rows} latents for {t} known positions")));
        }
        let proj = self.dec_embed.forward(tape, &self.params, latents)?;
        let mask_tok = tape.param(&self.params, self.mask_token);
        let base = tape.concat_rows(&[proj, mask_tok])?;
        let mut index = vec![t + 1; n + 1];
        index[0] = 0;
        for (k, &p) in positions.iter().enumerate() {
            if p >= n {
                return Err(contract(format!("position {p} outside grid of {n} patches")));
            }
            index[p + 1] = k + 1;
        }
        let seq = tape.gather_rows(base, &index)?;
        let pos = tape.constant_ref(&self.dec_pos);
        let mut x = tape.add(seq, pos)?;

        let source = c.source_layer();
        let mut captured = None;
        for (l, block) in self.decoder.iter().enumerate() {
            let (y, cap) = block.forward(tape, &self.params, x, None, capture && l == source)?;
            x = y;
            if let Some(cap) = cap {
                captured = Some(AttentionCapture::from_heads(l, cap, c.entropy_source)?);
            }
        }
        let x = self.dec_norm.forward(tape, &self.params, x)?;
        let out = self.pixel_head.forward(tape, &self.params, x)?;
        let patch_out = tape.slice_rows(out, 1, n)?;
        Ok(Decoded {
            patch_out,
            capture: captured,
        })
    }

    /// Class logits from the encoder's CLS latent.
    pub fn classify_head<'p>(&'p self, tape: &mut Tape<'p, T>, latents: Var) -> Result<Var> {
        let head = self
            .class_head
            .as_ref()
            .ok_or_else(|| config("classification head requested but the task is not classification"))?;
        let cls = tape.slice_rows(latents, 0, 1)?;
        match head {
            ClassHead::Linear(l) => l.forward(tape, &self.params, cls),
            ClassHead::Mlp { hidden, out } => {
                let h = hidden.forward(tape, &self.params, cls)?;
                let h = tape.gelu(h)?;
                out.forward(tape, &self.params, h)
            }
        }
    }

    /// Tape-free forward pass; the decoder always runs so its attention can
    /// be captured.
    pub fn infer(&self, visible: &Visible<T>, capture: bool) -> Result<Inference<T>> {
        let mut tape = Tape::inference();
        let enc = self.encode(&mut tape, visible, EncodeOptions::default())?;
        let class_logits = match self.class_head {
            Some(_) => {
                let l = self.classify_head(&mut tape, enc.latents)?;
                Some(tape.value(l).clone())
            }
            None => None,
        };
        let dec = self.decode(&mut tape, enc.latents, visible.positions(), capture)?;
        Ok(Inference {
            patch_out: tape.value(dec.patch_out).clone(),
            class_logits,
            capture: dec.capture,
        })
    }

    /// Encodes several visible sets as one padded batch: every entry is padded
    /// to the longest with masked pad tokens. Returns the real-token latents.
    pub fn encode_batch(&self, batch: &[Visible<T>], exec: crate::Execution) -> Result<Vec<Tensor<T>>> {
        let longest = batch.iter().map(Visible::len).max().unwrap_or(0);
        exec.map(batch, |_, v| {
            let mut tape = Tape::inference();
            let enc = self.encode(
                &mut tape,
                v,
                EncodeOptions {
                    pad_to: Some(longest),
                    capture_layer: None,
                },
            )?;
            Ok(tape.value(enc.latents).clone())
        })
        .into_iter()
        .collect()
    }
}

impl HasParams for MaeModel<f64> {
    fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::patches::patchify;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn random_image(c: &ModelConfig, seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, Purpose::Test, 0);
        let n = c.channels * c.image_h * c.image_w;
        Tensor::new(
            [c.channels, c.image_h, c.image_w],
            (0..n).map(|_| rng.random()).collect(),
        )
        .unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            image_h: 16,
            image_w: 16,
            patch_size: 4,
            channels: 2,
            enc_layers: 2,
            enc_dim: 16,
            enc_heads: 2,
            dec_layers: 2,
            dec_dim: 8,
            dec_heads: 2,
            mlp_ratio: 2,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn param_count_is_a_function_of_config() {
        let a = MaeModel::<f32>::new(small(), 1).unwrap();
        let b = MaeModel::<f32>::new(small(), 2).unwrap();
        assert_eq!(a.params().num_scalars(), b.params().num_scalars());
        assert_ne!(a.params().checksum(), b.params().checksum());
    }

    #[test]
    fn full_visibility_shapes() {
        let c = small();
        let m = MaeModel::<f64>::new(c.clone(), 0).unwrap();
        let patches = patchify(&random_image(&c, 0), c.patch_size).unwrap();
        let all: Vec<usize> = (0..c.num_patches()).collect();
        let vis = Visible::select(&patches, &all).unwrap();
        let mut tape = Tape::inference();
        let enc = m.encode(&mut tape, &vis, EncodeOptions::default()).unwrap();
        assert_eq!(tape.value(enc.latents).shape(), &[c.num_patches() + 1, c.enc_dim]);
        let dec = m.decode(&mut tape, enc.latents, &all, true).unwrap();
        assert_eq!(tape.value(dec.patch_out).shape(), &[c.num_patches(), c.head_dim()]);
        let cap = dec.capture.unwrap();
        assert_eq!(
            cap.probs.shape(),
            &[c.dec_heads, c.num_patches() + 1, c.num_patches() + 1]
        );
    }

    #[test]
    fn mask_tokens_only_is_valid() {
        let c = small();
        let m = MaeModel::<f32>::new(c.clone(), 0).unwrap();
        let out = m.infer(&Visible::empty(c.patch_dim()), true).unwrap();
        assert_eq!(out.patch_out.shape(), &[c.num_patches(), c.patch_dim()]);
        let cap = out.capture.unwrap();
        for h in 0..cap.heads() {
            for i in 0..cap.seq_len() {
                let s: f32 = cap.row(h, i).iter().sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn duplicate_positions_rejected() {
        let c = small();
        let m = MaeModel::<f64>::new(c.clone(), 0).unwrap();
        let patches = patchify(&random_image(&c, 0), c.patch_size).unwrap();
        let vis = Visible::select(&patches, &[3, 3]).unwrap();
        let mut tape = Tape::inference();
        assert!(matches!(
            m.encode(&mut tape, &vis, EncodeOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn padding_leaves_real_tokens_unchanged() {
        let c = small();
        let m = MaeModel::<f64>::new(c.clone(), 4).unwrap();
        let patches = patchify(&random_image(&c, 1), c.patch_size).unwrap();
        let vis = Visible::select(&patches, &[2, 9]).unwrap();
        let run = |pad_to| {
            let mut tape = Tape::inference();
            let enc = m
                .encode(
                    &mut tape,
                    &vis,
                    EncodeOptions {
                        pad_to,
                        capture_layer: Some(0),
                    },
                )
                .unwrap();
            (tape.value(enc.latents).clone(), enc.capture.unwrap())
        };
        let (plain, _) = run(None);
        let (padded, cap) = run(Some(5));
        assert!(plain.max_abs_diff(&padded).unwrap() < 1e-5);
        // pad keys are columns 3..6 of a 6-token sequence
        for h in 0..cap.heads() {
            for i in 0..cap.seq_len() {
                assert!(cap.row(h, i)[3..].iter().all(|&p| p == 0.0));
            }
        }
    }

    #[test]
    fn batch_encoding_matches_single() {
        let c = small();
        let m = MaeModel::<f64>::new(c.clone(), 4).unwrap();
        let patches = patchify(&random_image(&c, 2), c.patch_size).unwrap();
        let batch = vec![
            Visible::select(&patches, &[1]).unwrap(),
            Visible::select(&patches, &[0, 5, 7, 11]).unwrap(),
        ];
        let out = m.encode_batch(&batch, crate::Execution::Sequential).unwrap();
        for (v, got) in batch.iter().zip(out) {
            let mut tape = Tape::inference();
            let enc = m.encode(&mut tape, v, EncodeOptions::default()).unwrap();
            assert!(tape.value(enc.latents).max_abs_diff(&got).unwrap() < 1e-5);
        }
    }

    #[test]
    fn visible_order_does_not_matter() {
        let c = small();
        let m = MaeModel::<f64>::new(c.clone(), 5).unwrap();
        let patches = patchify(&random_image(&c, 3), c.patch_size).unwrap();
        let a = Visible::select(&patches, &[1, 6, 12]).unwrap();
        let b = Visible::select(&patches, &[12, 1, 6]).unwrap();
        let enc = |v: &Visible<f64>| {
            let mut tape = Tape::inference();
            let e = m.encode(&mut tape, v, EncodeOptions::default()).unwrap();
            tape.value(e.latents).clone()
        };
        let (ea, eb) = (enc(&a), enc(&b));
        // slot k of `b` holds position b[k]; compare by position
        for (kb, &p) in b.positions().iter().enumerate() {
            let ka = a.positions().iter().position(|&q| q == p).unwrap();
            for (x, y) in ea.row(ka + 1).iter().zip(eb.row(kb + 1)) {
                assert!((x - y).abs() < 1e-5);
            }
        }
        for (x, y) in ea.row(0).iter().zip(eb.row(0)) {
            assert!((x - y).abs() < 1e-5);
        }
        // decoder predictions are in grid order and must agree too
        let pa = m.infer(&a, false).unwrap().patch_out;
        let pb = m.infer(&b, false).unwrap().patch_out;
        assert!(pa.max_abs_diff(&pb).unwrap() < 1e-5);
    }

    #[test]
    fn classification_head_variants() {
        let c = ModelConfig {
            task: Task::Classification { num_classes: 3 },
            ..small()
        };
        let m = MaeModel::<f64>::new(c.clone(), 0).unwrap();
        let out = m.infer(&Visible::empty(c.patch_dim()), false).unwrap();
        assert_eq!(out.class_logits.unwrap().shape(), &[1, 3]);
        assert_eq!(m.head_param_ids().len(), 2);
        let c2 = ModelConfig {
            classifier_hidden: Some(8),
            ..c
        };
        let m2 = MaeModel::<f64>::new(c2, 0).unwrap();
        assert_eq!(m2.head_param_ids().len(), 4);
    }

    #[test]
    fn zero_head_weights_give_uniform_softmax() {
        let c = ModelConfig {
            task: Task::Classification { num_classes: 4 },
            ..small()
        };
        let mut m = MaeModel::<f64>::new(c.clone(), 0).unwrap();
        for id in m.head_param_ids() {
            let p = m.params_mut().get_mut(id);
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        let logits = m
            .infer(&Visible::empty(c.patch_dim()), false)
            .unwrap()
            .class_logits
            .unwrap();
        let probs = tensor::softmax(&logits, 1, None).unwrap();
        assert!(probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn classify_head_on_reconstruction_is_config_error() {
        let c = small();
        let m = MaeModel::<f64>::new(c.clone(), 0).unwrap();
        let mut tape = Tape::inference();
        let enc = m
            .encode(&mut tape, &Visible::empty(c.patch_dim()), EncodeOptions::default())
            .unwrap();
        assert!(matches!(m.classify_head(&mut tape, enc.latents), Err(Error::Config(_))));
    }
}

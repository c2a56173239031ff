//! Losses, optimizer, schedule and the training loop.

mod loss;
mod optim;
mod schedule;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentConfig, Sample};
use crate::error::{config, contract, Error, Result};
use crate::eval::{evaluate, mean};
use crate::glimpse::{run_selection, visible_from, ExploreOptions, GlimpseSpec, SelectorKind};
use crate::model::{patchify, EncodeOptions, MaeModel, Task};
use crate::par::Execution;
use crate::param::{GradBuffer, ParamId, ParamStore};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub use loss::{classification_loss, reconstruction_loss, segmentation_loss, LossScope};
pub use optim::AdamW;
pub use schedule::lr_at;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// `None` picks 0 for reconstruction and 1e-4 otherwise.
    pub weight_decay: Option<f64>,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Weight of the decoder loss in train-all classification.
    pub lambda: f64,
    pub seed: u64,
    pub loss_scope: LossScope,
    /// Train only the classification head.
    pub head_only: bool,
    pub ignore_label: Option<u16>,
    /// Record wall-clock time per epoch (makes histories non-reproducible).
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 75,
            warmup_epochs: 10,
            lr_max: 1e-4,
            lr_min: 1e-8,
            weight_decay: None,
            batch_size: 8,
            patience: 10,
            lambda: 1.0,
            seed: 0,
            loss_scope: LossScope::All,
            head_only: false,
            ignore_label: None,
            timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return Err(config(format!(
                "need warmup_epochs ({}) < epochs ({}) and epochs > 0",
                self.warmup_epochs, self.epochs
            )));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
        if !(self.lr_min < self.lr_max) || self.lr_min < 0.0 {
            return Err(config("need 0 <= lr_min < lr_max"));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(config("lambda must be a finite non-negative number"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be positive"));
        }
        Ok(())
    }

    pub fn decay_for(&self, task: Task) -> f64 {
        self.weight_decay.unwrap_or(match task {
            Task::Reconstruction => 0.0,
            _ => 1e-4,
        })
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_at(epoch, self.epochs, self.warmup_epochs, self.lr_max, self.lr_min)
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Task loss of one sample on `tape` given the final glimpse set.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    model: &'p MaeModel<T>,
    sample: &Sample,
    visible: &crate::model::Visible<T>,
    known: &[bool],
    cfg: &TrainConfig,
) -> Result<Var> {
    let mc = model.config();
    let p = mc.patch_size;
    let enc = model.encode(tape, visible, EncodeOptions::default())?;
    let decoder_loss = |tape: &mut Tape<'p, T>| -> Result<Var> {
        let dec = model.decode(tape, enc.latents, visible.positions(), false)?;
        let target = patchify(&sample.image.cast::<T>(), p)?;
        reconstruction_loss(tape, dec.patch_out, &target, cfg.loss_scope, known)
    };
    match mc.task {
        Task::Reconstruction => decoder_loss(tape),
        Task::Classification { .. } => {
            let label = sample
                .label
                .ok_or_else(|| contract(format!("sample {} has no class label", sample.name)))?;
            let logits = model.classify_head(tape, enc.latents)?;
            let dec = if cfg.head_only || cfg.lambda == 0.0 {
                None
            } else {
                Some(decoder_loss(tape)?)
            };
            classification_loss(tape, logits, label, dec, cfg.lambda)
        }
        Task::Segmentation { num_classes } => {
            let mask = sample
                .mask
                .as_ref()
                .ok_or_else(|| contract(format!("sample {} has no segmentation mask", sample.name)))?;
            let dec = model.decode(tape, enc.latents, visible.positions(), false)?;
            segmentation_loss(
                tape,
                dec.patch_out,
                mask,
                num_classes,
                p,
                mc.grid().1,
                mc.image_w,
                cfg.ignore_label,
            )
        }
    }
}

/// Parameters the optimizer updates.
pub fn trainable_ids<T: Scalar>(model: &MaeModel<T>, head_only: bool) -> Result<Vec<ParamId>> {
    if head_only {
        let ids = model.head_param_ids();
        if ids.is_empty() {
            return Err(config("head-only training needs a classification task"));
        }
        Ok(ids)
    } else {
        Ok(model.params().ids().collect())
    }
}

/// Stream index of sample `i` in epoch `epoch`.
fn sample_index(epoch: usize, i: usize) -> u64 {
    ((epoch as u64) << 32) | i as u64
}

/// Trains `model` in place. Every sample runs a full exploration episode
/// (selection detached), then one differentiable pass on the final glimpse
/// set. `on_epoch` sees each record and, on improvement, the new best
/// model. On return the model holds the best weights seen.
#[allow(clippy::too_many_arguments)]
pub fn fit<T: Scalar>(
    model: &mut MaeModel<T>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    augment_cfg: &AugmentConfig,
    spec: &GlimpseSpec,
    selector: SelectorKind,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochRecord, Option<&MaeModel<T>>) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let mc = model.config().clone();
    spec.validate(mc.patch_size, mc.image_h, mc.image_w)?;
    if train.is_empty() || val.is_empty() {
        return Err(config("training needs non-empty train and validation sets"));
    }
    let ids = trainable_ids(model, cfg.head_only)?;
    let mut mask = vec![false; model.params().len()];
    for id in &ids {
        mask[id.index()] = true;
    }
    let mut opt = AdamW::new(model.params(), ids);
    let decay = cfg.decay_for(mc.task);
    let n_params = model.params().len();

    let mut history = Vec::new();
    let initial = model.params().clone();
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let started = cfg.timing.then(Instant::now);
        let lr = cfg.lr(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, epoch as u64));
        }
        let mut losses = Vec::with_capacity(train.len());
        for batch in order.chunks(cfg.batch_size) {
            let m: &MaeModel<T> = model;
            let results = exec.map(batch, |_, &i| -> Result<(f64, GradBuffer<T>)> {
                let idx = sample_index(epoch, i);
                let s = augment(&train[i], augment_cfg, &mut stream(cfg.seed, Purpose::Augment, idx));
                let rng = stream(cfg.seed, Purpose::Selector, idx);
                let (state, canvas) = run_selection(m, &s, spec, selector, rng, false, |_, _, _, _, _| Ok(()))?;
                let visible = visible_from::<T>(&canvas, &state, mc.patch_size)?;
                let mut tape = Tape::new().with_trainable(mask.clone());
                let loss = sample_loss(&mut tape, m, &s, &visible, &state.known, cfg)?;
                let value = tape.value(loss).item()?.as_f64();
                if !value.is_finite() {
                    return Err(Error::Divergence(format!("loss {value} on sample {}", s.name)));
                }
                Ok((value, tape.backward(loss)?.into_param_grads(n_params)?))
            });
            let mut total = GradBuffer::empty(n_params);
            for r in results {
                let (l, g) = match r {
                    Ok(v) => v,
                    Err(e) => {
                        restore_best(model, &best, &initial);
                        return Err(e);
                    }
                };
                losses.push(l);
                total.merge(&g)?;
            }
            total.scale(T::of(1.0 / batch.len() as f64));
            if let Err(e) = opt.step(model.params_mut(), &total, lr, decay) {
                restore_best(model, &best, &initial);
                return Err(e);
            }
        }

        let opts = ExploreOptions {
            ignore_label: cfg.ignore_label,
            ..Default::default()
        };
        let val_seed = cfg.seed ^ 0x5eed_0000_0000_0001;
        let reports = match evaluate(&*model, val, spec, selector, val_seed, exec, &opts) {
            Ok(r) => r,
            Err(e) => {
                restore_best(model, &best, &initial);
                return Err(e);
            }
        };
        let val_loss = mean(&reports.iter().map(|r| r.final_step().loss).collect::<Vec<_>>());
        let val_metric = mean(&reports.iter().map(|r| r.final_step().metric).collect::<Vec<_>>());
        let train_loss = mean(&losses);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            restore_best(model, &best, &initial);
            return Err(Error::Divergence(format!("epoch {epoch}: non-finite loss")));
        }
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_metric,
            wall_ms: started.map(|s| s.elapsed().as_secs_f64() * 1e3),
        };
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        on_epoch(&rec, improved.then_some(&*model))?;
        history.push(rec);
        if since_best > cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    restore_best(model, &best, &initial);
    Ok(FitOutcome {
        history,
        best_epoch,
        stopped_early,
    })
}

/// Puts back the best weights seen, or the starting weights if no epoch
/// completed.
fn restore_best<T: Scalar>(
    model: &mut MaeModel<T>,
    best: &Option<(f64, usize, ParamStore<T>)>,
    initial: &ParamStore<T>,
) {
    let store = best.as_ref().map_or(initial, |b| &b.2);
    *model.params_mut() = store.clone();
}

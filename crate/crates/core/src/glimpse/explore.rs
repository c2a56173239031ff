use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{contract, Result};
use crate::eval::rmse;
use crate::glimpse::entropy::{entropy_map, EntropyMap};
use crate::glimpse::retina::Canvas;
use crate::glimpse::select::{Selector, SelectorKind};
use crate::glimpse::spec::{Anchor, GlimpseSpec};
use crate::model::{patchify, unpatchify, Inference, MaeModel, Task, Visible};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which patches are known and which glimpses were taken so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationState {
    pub rows: usize,
    pub cols: usize,
    pub known: Vec<bool>,
    pub anchors: Vec<Anchor>,
    /// The selector ran out of anchors before the glimpse budget.
    pub exhausted: bool,
}

impl ExplorationState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            known: vec![false; rows * cols],
            anchors: Vec::new(),
            exhausted: false,
        }
    }

    pub fn step(&self) -> usize {
        self.anchors.len()
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    /// Known grid positions in ascending order.
    pub fn known_positions(&self) -> Vec<usize> {
        (0..self.known.len()).filter(|&i| self.known[i]).collect()
    }

    pub fn mark(&mut self, anchor: Anchor, side: usize) -> Result<()> {
        if anchor.row + side > self.rows || anchor.col + side > self.cols {
            return Err(contract(format!("anchor {anchor:?} leaves the grid")));
        }
        for r in anchor.row..anchor.row + side {
            for c in anchor.col..anchor.col + side {
                self.known[r * self.cols + c] = true;
            }
        }
        self.anchors.push(anchor);
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExploreOptions {
    /// Compute entropy maps even for selectors that do not need them.
    pub entropy: bool,
    /// Keep per-pass predictions and input composites (for figures).
    pub predictions: bool,
    /// Record wall-clock time. Off by default so reports are reproducible.
    pub timing: bool,
    /// Segmentation label excluded from loss and accuracy.
    pub ignore_label: Option<u16>,
}

/// Metrics of one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Glimpses observed before this pass.
    pub step: usize,
    pub known_patches: usize,
    /// Task loss: RMSE, cross-entropy, or pixel cross-entropy.
    pub loss: f64,
    /// RMSE, correctness (0/1), or pixel accuracy.
    pub metric: f64,
    /// Glimpse chosen after this pass.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Anchor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropyMap>,
}

/// Everything one exploration episode produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub image: String,
    pub selector: SelectorKind,
    pub regime: String,
    pub pixel_percent: f64,
    pub area_percent: f64,
    pub metric_name: String,
    pub anchors: Vec<Anchor>,
    pub exhausted: bool,
    pub steps: Vec<StepRecord>,
    pub known: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
    /// Per pass: head output as a `C′ × H × W` image.
    #[serde(skip)]
    pub predictions: Vec<Tensor<f32>>,
    /// Per pass: observed pixels, unseen ones gray.
    #[serde(skip)]
    pub inputs: Vec<Tensor<f32>>,
    /// Final predicted class (classification).
    #[serde(skip)]
    pub final_class: Option<usize>,
    /// Final per-pixel labels (segmentation).
    #[serde(skip)]
    pub final_labels: Option<Vec<u16>>,
}

impl EpisodeReport {
    pub fn final_step(&self) -> &StepRecord {
        self.steps.last().expect("an episode has at least one pass")
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Reconstruction => "rmse",
        Task::Classification { .. } => "accuracy",
        Task::Segmentation { .. } => "pixel_accuracy",
    }
}

/// Outcome of one pass against the ground truth.
struct Outcome {
    pub loss: f64,
    pub metric: f64,
    pub class: Option<usize>,
    pub labels: Option<Vec<u16>>,
}

fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[t] - lse
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn score<T: Scalar>(
    model: &MaeModel<T>,
    inf: &Inference<T>,
    sample: &Sample,
    target_patches: Option<&Tensor<T>>,
    ignore: Option<u16>,
) -> Result<Outcome> {
    let cfg = model.config();
    match cfg.task {
        Task::Reconstruction => {
            let t = target_patches.ok_or_else(|| contract("reconstruction scoring without targets"))?;
            let r = rmse(&inf.patch_out, t)?;
            Ok(Outcome {
                loss: r,
                metric: r,
                class: None,
                labels: None,
            })
        }
        Task::Classification { num_classes } => {
            let label = sample
                .label
                .ok_or_else(|| contract(format!("sample {} has no class label", sample.name)))?;
            if label >= num_classes {
                return Err(contract(format!(
                    "label {label} out of range for {num_classes} classes"
                )));
            }
            let logits = inf.class_logits.as_ref().ok_or_else(|| contract("no class logits"))?;
            let row: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
            let pred = argmax(&row);
            Ok(Outcome {
                loss: -log_softmax_at(&row, label),
                metric: (pred == label) as u8 as f64,
                class: Some(pred),
                labels: None,
            })
        }
        Task::Segmentation { num_classes } => {
            let mask = sample
                .mask
                .as_ref()
                .ok_or_else(|| contract(format!("sample {} has no segmentation mask", sample.name)))?;
            let (p, w) = (cfg.patch_size, cfg.image_w);
            let (_, gc) = cfg.grid();
            let out = &inf.patch_out;
            let mut labels = vec![0u16; mask.len()];
            let (mut loss, mut correct, mut counted) = (0.0, 0usize, 0usize);
            let mut row = vec![0.0; num_classes];
            for n in 0..cfg.num_patches() {
                let prow = out.row(n);
                for py in 0..p {
                    for px in 0..p {
                        let base = (py * p + px) * num_classes;
                        for (k, r) in row.iter_mut().enumerate() {
                            *r = prow[base + k].as_f64();
                        }
                        let (y, x) = ((n / gc) * p + py, (n % gc) * p + px);
                        let pred = argmax(&row);
                        labels[y * w + x] = pred as u16;
                        let truth = mask[y * w + x];
                        if Some(truth) == ignore {
                            continue;
                        }
                        if truth as usize >= num_classes {
                            return Err(contract(format!("mask label {truth} out of range")));
                        }
                        loss -= log_softmax_at(&row, truth as usize);
                        correct += (pred == truth as usize) as usize;
                        counted += 1;
                    }
                }
            }
            if counted == 0 {
                return Err(contract("every pixel is ignored"));
            }
            Ok(Outcome {
                loss: loss / counted as f64,
                metric: correct as f64 / counted as f64,
                class: None,
                labels: Some(labels),
            })
        }
    }
}

/// Encoder input for the canvas' known patches.
pub fn visible_from<T: Scalar>(canvas: &Canvas, state: &ExplorationState, patch: usize) -> Result<Visible<T>> {
    let all = patchify(&canvas.pixels().cast::<T>(), patch)?;
    Visible::select(&all, &state.known_positions())
}

/// Runs the selection loop: `spec.num_glimpses` passes, each followed by a
/// selection. `on_pass` sees every pass with the map computed for it.
/// Returns the state and canvas after the last glimpse (no final pass).
pub fn run_selection<T: Scalar>(
    model: &MaeModel<T>,
    sample: &Sample,
    spec: &GlimpseSpec,
    selector: SelectorKind,
    rng: Rng,
    always_entropy: bool,
    mut on_pass: impl FnMut(&Inference<T>, &ExplorationState, &Canvas, Option<&EntropyMap>, Option<Anchor>) -> Result<()>,
) -> Result<(ExplorationState, Canvas)> {
    let cfg = model.config();
    let p = cfg.patch_size;
    spec.validate(p, cfg.image_h, cfg.image_w)?;
    if sample.image.shape() != [cfg.channels, cfg.image_h, cfg.image_w] {
        return Err(contract(format!(
            "sample {} has shape {:?}, model expects {:?}",
            sample.name,
            sample.image.shape(),
            [cfg.channels, cfg.image_h, cfg.image_w]
        )));
    }
    let (rows, cols) = cfg.grid();
    let side = spec.side(p);
    let mut state = ExplorationState::new(rows, cols);
    let mut canvas = Canvas::new(cfg.channels, cfg.image_h, cfg.image_w);
    let mut sel = Selector::new(selector, rows, cols, side, rng);
    let want_entropy = always_entropy || selector.needs_entropy();

    for _ in 0..spec.num_glimpses {
        let visible = visible_from::<T>(&canvas, &state, p)?;
        let inf = model.infer(&visible, want_entropy)?;
        let emap = match &inf.capture {
            Some(cap) if want_entropy => Some(entropy_map(cap, &state.known, rows, cols)?),
            _ => None,
        };
        let anchor = sel.next(emap.as_ref(), &state.known, rows, cols, side)?;
        on_pass(&inf, &state, &canvas, emap.as_ref(), anchor)?;
        match anchor {
            Some(a) => {
                canvas.observe(&sample.image, a, spec, p)?;
                state.mark(a, side)?;
            }
            None => {
                state.exhausted = true;
                break;
            }
        }
    }
    Ok((state, canvas))
}

/// Full episode: the selection loop plus one pass on the final glimpse
/// set. Pass 0 sees mask tokens only.
pub fn explore<T: Scalar>(
    model: &MaeModel<T>,
    sample: &Sample,
    spec: &GlimpseSpec,
    selector: SelectorKind,
    rng: Rng,
    opts: &ExploreOptions,
) -> Result<EpisodeReport> {
    let started = opts.timing.then(Instant::now);
    let cfg = model.config();
    let (p, h, w) = (cfg.patch_size, cfg.image_h, cfg.image_w);
    let target = match cfg.task {
        Task::Reconstruction => Some(patchify(&sample.image.cast::<T>(), p)?),
        _ => None,
    };
    let mut steps = Vec::with_capacity(spec.num_glimpses + 1);
    let mut predictions = Vec::new();
    let mut inputs = Vec::new();
    let mut record = |inf: &Inference<T>,
                      state: &ExplorationState,
                      canvas: &Canvas,
                      emap: Option<&EntropyMap>,
                      anchor: Option<Anchor>|
     -> Result<Outcome> {
        let o = score(model, inf, sample, target.as_ref(), opts.ignore_label)?;
        steps.push(StepRecord {
            step: state.step(),
            known_patches: state.known_count(),
            loss: o.loss,
            metric: o.metric,
            anchor,
            entropy: emap.cloned(),
        });
        if opts.predictions {
            predictions.push(unpatchify(&inf.patch_out, p, h, w)?.cast::<f32>());
            inputs.push(canvas.composite(0.5));
        }
        Ok(o)
    };
    let (state, canvas) = run_selection(
        model,
        sample,
        spec,
        selector,
        rng,
        opts.entropy,
        |inf, st, cv, em, a| record(inf, st, cv, em, a).map(|_| ()),
    )?;
    let visible = visible_from::<T>(&canvas, &state, p)?;
    let inf = model.infer(&visible, false)?;
    let last = record(&inf, &state, &canvas, None, None)?;

    Ok(EpisodeReport {
        image: sample.name.clone(),
        selector,
        regime: spec.regime(),
        pixel_percent: spec.pixel_percent(p, h, w),
        area_percent: spec.area_percent(h, w),
        metric_name: metric_name(cfg.task).to_string(),
        anchors: state.anchors.clone(),
        exhausted: state.exhausted,
        steps,
        known: state.known,
        wall_ms: started.map(|s| s.elapsed().as_secs_f64() * 1e3),
        predictions,
        inputs,
        final_class: last.class,
        final_labels: last.labels,
    })
}

//! Metrics, corpus evaluation, sweeps and ablations.

mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{contract, Result};
use crate::glimpse::{explore, EpisodeReport, ExploreOptions, GlimpseSpec, SelectorKind};
use crate::model::{MaeModel, Task};
use crate::par::Execution;
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;

pub use metrics::{accuracy, compensated_sum, mean, rmse, segmentation_metrics, Confusion, SegmentationScores};

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task: String,
    pub selector: SelectorKind,
    pub regime: String,
    pub metrics: BTreeMap<String, f64>,
    pub pixel_percent: f64,
    pub area_percent: f64,
    pub seed: u64,
}

pub fn task_name(task: Task) -> &'static str {
    match task {
        Task::Reconstruction => "reconstruction",
        Task::Classification { .. } => "classification",
        Task::Segmentation { .. } => "segmentation",
    }
}

/// Selector stream of episode `index` for evaluation seed `seed`.
pub fn episode_rng(seed: u64, index: usize) -> crate::rng::Rng {
    stream(seed, Purpose::Selector, index as u64)
}

/// Runs one episode per sample; results are in sample order.
pub fn evaluate<T: Scalar>(
    model: &MaeModel<T>,
    samples: &[Sample],
    spec: &GlimpseSpec,
    selector: SelectorKind,
    seed: u64,
    exec: Execution,
    opts: &ExploreOptions,
) -> Result<Vec<EpisodeReport>> {
    exec.map(samples, |i, s| {
        explore(model, s, spec, selector, episode_rng(seed, i), opts)
    })
    .into_iter()
    .collect()
}

/// Corpus-level metrics of the final pass of each episode.
pub fn summarize(
    task: Task,
    reports: &[EpisodeReport],
    samples: &[Sample],
    ignore: Option<u16>,
) -> Result<BTreeMap<String, f64>> {
    if reports.is_empty() || reports.len() != samples.len() {
        return Err(contract("summary needs one report per sample"));
    }
    let loss: Vec<f64> = reports.iter().map(|r| r.final_step().loss).collect();
    let mut out = BTreeMap::new();
    out.insert("loss".to_string(), mean(&loss));
    match task {
        Task::Reconstruction => {
            out.insert("rmse".to_string(), mean(&loss));
        }
        Task::Classification { .. } => {
            let preds: Vec<usize> = reports.iter().map(|r| r.final_class.unwrap_or(usize::MAX)).collect();
            let labels: Vec<usize> = samples.iter().map(|s| s.label.unwrap_or(usize::MAX - 1)).collect();
            out.insert("accuracy".to_string(), accuracy(&preds, &labels)?);
        }
        Task::Segmentation { num_classes } => {
            let mut conf = Confusion::new(num_classes);
            for (r, s) in reports.iter().zip(samples) {
                let pred = r
                    .final_labels
                    .as_ref()
                    .ok_or_else(|| contract("report without labels"))?;
                let truth = s.mask.as_ref().ok_or_else(|| contract("sample without mask"))?;
                conf.add(pred, truth, ignore)?;
            }
            let sc = conf.scores()?;
            out.insert("pa".to_string(), sc.pa);
            out.insert("mpa".to_string(), sc.mpa);
            out.insert("iou".to_string(), sc.iou);
        }
    }
    Ok(out)
}

pub fn record<T: Scalar>(
    model: &MaeModel<T>,
    spec: &GlimpseSpec,
    selector: SelectorKind,
    seed: u64,
    metrics: BTreeMap<String, f64>,
) -> MetricsRecord {
    let c = model.config();
    MetricsRecord {
        task: task_name(c.task).to_string(),
        selector,
        regime: spec.regime(),
        metrics,
        pixel_percent: spec.pixel_percent(c.patch_size, c.image_h, c.image_w),
        area_percent: spec.area_percent(c.image_h, c.image_w),
        seed,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub glimpses: usize,
    pub loss: f64,
    pub metric: f64,
}

/// Corpus means after `t` glimpses, read from the per-pass records. An
/// episode that ended early contributes its last pass.
pub fn sweep_from_reports(reports: &[EpisodeReport], t_values: &[usize]) -> Result<Vec<SweepRow>> {
    if reports.is_empty() {
        return Err(contract("sweep over an empty corpus"));
    }
    t_values
        .iter()
        .map(|&t| {
            let pick = |r: &EpisodeReport| r.steps.get(t).unwrap_or_else(|| r.final_step()).clone();
            let steps: Vec<_> = reports.iter().map(pick).collect();
            Ok(SweepRow {
                glimpses: t,
                loss: mean(&steps.iter().map(|s| s.loss).collect::<Vec<_>>()),
                metric: mean(&steps.iter().map(|s| s.metric).collect::<Vec<_>>()),
            })
        })
        .collect()
}

/// Metric-versus-glimpse-count curve from episodes of `max(t_values)` glimpses.
pub fn glimpse_sweep<T: Scalar>(
    model: &MaeModel<T>,
    samples: &[Sample],
    spec: &GlimpseSpec,
    selector: SelectorKind,
    seed: u64,
    exec: Execution,
    t_values: &[usize],
) -> Result<Vec<SweepRow>> {
    let longest = *t_values
        .iter()
        .max()
        .ok_or_else(|| contract("no glimpse counts given"))?;
    let spec = GlimpseSpec {
        num_glimpses: longest,
        ..spec.clone()
    };
    let reports = evaluate(model, samples, &spec, selector, seed, exec, &ExploreOptions::default())?;
    sweep_from_reports(&reports, t_values)
}

/// Observation frequency of every patch, over all glimpses and over first
/// glimpses only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlimpseMaps {
    pub rows: usize,
    pub cols: usize,
    pub all: Vec<f64>,
    pub first: Vec<f64>,
}

pub fn average_glimpse_map(reports: &[EpisodeReport], rows: usize, cols: usize, side: usize) -> Result<GlimpseMaps> {
    if reports.is_empty() {
        return Err(contract("glimpse map of no episodes"));
    }
    let n = reports.len() as f64;
    let mut all = vec![0.0; rows * cols];
    let mut first = vec![0.0; rows * cols];
    for r in reports {
        if r.known.len() != rows * cols {
            return Err(contract("report grid does not match"));
        }
        for (a, &k) in all.iter_mut().zip(&r.known) {
            *a += k as u8 as f64;
        }
        if let Some(a) = r.anchors.first() {
            for y in a.row..(a.row + side).min(rows) {
                for x in a.col..(a.col + side).min(cols) {
                    first[y * cols + x] += 1.0;
                }
            }
        }
    }
    for v in all.iter_mut().chain(first.iter_mut()) {
        *v /= n;
    }
    Ok(GlimpseMaps { rows, cols, all, first })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: usize,
    pub loss: f64,
    pub metric: f64,
}

/// Attention-selector evaluation once per decoder block used as the
/// entropy source.
pub fn layer_sweep<T: Scalar>(
    model: &MaeModel<T>,
    samples: &[Sample],
    spec: &GlimpseSpec,
    seed: u64,
    exec: Execution,
) -> Result<Vec<LayerRow>> {
    let c = model.config();
    (0..c.dec_layers)
        .map(|layer| {
            let m = model.with_source(layer, c.entropy_source)?;
            let reports = evaluate(
                &m,
                samples,
                spec,
                SelectorKind::Attention,
                seed,
                exec,
                &ExploreOptions::default(),
            )?;
            let last: Vec<_> = reports.iter().map(|r| r.final_step()).collect();
            Ok(LayerRow {
                layer,
                loss: mean(&last.iter().map(|s| s.loss).collect::<Vec<_>>()),
                metric: mean(&last.iter().map(|s| s.metric).collect::<Vec<_>>()),
            })
        })
        .collect()
}

/// The same weights, corpus and seed under each selector.
pub fn ablate_selectors<T: Scalar>(
    model: &MaeModel<T>,
    samples: &[Sample],
    spec: &GlimpseSpec,
    seed: u64,
    exec: Execution,
    ignore: Option<u16>,
) -> Result<Vec<MetricsRecord>> {
    SelectorKind::ALL
        .iter()
        .map(|&sel| {
            let opts = ExploreOptions {
                ignore_label: ignore,
                ..Default::default()
            };
            let reports = evaluate(model, samples, spec, sel, seed, exec, &opts)?;
            let m = summarize(model.config().task, &reports, samples, ignore)?;
            Ok(record(model, spec, sel, seed, m))
        })
        .collect()
}

/// Tab-separated table with a header row.
pub fn to_tsv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

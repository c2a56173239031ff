mod config;
mod figures;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ame_core::data::{load_and_resize, split, synthesize, write_corpus, Sample, Source};
use ame_core::eval::{
    ablate_selectors, average_glimpse_map, episode_rng, evaluate, glimpse_sweep, layer_sweep, record, summarize,
    to_tsv, MetricsRecord,
};
use ame_core::glimpse::{explore, ExploreOptions};
use ame_core::model::{checkpoint, MaeModel, Task};
use ame_core::train::fit;
use ame_core::Execution;
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, RunConfig};

/// JSON schema of `metrics.json`.
const METRICS_SCHEMA: &str = include_str!("../schema/metrics.schema.json");

#[derive(Parser)]
#[command(
    name = "ame",
    version,
    about = "Active visual exploration driven by attention-map entropy"
)]
struct Cli {
    /// Worker threads (0 = one per core). `--threads 1` gives bit-exact runs.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.dec_layers=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus to `<out>/corpus`.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes `model.ckpt` and `history.jsonl`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint's encoder and decoder.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Train only the classification head (needs `--init`).
        #[arg(long)]
        head_only: bool,
    },
    /// Run one episode and dump per-pass figures.
    Explore {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Image file to explore instead of a corpus sample.
        #[arg(long, conflicts_with = "index")]
        image: Option<PathBuf>,
        /// Index into the validation split.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Record wall-clock time in the report.
        #[arg(long)]
        timing: bool,
    },
    /// Evaluate a checkpoint; writes `metrics.json` and `metrics.tsv`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
        /// Selector seed; defaults to the run seed.
        #[arg(long)]
        eval_seed: Option<u64>,
        /// Comma-separated glimpse counts.
        #[arg(long, value_delimiter = ',')]
        sweep_glimpses: Vec<usize>,
        /// One attention-selector evaluation per decoder layer.
        #[arg(long)]
        sweep_layers: bool,
        /// Attention, random and checkerboard on shared weights and seeds.
        #[arg(long)]
        ablate_selectors: bool,
        /// Average glimpse occupancy maps.
        #[arg(long)]
        glimpse_map: bool,
    },
    /// Print the JSON schema of `metrics.json`.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 configuration, 3 data, 4 numerical divergence, 1 anything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    use ame_core::Error as E;
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Config(_) => 2,
                E::Ingest { .. } | E::Checkpoint(_) | E::Io(_) => 3,
                E::Divergence(_) | E::NonFinite(_) => 4,
                _ => 1,
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    ame_core::set_threads(cli.threads)?;
    let exec = Execution::Parallel;
    match cli.command {
        Command::Synth { common } => synth(&resolve(&common)?),
        Command::Train {
            common,
            init,
            head_only,
        } => {
            let cfg = resolve_with(&common, |c| c.train.head_only |= head_only)?;
            train(&cfg, init.as_deref(), exec)
        }
        Command::Explore {
            common,
            checkpoint,
            image,
            index,
            timing,
        } => {
            let cfg = resolve(&common)?;
            explore_cmd(&cfg, checkpoint.as_deref(), image.as_deref(), index, timing)
        }
        Command::Eval {
            common,
            checkpoint,
            split,
            eval_seed,
            sweep_glimpses,
            sweep_layers,
            ablate_selectors,
            glimpse_map,
        } => {
            let cfg = resolve(&common)?;
            let flags = EvalFlags {
                split,
                seed: eval_seed.unwrap_or(cfg.seed),
                sweep_glimpses,
                sweep_layers,
                ablate_selectors,
                glimpse_map,
            };
            eval_cmd(&cfg, checkpoint.as_deref(), &flags, exec)
        }
        Command::Schema => {
            print!("{METRICS_SCHEMA}");
            Ok(())
        }
    }
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    resolve_with(common, |_| {})
}

fn resolve_with(common: &Common, adjust: impl FnOnce(&mut RunConfig)) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::resolve(common.config.as_deref(), &common.overrides, common.out.as_deref())?;
    adjust(&mut cfg);
    cfg.echo()?;
    Ok(cfg)
}

fn synth(cfg: &RunConfig) -> anyhow::Result<()> {
    let Source::Synthetic { generator, count } = cfg.corpus.source else {
        return Err(ConfigError("synth needs a synthetic corpus source".into()).into());
    };
    let m = &cfg.model;
    let items = synthesize(generator, count, m.image_h, m.image_w, cfg.corpus.seed);
    let samples: Vec<Sample> = items.into_iter().map(|i| i.sample).collect();
    let dir = cfg.out.join("corpus");
    write_corpus(&dir, &samples)?;
    eprintln!("wrote {count} images to {}", dir.display());
    Ok(())
}

/// The configured corpus split into (train, validation).
fn load_split(cfg: &RunConfig) -> anyhow::Result<(Vec<Sample>, Vec<Sample>)> {
    let m = &cfg.model;
    let samples = cfg.corpus.load(m.image_h, m.image_w, m.channels)?;
    if samples.len() < 2 {
        return Err(ame_core::Error::Config(format!("corpus has {} samples; need at least 2", samples.len())).into());
    }
    let (tr, va) = split(samples.len(), cfg.corpus.split, cfg.corpus.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((pick(&tr), pick(&va)))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(cfg: &RunConfig, init: Option<&Path>, exec: Execution) -> anyhow::Result<()> {
    if cfg.train.head_only && init.is_none() {
        return Err(ConfigError("head-only training needs --init with a trained backbone".into()).into());
    }
    let (train_set, val_set) = load_split(cfg)?;
    let mut model: MaeModel<f32> = match init {
        Some(path) => checkpoint::load_backbone(path, cfg.model.clone(), cfg.seed)?,
        None => MaeModel::new(cfg.model.clone(), cfg.seed)?,
    };
    let ckpt = cfg.out.join("model.ckpt");
    let mut history = BufWriter::new(File::create(cfg.out.join("history.jsonl"))?);
    eprintln!(
        "training on {} images, validating on {} ({} epochs max)",
        train_set.len(),
        val_set.len(),
        cfg.train.epochs
    );
    let outcome = fit(
        &mut model,
        &train_set,
        &val_set,
        &cfg.train,
        &cfg.corpus.augment,
        &cfg.glimpse,
        cfg.selector,
        exec,
        |rec, best| {
            serde_json::to_writer(&mut history, rec)?;
            history.write_all(b"\n")?;
            history.flush()?;
            eprintln!(
                "epoch {:3}  lr {:.3e}  train {:.5}  val {:.5}  metric {:.5}{}",
                rec.epoch,
                rec.lr,
                rec.train_loss,
                rec.val_loss,
                rec.val_metric,
                if best.is_some() { "  *" } else { "" }
            );
            if let Some(m) = best {
                checkpoint::save(m, &ckpt)?;
            }
            Ok(())
        },
    )?;
    write_json(
        &cfg.out.join("train_summary.json"),
        &serde_json::json!({
            "epochs_run": outcome.history.len(),
            "best_epoch": outcome.best_epoch,
            "stopped_early": outcome.stopped_early,
        }),
    )?;
    Ok(())
}

/// Loads weights and applies the configured entropy source.
fn load_model(cfg: &RunConfig, path: Option<&Path>) -> anyhow::Result<MaeModel<f32>> {
    let path = path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.join("model.ckpt"));
    let model: MaeModel<f32> = checkpoint::load(&path, None)?;
    let saved = model.config();
    if !saved.same_backbone(&cfg.model) || saved.task != cfg.model.task {
        return Err(ame_core::Error::Checkpoint(format!(
            "{} was trained with a different model configuration",
            path.display()
        ))
        .into());
    }
    Ok(model.with_source(cfg.model.source_layer(), cfg.model.entropy_source)?)
}

fn explore_cmd(
    cfg: &RunConfig,
    ckpt: Option<&Path>,
    image: Option<&Path>,
    index: usize,
    timing: bool,
) -> anyhow::Result<()> {
    let model = load_model(cfg, ckpt)?;
    let m = model.config().clone();
    let sample = match image {
        Some(path) => {
            if m.task != Task::Reconstruction {
                bail!(ConfigError(
                    "a bare image has no labels; explore it with a reconstruction model".into()
                ));
            }
            Sample {
                name: path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string(),
                image: load_and_resize(path, m.image_h, m.image_w, m.channels)?,
                label: None,
                mask: None,
            }
        }
        None => {
            let (_, val) = load_split(cfg)?;
            let n = val.len();
            val.into_iter()
                .nth(index)
                .ok_or_else(|| ConfigError(format!("index {index} outside validation split of {n}")))?
        }
    };
    let opts = ExploreOptions {
        entropy: true,
        predictions: true,
        timing,
        ignore_label: cfg.train.ignore_label,
    };
    let report = explore(
        &model,
        &sample,
        &cfg.glimpse,
        cfg.selector,
        episode_rng(cfg.seed, 0),
        &opts,
    )?;

    let dir = cfg.out.join("episode");
    std::fs::create_dir_all(&dir)?;
    let side = cfg.glimpse.side(m.patch_size);
    for (k, step) in report.steps.iter().enumerate() {
        let stem = |what: &str| dir.join(format!("step_{k:02}_{what}"));
        let input = &report.inputs[k];
        figures::image(&stem("input"), input)?;
        match m.task {
            Task::Segmentation { .. } => figures::label_image(&stem("prediction"), &report.predictions[k])?,
            _ => figures::image(&stem("prediction"), &report.predictions[k])?,
        }
        if let Some(map) = &step.entropy {
            figures::entropy(&stem("entropy"), map, m.patch_size)?;
        }
        if let Some(a) = step.anchor {
            figures::anchor_overlay(&stem("anchor"), input, a, side, m.patch_size)?;
        }
    }
    figures::image(&dir.join("target"), &sample.image)?;
    write_json(&cfg.out.join("episode.json"), &report)?;
    let last = report.final_step();
    eprintln!(
        "{} glimpses, {} patches known, final {} {:.5}",
        report.anchors.len(),
        last.known_patches,
        report.metric_name,
        last.metric
    );
    Ok(())
}

struct EvalFlags {
    split: Split,
    seed: u64,
    sweep_glimpses: Vec<usize>,
    sweep_layers: bool,
    ablate_selectors: bool,
    glimpse_map: bool,
}

fn metrics_tsv(records: &[MetricsRecord]) -> String {
    let names: Vec<String> = records
        .first()
        .map(|r| r.metrics.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = vec!["task", "selector", "regime", "pixel_percent", "area_percent", "seed"];
    header.extend(names.iter().map(String::as_str));
    to_tsv(
        &header,
        records.iter().map(|r| {
            let mut row = vec![
                r.task.clone(),
                r.selector.name().to_string(),
                r.regime.clone(),
                r.pixel_percent.to_string(),
                r.area_percent.to_string(),
                r.seed.to_string(),
            ];
            row.extend(
                names
                    .iter()
                    .map(|n| r.metrics.get(n).map_or(String::new(), f64::to_string)),
            );
            row
        }),
    )
}

fn eval_cmd(cfg: &RunConfig, ckpt: Option<&Path>, flags: &EvalFlags, exec: Execution) -> anyhow::Result<()> {
    let model = load_model(cfg, ckpt)?;
    let m = model.config().clone();
    let (train_set, val_set) = load_split(cfg)?;
    let samples = match flags.split {
        Split::Train => train_set,
        Split::Val => val_set,
        Split::All => train_set.into_iter().chain(val_set).collect(),
    };
    let checksum = model.params().checksum();
    let ignore = cfg.train.ignore_label;
    let opts = ExploreOptions {
        ignore_label: ignore,
        ..Default::default()
    };
    let spec = &cfg.glimpse;
    let reports = evaluate(&model, &samples, spec, cfg.selector, flags.seed, exec, &opts)?;
    let summary = summarize(m.task, &reports, &samples, ignore)?;
    let records = vec![record(&model, spec, cfg.selector, flags.seed, summary)];
    write_json(&cfg.out.join("metrics.json"), &records)?;
    std::fs::write(cfg.out.join("metrics.tsv"), metrics_tsv(&records))?;
    for (k, v) in &records[0].metrics {
        eprintln!("{} {k} {v:.6}", cfg.selector.name());
    }

    if !flags.sweep_glimpses.is_empty() {
        let rows = glimpse_sweep(
            &model,
            &samples,
            spec,
            cfg.selector,
            flags.seed,
            exec,
            &flags.sweep_glimpses,
        )?;
        write_json(&cfg.out.join("sweep_glimpses.json"), &rows)?;
        let tsv = to_tsv(
            &["glimpses", "loss", "metric"],
            rows.iter()
                .map(|r| vec![r.glimpses.to_string(), r.loss.to_string(), r.metric.to_string()]),
        );
        std::fs::write(cfg.out.join("sweep_glimpses.tsv"), tsv)?;
    }
    if flags.sweep_layers {
        let rows = layer_sweep(&model, &samples, spec, flags.seed, exec)?;
        write_json(&cfg.out.join("sweep_layers.json"), &rows)?;
        let tsv = to_tsv(
            &["layer", "loss", "metric"],
            rows.iter()
                .map(|r| vec![r.layer.to_string(), r.loss.to_string(), r.metric.to_string()]),
        );
        std::fs::write(cfg.out.join("sweep_layers.tsv"), tsv)?;
    }
    if flags.ablate_selectors {
        let rows = ablate_selectors(&model, &samples, spec, flags.seed, exec, ignore)?;
        write_json(&cfg.out.join("ablation.json"), &rows)?;
        std::fs::write(cfg.out.join("ablation.tsv"), metrics_tsv(&rows))?;
        for r in &rows {
            eprintln!("ablation {} {:?}", r.selector.name(), r.metrics);
        }
    }
    if flags.glimpse_map {
        let (rows, cols) = m.grid();
        let maps = average_glimpse_map(&reports, rows, cols, spec.side(m.patch_size))?;
        write_json(&cfg.out.join("glimpse_map.json"), &maps)?;
        figures::grid(&cfg.out.join("glimpse_map_all"), rows, cols, &maps.all, m.patch_size)?;
        figures::grid(
            &cfg.out.join("glimpse_map_first"),
            rows,
            cols,
            &maps.first,
            m.patch_size,
        )?;
    }
    if model.params().checksum() != checksum {
        bail!("evaluation modified the model weights");
    }
    Ok(())
}

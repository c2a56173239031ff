//! Image ingestion, augmentation, synthetic corpora and splitting.
//!
//! A corpus directory holds `images/*.ppm` (or `*.pgm`), an optional
//! `labels.tsv` of `filename<TAB>class id` lines and optional
//! `masks/<stem>.pgm` graymaps whose sample values are class ids.

pub mod pnm;
mod synth;
mod transform;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

pub use synth::{synthesize, Generator, Shape, SynthItem, CIRCLE, MASK_CLASSES, RECTANGLE, SHAPE_CLASSES};
pub use transform::{augment, flip_image, flip_labels, resize_bilinear, resize_nearest, AugmentConfig};

/// One image with optional labels. Pixels are in `[0, 1]`, layout `C × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Tensor<f32>,
    pub label: Option<usize>,
    /// Per-pixel class ids, row-major `H × W`.
    pub mask: Option<Vec<u16>>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Source {
    Dir { path: PathBuf },
    Synthetic { generator: Generator, count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub source: Source,
    /// Fraction of samples used for training.
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl Default for CorpusSpec {
    /// 1000 synthetic shapes images.
    fn default() -> Self {
        Self {
            source: Source::Synthetic {
                generator: Generator::Shapes,
                count: 1000,
            },
            split: default_split(),
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

fn default_split() -> f64 {
    0.9
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(config(format!("split ratio {} outside (0, 1)", self.split)));
        }
        Ok(())
    }

    /// Materializes the corpus at `h × w` with `channels` channels.
    pub fn load(&self, h: usize, w: usize, channels: usize) -> Result<Vec<Sample>> {
        self.validate()?;
        match &self.source {
            Source::Dir { path } => load_corpus(path, h, w, channels),
            Source::Synthetic { generator, count } => {
                if channels != 3 {
                    return Err(config("synthetic corpora are RGB; set channels = 3"));
                }
                Ok(synthesize(*generator, *count, h, w, self.seed)
                    .into_iter()
                    .map(|s| s.sample)
                    .collect())
            }
        }
    }
}

/// Index split into (train, validation). A pure function of `(n, ratio,
/// seed)`; train takes `round(n · ratio)` entries.
pub fn split(n: usize, ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Purpose::Split, 0));
    let cut = ((n as f64 * ratio).round() as usize).min(n);
    let val = idx.split_off(cut);
    (idx, val)
}

fn to_channels(r: &pnm::Raster, channels: usize, path: &Path) -> Result<Tensor<f32>> {
    let (h, w) = (r.height, r.width);
    let scale = 1.0 / r.maxval as f32;
    let at = |c: usize, i: usize| r.samples[i * r.channels + c] as f32 * scale;
    let data: Vec<f32> = match (r.channels, channels) {
        (a, b) if a == b => (0..channels).flat_map(|c| (0..h * w).map(move |i| at(c, i))).collect(),
        (1, 3) => (0..3).flat_map(|_| (0..h * w).map(|i| at(0, i))).collect(),
        (3, 1) => (0..h * w).map(|i| (at(0, i) + at(1, i) + at(2, i)) / 3.0).collect(),
        (a, b) => {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                reason: format!("cannot convert {a} channels to {b}"),
            })
        }
    };
    Tensor::new([channels, h, w], data)
}

fn read_raster(path: &Path) -> Result<pnm::Raster> {
    match path.extension().and_then(|e| e.to_str()) {
        #[cfg(feature = "png")]
        Some("png") => read_png(path),
        _ => pnm::read(path),
    }
}

#[cfg(feature = "png")]
fn read_png(path: &Path) -> Result<pnm::Raster> {
    let img = image::open(path).map_err(|e| Error::Ingest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    Ok(pnm::Raster {
        width: rgb.width() as usize,
        height: rgb.height() as usize,
        channels: 3,
        maxval: 255,
        samples: rgb.into_raw().into_iter().map(u16::from).collect(),
    })
}

/// Reads a bitmap and bilinearly resizes it to `h × w`.
pub fn load_and_resize(path: &Path, h: usize, w: usize, channels: usize) -> Result<Tensor<f32>> {
    let r = read_raster(path)?;
    Ok(resize_bilinear(&to_channels(&r, channels, path)?, h, w))
}

fn is_image(p: &Path) -> bool {
    match p.extension().and_then(|e| e.to_str()) {
        Some("ppm" | "pgm") => true,
        Some("png") => cfg!(feature = "png"),
        _ => false,
    }
}

pub fn load_corpus(dir: &Path, h: usize, w: usize, channels: usize) -> Result<Vec<Sample>> {
    let images = dir.join("images");
    let ingest = |path: &Path, reason: String| Error::Ingest {
        path: path.to_path_buf(),
        reason,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&images)
        .map_err(|e| ingest(&images, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .collect();
    files.sort();

    let labels_path = dir.join("labels.tsv");
    let mut labels = HashMap::new();
    if labels_path.exists() {
        let text = std::fs::read_to_string(&labels_path)?;
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(file), Some(id), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(ingest(&labels_path, format!("line {} is not `file<TAB>id`", n + 1)));
            };
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| ingest(&labels_path, format!("line {}: bad class id {id:?}", n + 1)))?;
            labels.insert(file.to_string(), id);
        }
    }

    let mut out = Vec::with_capacity(files.len());
    for path in files {
        let file = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let r = read_raster(&path)?;
        let (oh, ow) = (r.height, r.width);
        let image = resize_bilinear(&to_channels(&r, channels, &path)?, h, w);
        let mask_path = dir.join("masks").join(format!("{stem}.pgm"));
        let mask = if mask_path.exists() {
            let m = pnm::read(&mask_path)?;
            if m.channels != 1 || (m.height, m.width) != (oh, ow) {
                return Err(ingest(&mask_path, "mask must be a graymap of the image's size".into()));
            }
            Some(resize_nearest(&m.samples, oh, ow, h, w))
        } else {
            None
        };
        out.push(Sample {
            name: stem,
            image,
            label: labels.get(&file).copied(),
            mask,
        });
    }
    Ok(out)
}

/// Quantizes `[0, 1]` pixels to 8 bits, interleaved.
pub fn to_u8_interleaved(image: &Tensor<f32>) -> Vec<u8> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let d = image.data();
    let mut out = Vec::with_capacity(c * h * w);
    for i in 0..h * w {
        for ch in 0..c {
            out.push((d[ch * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Writes samples in the corpus directory layout.
pub fn write_corpus(dir: &Path, samples: &[Sample]) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images)?;
    let mut labels = String::new();
    for s in samples {
        let (c, h, w) = (s.image.shape()[0], s.height(), s.width());
        let ext = if c == 1 { "pgm" } else { "ppm" };
        let file = format!("{}.{ext}", s.name);
        pnm::write(&images.join(&file), w, h, c, &to_u8_interleaved(&s.image))?;
        if let Some(l) = s.label {
            labels.push_str(&format!("{file}\t{l}\n"));
        }
        if let Some(m) = &s.mask {
            let masks = dir.join("masks");
            std::fs::create_dir_all(&masks)?;
            let bytes: Vec<u8> = m
                .iter()
                .map(|&v| u8::try_from(v).map_err(|_| config("mask class id above 255")))
                .collect::<Result<_>>()?;
            pnm::write(&masks.join(format!("{}.pgm", s.name)), w, h, 1, &bytes)?;
        }
    }
    if !labels.is_empty() {
        std::fs::write(dir.join("labels.tsv"), labels)?;
    }
    Ok(())
}

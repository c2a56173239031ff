//! Resizing and augmentation of `C × H × W` images and label grids.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Bilinear sample at continuous source coordinates (pixel centers at
/// integer positions), clamping at the borders.
fn bilinear(src: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |yy: usize, xx: usize| src[yy * w + xx] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Resamples every channel through `map(out_y, out_x) -> (src_y, src_x)`.
fn resample(image: &Tensor<f32>, oh: usize, ow: usize, map: impl Fn(usize, usize) -> (f64, f64)) -> Tensor<f32> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = map(y, x);
                out.push(bilinear(plane, h, w, sy, sx).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new([c, oh, ow], out).expect("sized by construction")
}

/// Half-pixel-centered bilinear resize. Same size is a bit-exact copy.
pub fn resize_bilinear(image: &Tensor<f32>, oh: usize, ow: usize) -> Tensor<f32> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    if (h, w) == (oh, ow) {
        return image.clone();
    }
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    resample(image, oh, ow, |y, x| {
        ((y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5)
    })
}

/// Nearest-neighbour resize of a label grid.
pub fn resize_nearest(labels: &[u16], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u16> {
    if (h, w) == (oh, ow) {
        return labels.to_vec();
    }
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = (((y as f64 + 0.5) * h as f64 / oh as f64) as usize).min(h - 1);
        for x in 0..ow {
            let sx = (((x as f64 + 0.5) * w as f64 / ow as f64) as usize).min(w - 1);
            out.push(labels[sy * w + sx]);
        }
    }
    out
}

pub fn flip_image(image: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for row in 0..c * h {
        out.extend(src[row * w..(row + 1) * w].iter().rev());
    }
    Tensor::new([c, h, w], out).expect("same shape")
}

pub fn flip_labels(labels: &[u16], w: usize) -> Vec<u16> {
    labels.chunks(w).flat_map(|r| r.iter().rev().copied()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scale_min: 0.8,
            scale_max: 1.2,
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Random rescale by `s`, a crop window of the original size at a random
/// offset (edges clamp when `s < 1`), then a random horizontal flip.
/// Labels follow the same geometry with nearest-neighbour lookup.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut Rng) -> Sample {
    if !cfg.enabled {
        return sample.clone();
    }
    let (h, w) = (sample.image.shape()[1], sample.image.shape()[2]);
    let s = if cfg.scale_max > cfg.scale_min {
        rng.random_range(cfg.scale_min..cfg.scale_max)
    } else {
        cfg.scale_min
    };
    let mut offset = |n: usize| {
        let slack = n as f64 * s - n as f64;
        let (lo, hi) = (slack.min(0.0), slack.max(0.0));
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let (oy, ox) = (offset(h), offset(w));
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let src = |y: usize, x: usize| ((y as f64 + 0.5 + oy) / s - 0.5, (x as f64 + 0.5 + ox) / s - 0.5);

    let mut image = resample(&sample.image, h, w, src);
    let mut mask = sample.mask.as_ref().map(|m| {
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = src(y, x);
                let yy = sy.round().clamp(0.0, (h - 1) as f64) as usize;
                let xx = sx.round().clamp(0.0, (w - 1) as f64) as usize;
                out.push(m[yy * w + xx]);
            }
        }
        out
    });
    if flip {
        image = flip_image(&image);
        mask = mask.map(|m| flip_labels(&m, w));
    }
    Sample {
        name: sample.name.clone(),
        image,
        label: sample.label,
        mask,
    }
}

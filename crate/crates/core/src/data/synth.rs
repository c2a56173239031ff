//! Seeded synthetic corpora for desk-scale experiments.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{config, Result};
use crate::rng::{stream, Purpose, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Rectangles and circles on textured backgrounds, with class labels and
    /// segmentation masks.
    Shapes,
    /// Smooth colour fields, reconstruction only.
    Gradients,
}

impl std::str::FromStr for Generator {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shapes" => Ok(Self::Shapes),
            "gradients" => Ok(Self::Gradients),
            other => Err(config(format!("unknown generator {other:?}"))),
        }
    }
}

/// Class ids used by the shapes generator. Mask id 0 is background; shape
/// mask ids are `class + 1`.
pub const RECTANGLE: usize = 0;
pub const CIRCLE: usize = 1;
pub const SHAPE_CLASSES: usize = 2;
pub const MASK_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Axis-aligned, center and half extents, in pixels.
    Rect {
        cy: f64,
        cx: f64,
        hh: f64,
        hw: f64,
    },
    Circle {
        cy: f64,
        cx: f64,
        r: f64,
    },
}

impl Shape {
    pub fn class(&self) -> usize {
        match self {
            Shape::Rect { .. } => RECTANGLE,
            Shape::Circle { .. } => CIRCLE,
        }
    }

    /// Whether the pixel center `(y + ½, x + ½)` lies inside the shape.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        match *self {
            Shape::Rect { cy, cx, hh, hw } => (py - cy).abs() <= hh && (px - cx).abs() <= hw,
            Shape::Circle { cy, cx, r } => (py - cy).powi(2) + (px - cx).powi(2) <= r * r,
        }
    }
}

/// A generated sample together with the shapes drawn into it (bottom to top).
#[derive(Clone, Debug)]
pub struct SynthItem {
    pub sample: Sample,
    pub shapes: Vec<Shape>,
}

pub fn synthesize(generator: Generator, n: usize, h: usize, w: usize, seed: u64) -> Vec<SynthItem> {
    (0..n)
        .map(|i| {
            let mut rng = stream(seed, Purpose::Synth, i as u64);
            let name = format!("{i:05}");
            match generator {
                Generator::Shapes => shapes(&mut rng, name, h, w),
                Generator::Gradients => SynthItem {
                    sample: gradients(&mut rng, name, h, w),
                    shapes: Vec::new(),
                },
            }
        })
        .collect()
}

fn color(rng: &mut Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn shapes(rng: &mut Rng, name: String, h: usize, w: usize) -> SynthItem {
    let base = color(rng);
    let tint = color(rng);
    let freq = rng.random_range(0.1..0.5);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (fy, fx) = (freq * angle.sin(), freq * angle.cos());
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    let scale = h.min(w) as f64;
    let count = rng.random_range(1..=4);
    let shapes: Vec<Shape> = (0..count)
        .map(|_| {
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            if rng.random::<bool>() {
                Shape::Rect {
                    cy,
                    cx,
                    hh: rng.random_range(0.08..0.25) * scale,
                    hw: rng.random_range(0.08..0.25) * scale,
                }
            } else {
                Shape::Circle {
                    cy,
                    cx,
                    r: rng.random_range(0.08..0.25) * scale,
                }
            }
        })
        .collect();
    let colors: Vec<[f64; 3]> = shapes.iter().map(|_| color(rng)).collect();

    let mut mask = vec![0u16; h * w];
    let mut owner = vec![usize::MAX; h * w];
    for (k, s) in shapes.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                if s.contains(y, x) {
                    mask[y * w + x] = s.class() as u16 + 1;
                    owner[y * w + x] = k;
                }
            }
        }
    }
    let mut data = vec![0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = match owner[i] {
                usize::MAX => {
                    let wave = 0.5 + 0.5 * (fy * y as f64 + fx * x as f64 + phase).sin();
                    let grain = rng.random_range(-0.03..0.03);
                    std::array::from_fn::<f64, 3, _>(|c| 0.7 * base[c] + 0.2 * wave * tint[c] + grain)
                }
                k => colors[k],
            };
            for c in 0..3 {
                data[(c * h + y) * w + x] = px[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    let mut area = [0usize; SHAPE_CLASSES];
    for &m in &mask {
        if m > 0 {
            area[m as usize - 1] += 1;
        }
    }
    let label = if area[CIRCLE] > area[RECTANGLE] {
        CIRCLE
    } else {
        RECTANGLE
    };
    SynthItem {
        sample: Sample {
            name,
            image: Tensor::new([3, h, w], data).expect("sized by construction"),
            label: Some(label),
            mask: Some(mask),
        },
        shapes,
    }
}

fn gradients(rng: &mut Rng, name: String, h: usize, w: usize) -> Sample {
    let mut data = Vec::with_capacity(3 * h * w);
    let params: Vec<[f64; 5]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.2..0.8),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(0.0..0.15),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    for [a, b, d, e, phase] in params {
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (y as f64 / h as f64, x as f64 / w as f64);
                let val = a + b * (u - 0.5) + d * (v - 0.5) + e * (std::f64::consts::TAU * (u + v) + phase).sin();
                data.push(val.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Sample {
        name,
        image: Tensor::new([3, h, w], data).expect("sized by construction"),
        label: None,
        mask: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_reproducible() {
        assert!(synthesize(Generator::Shapes, 0, 16, 16, 1).is_empty());
        let a = synthesize(Generator::Shapes, 3, 16, 16, 1);
        let b = synthesize(Generator::Shapes, 3, 16, 16, 1);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sample.image, y.sample.image);
            assert_eq!(x.sample.mask, y.sample.mask);
        }
        let g = synthesize(Generator::Gradients, 2, 8, 8, 1);
        assert_eq!(
            g[0].sample.image,
            synthesize(Generator::Gradients, 2, 8, 8, 1)[0].sample.image
        );
    }

    #[test]
    fn masks_follow_analytic_boundaries() {
        for item in synthesize(Generator::Shapes, 20, 32, 24, 7) {
            let mask = item.sample.mask.as_ref().unwrap();
            for y in 0..32 {
                for x in 0..24 {
                    let top = item.shapes.iter().rev().find(|s| s.contains(y, x));
                    let want = top.map_or(0, |s| s.class() as u16 + 1);
                    assert_eq!(mask[y * 24 + x], want);
                    if want > 0 {
                        assert!(top.unwrap().contains(y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn values_in_unit_range() {
        for g in [Generator::Shapes, Generator::Gradients] {
            for item in synthesize(g, 5, 16, 16, 3) {
                assert!(item.sample.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}

//! PPM/PGM renderings of episode passes and glimpse maps.

use std::path::Path;

use ame_core::data::{pnm, to_u8_interleaved};
use ame_core::glimpse::{Anchor, EntropyMap};
use ame_core::Tensor;

fn write_image(path_stem: &Path, image: &Tensor<f32>) -> anyhow::Result<()> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let ext = if c == 1 { "pgm" } else { "ppm" };
    pnm::write(&path_stem.with_extension(ext), w, h, c, &to_u8_interleaved(image))?;
    Ok(())
}

/// Writes an image in `[0, 1]`, `C × H × W`.
pub fn image(path_stem: &Path, image: &Tensor<f32>) -> anyhow::Result<()> {
    write_image(path_stem, image)
}

/// Per-pixel argmax over `C′` class channels, as evenly spaced gray levels.
pub fn label_image(path_stem: &Path, logits: &Tensor<f32>) -> anyhow::Result<()> {
    let (k, h, w) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    let d = logits.data();
    let step = 255 / (k.max(2) - 1);
    let bytes: Vec<u8> = (0..h * w)
        .map(|i| {
            let best = (0..k).fold(0, |b, c| if d[c * h * w + i] > d[b * h * w + i] { c } else { b });
            (best * step) as u8
        })
        .collect();
    pnm::write(&path_stem.with_extension("pgm"), w, h, 1, &bytes)?;
    Ok(())
}

/// Patch-grid values in `[0, 1]` upsampled to pixels. A value of exactly 0
/// stays 0.
pub fn grid(path_stem: &Path, rows: usize, cols: usize, values: &[f64], patch: usize) -> anyhow::Result<()> {
    let (h, w) = (rows * patch, cols * patch);
    let mut bytes = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = values[(y / patch) * cols + x / patch];
            bytes[y * w + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    pnm::write(&path_stem.with_extension("pgm"), w, h, 1, &bytes)?;
    Ok(())
}

/// Entropy map scaled by its maximum. Known patches carry 0 entropy and
/// render as 0.
pub fn entropy(path_stem: &Path, map: &EntropyMap, patch: usize) -> anyhow::Result<()> {
    let max = map.max();
    let scaled: Vec<f64> = map
        .values
        .iter()
        .map(|&v| if max > 0.0 { v / max } else { 0.0 })
        .collect();
    grid(path_stem, map.rows, map.cols, &scaled, patch)
}

/// The input composite as RGB with the chosen glimpse outlined in red.
pub fn anchor_overlay(
    path_stem: &Path,
    input: &Tensor<f32>,
    anchor: Anchor,
    side: usize,
    patch: usize,
) -> anyhow::Result<()> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let src = input.data();
    let mut rgb = vec![0f32; 3 * h * w];
    for ch in 0..3 {
        let from = if c == 1 { 0 } else { ch };
        rgb[ch * h * w..(ch + 1) * h * w].copy_from_slice(&src[from * h * w..(from + 1) * h * w]);
    }
    let (y0, x0) = (anchor.row * patch, anchor.col * patch);
    let (y1, x1) = ((y0 + side * patch).min(h) - 1, (x0 + side * patch).min(w) - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if y == y0 || y == y1 || x == x0 || x == x1 {
                let i = y * w + x;
                rgb[i] = 1.0;
                rgb[h * w + i] = 0.0;
                rgb[2 * h * w + i] = 0.0;
            }
        }
    }
    write_image(path_stem, &Tensor::new([3, h, w], rgb)?)
}

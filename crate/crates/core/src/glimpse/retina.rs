use crate::error::{contract, Result};
use crate::glimpse::spec::{Anchor, GlimpseKind, GlimpseSpec};
use crate::model::patches::chw;
use crate::tensor::Tensor;

/// A composed glimpse block with the level that produced each pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RetinalGlimpse {
    /// `C × g × g`.
    pub pixels: Tensor<f32>,
    /// `g × g`; 1 is full resolution.
    pub levels: Vec<u8>,
    /// Distinct sensor samples per channel.
    pub source_pixels: usize,
}

/// Level `k` covers the central `kP × kP` window, area-averaged to `P × P`
/// and upsampled back by nearest neighbour; finer levels overwrite coarser
/// ones in the center.
pub fn extract_retinal_glimpse(
    image: &Tensor<f32>,
    y0: usize,
    x0: usize,
    levels: usize,
    patch: usize,
) -> Result<RetinalGlimpse> {
    let (c, h, w) = chw(image)?;
    let g = levels * patch;
    if levels == 0 || patch == 0 || y0 + g > h || x0 + g > w {
        return Err(contract(format!(
            "retinal glimpse of {g} px at ({y0}, {x0}) exceeds {h}x{w} image"
        )));
    }
    let src = image.data();
    let mut pixels = vec![0f32; c * g * g];
    let mut level_of = vec![0u8; g * g];
    for k in (1..=levels).rev() {
        let side = k * patch;
        let off = (g - side) / 2;
        for ch in 0..c {
            for cy in 0..patch {
                for cx in 0..patch {
                    let mut acc = 0f64;
                    for dy in 0..k {
                        for dx in 0..k {
                            let y = y0 + off + cy * k + dy;
                            let x = x0 + off + cx * k + dx;
                            acc += src[(ch * h + y) * w + x] as f64;
                        }
                    }
                    let v = (acc / (k * k) as f64) as f32;
                    for dy in 0..k {
                        for dx in 0..k {
                            let (gy, gx) = (off + cy * k + dy, off + cx * k + dx);
                            pixels[(ch * g + gy) * g + gx] = v;
                            level_of[gy * g + gx] = k as u8;
                        }
                    }
                }
            }
        }
    }
    Ok(RetinalGlimpse {
        pixels: Tensor::new([c, g, g], pixels)?,
        levels: level_of,
        source_pixels: levels * patch * patch,
    })
}

/// The agent's accumulated view of an image: observed pixels plus the
/// finest level at which each pixel was seen (0 = never).
#[derive(Clone, Debug)]
pub struct Canvas {
    pixels: Tensor<f32>,
    level: Vec<u8>,
}

impl Canvas {
    pub fn new(channels: usize, h: usize, w: usize) -> Self {
        Self {
            pixels: Tensor::zeros([channels, h, w]),
            level: vec![0; h * w],
        }
    }

    pub fn pixels(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn level(&self) -> &[u8] {
        &self.level
    }

    /// Records a glimpse at `anchor`; a pixel is overwritten only by a finer
    /// (or first) observation.
    pub fn observe(&mut self, image: &Tensor<f32>, anchor: Anchor, spec: &GlimpseSpec, patch: usize) -> Result<()> {
        let (c, h, w) = chw(image)?;
        if self.pixels.shape() != image.shape() {
            return Err(contract("canvas and image shapes differ"));
        }
        let g = spec.glimpse_px;
        let (y0, x0) = (anchor.row * patch, anchor.col * patch);
        if y0 + g > h || x0 + g > w {
            return Err(contract(format!("glimpse at {anchor:?} leaves the image")));
        }
        let (block, levels) = match spec.kind {
            GlimpseKind::Plain => (None, None),
            GlimpseKind::Retinal => {
                let r = extract_retinal_glimpse(image, y0, x0, spec.levels, patch)?;
                (Some(r.pixels), Some(r.levels))
            }
        };
        let src = image.data();
        let dst = self.pixels.data_mut();
        for gy in 0..g {
            for gx in 0..g {
                let (y, x) = (y0 + gy, x0 + gx);
                let lv = levels.as_ref().map_or(1, |l| l[gy * g + gx]);
                let cur = self.level[y * w + x];
                if cur != 0 && cur <= lv {
                    continue;
                }
                self.level[y * w + x] = lv;
                for ch in 0..c {
                    dst[(ch * h + y) * w + x] = match &block {
                        Some(b) => b.data()[(ch * g + gy) * g + gx],
                        None => src[(ch * h + y) * w + x],
                    };
                }
            }
        }
        Ok(())
    }

    /// Observed pixels with unseen ones replaced by `fill`.
    pub fn composite(&self, fill: f32) -> Tensor<f32> {
        let hw = self.level.len();
        let mut out = self.pixels.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if self.level[i % hw] == 0 {
                *v = fill;
            }
        }
        out
    }
}

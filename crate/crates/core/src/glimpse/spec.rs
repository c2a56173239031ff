use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlimpseKind {
    #[default]
    Plain,
    /// Concentric levels at full, half, third, ... resolution.
    Retinal,
}

/// Glimpse geometry and budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlimpseSpec {
    #[serde(default)]
    pub kind: GlimpseKind,
    /// Side length in pixels; a multiple of the patch size.
    pub glimpse_px: usize,
    /// Retinal level count; ignored for plain glimpses.
    #[serde(default = "default_levels")]
    pub levels: usize,
    pub num_glimpses: usize,
}

fn default_levels() -> usize {
    3
}

/// Anchor of a glimpse: top-left patch of its footprint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Anchor {
    pub row: usize,
    pub col: usize,
}

impl GlimpseSpec {
    pub fn plain(glimpse_px: usize, num_glimpses: usize) -> Self {
        Self {
            kind: GlimpseKind::Plain,
            glimpse_px,
            levels: 1,
            num_glimpses,
        }
    }

    pub fn retinal(glimpse_px: usize, levels: usize, num_glimpses: usize) -> Self {
        Self {
            kind: GlimpseKind::Retinal,
            glimpse_px,
            levels,
            num_glimpses,
        }
    }

    pub fn validate(&self, patch: usize, image_h: usize, image_w: usize) -> Result<()> {
        if self.glimpse_px == 0 || patch == 0 || !self.glimpse_px.is_multiple_of(patch) {
            return Err(config(format!(
                "glimpse size {} is not a positive multiple of patch size {patch}",
                self.glimpse_px
            )));
        }
        if self.glimpse_px > image_h || self.glimpse_px > image_w {
            return Err(config(format!(
                "glimpse size {} does not fit a {image_h}x{image_w} image",
                self.glimpse_px
            )));
        }
        if self.kind == GlimpseKind::Retinal && (self.levels == 0 || self.glimpse_px != self.levels * patch) {
            return Err(config(format!(
                "retinal glimpse of {} px needs levels × patch = {} × {patch}",
                self.glimpse_px, self.levels
            )));
        }
        Ok(())
    }

    /// Footprint side in patches.
    pub fn side(&self, patch: usize) -> usize {
        self.glimpse_px / patch
    }

    pub fn footprint(&self, patch: usize) -> usize {
        self.side(patch).pow(2)
    }

    pub fn effective_levels(&self) -> usize {
        match self.kind {
            GlimpseKind::Plain => 1,
            GlimpseKind::Retinal => self.levels,
        }
    }

    /// Distinct sensor samples per glimpse (per channel).
    pub fn source_pixels(&self, patch: usize) -> usize {
        match self.kind {
            GlimpseKind::Plain => self.glimpse_px * self.glimpse_px,
            GlimpseKind::Retinal => self.levels * patch * patch,
        }
    }

    /// Share of image pixels actually sensed by all glimpses, in percent.
    pub fn pixel_percent(&self, patch: usize, image_h: usize, image_w: usize) -> f64 {
        100.0 * (self.num_glimpses * self.source_pixels(patch)) as f64 / (image_h * image_w) as f64
    }

    /// Share of image area covered by all glimpses, in percent.
    pub fn area_percent(&self, image_h: usize, image_w: usize) -> f64 {
        100.0 * (self.num_glimpses * self.glimpse_px * self.glimpse_px) as f64 / (image_h * image_w) as f64
    }

    /// Label such as `8x16^2` or `8x48^2-retinal`.
    pub fn regime(&self) -> String {
        let base = format!("{}x{}^2", self.num_glimpses, self.glimpse_px);
        match self.kind {
            GlimpseKind::Plain => base,
            GlimpseKind::Retinal => format!("{base}-retinal"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regimes_and_validation() {
        let r = GlimpseSpec::retinal(48, 3, 8);
        r.validate(16, 128, 256).unwrap();
        assert_eq!(r.regime(), "8x48^2-retinal");
        assert_eq!(r.source_pixels(16), 768);
        assert!(GlimpseSpec::retinal(48, 2, 8).validate(16, 128, 256).is_err());
        assert!(GlimpseSpec::plain(20, 8).validate(16, 128, 256).is_err());
        assert!(GlimpseSpec::plain(64, 1).validate(16, 32, 256).is_err());
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// What the model is trained to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Reconstruction,
    Classification { num_classes: usize },
    Segmentation { num_classes: usize },
}

/// Which attention matrix feeds the entropy map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySource {
    /// Post-softmax self-attention probabilities, `softmax(Q Kᵀ / √d)`.
    #[default]
    Attention,
    /// `softmax(K Kᵀ / √d)` over the layer's key projections.
    Kkt,
}

/// Hyperparameters of the masked autoencoder. Missing fields take the
/// [`ModelConfig::desk`] values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub enc_layers: usize,
    pub enc_dim: usize,
    pub enc_heads: usize,
    pub dec_layers: usize,
    pub dec_dim: usize,
    pub dec_heads: usize,
    /// Hidden width of the transformer MLPs as a multiple of the model width.
    pub mlp_ratio: usize,
    pub task: Task,
    /// Decoder block whose attention drives glimpse selection; `None` means
    /// the last block.
    pub attention_source_layer: Option<usize>,
    pub entropy_source: EntropySource,
    /// Hidden width of a two-layer (GELU) classification head. `None` gives a
    /// single linear layer.
    pub classifier_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 64×64 RGB, 8-pixel patches, 4×128 encoder and 2×64 decoder.
    pub fn desk() -> Self {
        Self {
            image_h: 64,
            image_w: 64,
            patch_size: 8,
            channels: 3,
            enc_layers: 4,
            enc_dim: 128,
            enc_heads: 4,
            dec_layers: 2,
            dec_dim: 64,
            dec_heads: 4,
            mlp_ratio: 4,
            task: Task::Reconstruction,
            attention_source_layer: None,
            entropy_source: EntropySource::Attention,
            classifier_hidden: None,
        }
    }

    /// A model small enough for exhaustive finite-difference checks:
    /// 8 patches, every width at most 16.
    pub fn miniature() -> Self {
        Self {
            image_h: 8,
            image_w: 16,
            patch_size: 4,
            channels: 1,
            enc_layers: 2,
            enc_dim: 16,
            enc_heads: 2,
            dec_layers: 2,
            dec_dim: 8,
            dec_heads: 2,
            mlp_ratio: 1,
            task: Task::Reconstruction,
            attention_source_layer: None,
            entropy_source: EntropySource::Attention,
            classifier_hidden: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.image_h == 0 || self.image_w == 0 || self.channels == 0 {
            return Err(config("image and patch dimensions must be positive"));
        }
        if !self.image_h.is_multiple_of(p) || !self.image_w.is_multiple_of(p) {
            return Err(config(format!(
                "image {}x{} is not divisible by patch size {p}",
                self.image_h, self.image_w
            )));
        }
        for (name, dim, heads) in [
            ("encoder", self.enc_dim, self.enc_heads),
            ("decoder", self.dec_dim, self.dec_heads),
        ] {
            if heads == 0 || dim % heads != 0 {
                return Err(config(format!("{name} width {dim} not divisible by {heads} heads")));
            }
            if dim % 4 != 0 {
                return Err(config(format!(
                    "{name} width {dim} must be a multiple of 4 for 2-D sin-cos positions"
                )));
            }
        }
        if self.enc_layers == 0 || self.dec_layers == 0 || self.mlp_ratio == 0 {
            return Err(config("layer counts and mlp ratio must be positive"));
        }
        if let Some(l) = self.attention_source_layer {
            if l >= self.dec_layers {
                return Err(config(format!(
                    "attention source layer {l} outside decoder of {} layers",
                    self.dec_layers
                )));
            }
        }
        match self.task {
            Task::Classification { num_classes } | Task::Segmentation { num_classes } if num_classes < 2 => {
                Err(config("at least two classes are required"))
            }
            _ => Ok(()),
        }
    }

    /// Patch grid as (rows, cols).
    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch_size, self.image_w / self.patch_size)
    }

    pub fn num_patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    /// Length of a flattened input patch, `P²·C`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Channels predicted per pixel by the decoder head.
    pub fn head_channels(&self) -> usize {
        match self.task {
            Task::Segmentation { num_classes } => num_classes,
            _ => self.channels,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.head_channels()
    }

    pub fn source_layer(&self) -> usize {
        self.attention_source_layer.unwrap_or(self.dec_layers - 1)
    }

    /// Decoder sequence length: every patch position plus CLS.
    pub fn decoder_seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    /// Configuration fields shared by every task head; two models with the
    /// same backbone can exchange encoder and decoder weights.
    pub fn same_backbone(&self, other: &Self) -> bool {
        self.image_h == other.image_h
            && self.image_w == other.image_w
            && self.patch_size == other.patch_size
            && self.channels == other.channels
            && self.enc_layers == other.enc_layers
            && self.enc_dim == other.enc_dim
            && self.enc_heads == other.enc_heads
            && self.dec_layers == other.dec_layers
            && self.dec_dim == other.dec_dim
            && self.dec_heads == other.dec_heads
            && self.mlp_ratio == other.mlp_ratio
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_geometry() {
        let c = ModelConfig::desk();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 64);
        assert_eq!(c.decoder_seq_len(), 65);
        assert_eq!(c.source_layer(), 1);
        assert_eq!(c.head_dim(), 192);
    }

    #[test]
    fn rejects_indivisible_image() {
        let c = ModelConfig {
            image_h: 60,
            ..ModelConfig::desk()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_bad_heads_and_layer() {
        let c = ModelConfig {
            enc_heads: 3,
            ..ModelConfig::desk()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            attention_source_layer: Some(2),
            ..ModelConfig::desk()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn miniature_is_small() {
        let c = ModelConfig::miniature();
        c.validate().unwrap();
        assert!(c.num_patches() <= 8);
        assert!(c.patch_dim() <= 16 && c.enc_dim <= 16 && c.dec_dim <= 16);
    }
}

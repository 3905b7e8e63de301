//! Serializable model configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width `D` of every clip and word feature.
    pub d_model: usize,
    /// Per-group GCN output width `D_g`.
    pub d_group: usize,
    pub gcn_depth: usize,
    /// Depth of the pose and RGB interaction transformers.
    pub tr_depth: usize,
    pub tr_heads: usize,
    /// Express keypoints relative to the group anchor (wrist or nose).
    pub anchor_norm: bool,
    /// Token vocabulary size; 0 takes it from the dataset manifest.
    pub text_vocab: usize,
    pub text_depth: usize,
    /// Clips per video `T`.
    pub clips: usize,
    /// Maximum words per text `L`.
    pub max_words: usize,
    /// L2-normalize features before every similarity.
    pub normalize: bool,
    pub fusion: FusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_group: 32,
            gcn_depth: 2,
            tr_depth: 2,
            tr_heads: 4,
            anchor_norm: true,
            text_vocab: 0,
            text_depth: 2,
            clips: 16,
            max_words: 32,
            normalize: true,
            fusion: FusionConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model config: {m}")));
        if self.d_model == 0 || self.d_group == 0 {
            return bad("widths must be positive");
        }
        if self.gcn_depth == 0 {
            return bad("gcn_depth must be at least 1");
        }
        if self.tr_heads == 0 || self.d_model % self.tr_heads != 0 {
            return bad("d_model must be divisible by tr_heads");
        }
        if self.clips == 0 || self.max_words == 0 {
            return bad("clips and max_words must be positive");
        }
        if self.text_vocab < 3 {
            return bad("text_vocab must cover <pad>, <unk> and at least one token");
        }
        self.fusion.validate(self.d_model, self.clips)
    }
}

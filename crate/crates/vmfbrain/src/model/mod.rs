//! The three trainable networks and reconstruction pre-training.
//!
//! - feature extractor: a small 2D UNet emitting D-channel raw features
//!   at input resolution (no classification layer),
//! - task head: three 3x3 convolutions over kernel activations followed
//!   by per-position class normalization,
//! - weak classifier: two strided convolutions, global average pooling
//!   and a sigmoid-bounded affine map from soft masks to presence scores.
//!
//! [`pipeline`] threads the unit-sphere feature normalization and kernel
//! activations between the extractor and the heads, with explicit
//! backward passes for every stage.

pub mod heads;
pub mod pipeline;
pub mod recon;
pub mod unet;

pub use heads::{TaskHead, TaskHeadCache, WeakClassifier, WeakClassifierCache};
pub use pipeline::{ForwardPass, ModelBundle};
pub use recon::{harvest_feature_vectors, pretrain_reconstruction, ReconOutcome};
pub use unet::{UNet, UNetCache};

use crate::error::{Result, VmfError};
use serde::{Deserialize, Serialize};

/// Architecture hyperparameters for all three networks.
///
/// Two presets exist: [`ArchConfig::full`] (4-level encoder, D = 64,
/// 128x128 inputs) for real volumes, and [`ArchConfig::reduced`]
/// (2 levels, D = 16, 16x16 inputs) for gradient checks and desk-scale
/// experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Input modality count (4: T1, T1Gd, T2, FLAIR order).
    pub in_channels: usize,
    /// Square input resolution.
    pub input_size: usize,
    /// Encoder channel widths, one per level; each level after the first
    /// halves the spatial size.
    pub encoder_channels: Vec<usize>,
    /// Raw feature channels D produced by the extractor.
    pub feature_dim: usize,
    /// Number of vMF kernels J.
    pub kernel_count: usize,
    /// Shared vMF concentration.
    pub concentration: f64,
    /// Hidden widths of the two inner task-head convolutions.
    pub head_hidden: [usize; 2],
    /// Segmentation classes C (2 whole-tumour, 4 sub-region).
    pub class_count: usize,
    /// Channel widths of the two strided weak-classifier convolutions.
    pub weak_hidden: [usize; 2],
    /// Presence-score width K. Defaults to one per foreground class but
    /// may be coarser (K = 1 whole-tumour presence on the sub-region
    /// task) for supervision-granularity ablations.
    pub weak_target_count: usize,
}

impl ArchConfig {
    /// Full-scale preset: 128x128 inputs, 4-level encoder 32/64/128/256,
    /// D = 64.
    pub fn full(class_count: usize) -> Self {
        Self {
            in_channels: 4,
            input_size: 128,
            encoder_channels: vec![32, 64, 128, 256],
            feature_dim: 64,
            kernel_count: 8,
            concentration: 30.0,
            head_hidden: [32, 16],
            class_count,
            weak_hidden: [16, 32],
            weak_target_count: class_count - 1,
        }
    }

    /// Reduced preset for gradient checks and fast experiments:
    /// 16x16 inputs, 2-level encoder, D = 16.
    pub fn reduced(class_count: usize) -> Self {
        Self {
            in_channels: 4,
            input_size: 16,
            encoder_channels: vec![16, 32],
            feature_dim: 16,
            kernel_count: 8,
            concentration: 30.0,
            head_hidden: [32, 16],
            class_count,
            weak_hidden: [16, 32],
            weak_target_count: class_count - 1,
        }
    }

    pub fn levels(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Presence-score width K.
    pub fn weak_targets(&self) -> usize {
        self.weak_target_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(VmfError::InvalidConfig("in_channels must be > 0".into()));
        }
        if self.encoder_channels.is_empty() {
            return Err(VmfError::InvalidConfig(
                "encoder needs at least one level".into(),
            ));
        }
        if self.feature_dim < 2 {
            return Err(VmfError::InvalidConfig(
                "feature_dim must be at least 2".into(),
            ));
        }
        if self.kernel_count < 2 {
            return Err(VmfError::InvalidConfig(
                "kernel_count must be at least 2".into(),
            ));
        }
        if !(self.concentration > 0.0) {
            return Err(VmfError::InvalidConfig(
                "concentration must be positive".into(),
            ));
        }
        if self.class_count < 2 {
            return Err(VmfError::InvalidConfig(
                "class_count must be at least 2".into(),
            ));
        }
        if self.weak_target_count == 0 || self.weak_target_count > self.class_count - 1 {
            return Err(VmfError::InvalidConfig(format!(
                "weak_target_count {} must lie in 1..={}",
                self.weak_target_count,
                self.class_count - 1
            )));
        }
        // L-level encoder halves L-1 times; the deepest map and the
        // weak classifier (two stride-2 convs) must stay at least 4 px
        let down = 1usize << (self.levels() - 1);
        if self.input_size % down != 0 || self.input_size / down < 4 {
            return Err(VmfError::InvalidConfig(format!(
                "input_size {} incompatible with {} encoder levels",
                self.input_size,
                self.levels()
            )));
        }
        if self.input_size % 4 != 0 || self.input_size / 4 < 4 {
            return Err(VmfError::InvalidConfig(format!(
                "input_size {} too small for the strided weak classifier",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ArchConfig::full(2).validate().unwrap();
        ArchConfig::full(4).validate().unwrap();
        ArchConfig::reduced(2).validate().unwrap();
        ArchConfig::reduced(4).validate().unwrap();
    }

    #[test]
    fn weak_targets_follow_class_count() {
        assert_eq!(ArchConfig::full(2).weak_targets(), 1);
        assert_eq!(ArchConfig::full(4).weak_targets(), 3);
    }

    #[test]
    fn coarse_weak_width_is_allowed_on_sub_region_task() {
        let mut arch = ArchConfig::full(4);
        arch.weak_target_count = 1;
        arch.validate().unwrap();
        arch.weak_target_count = 4; // exceeds foreground class count
        assert!(arch.validate().is_err());
        arch.weak_target_count = 0;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn rejects_indivisible_input_size() {
        let mut arch = ArchConfig::full(2);
        arch.input_size = 100; // not divisible by 8
        assert!(arch.validate().is_err());
    }

    #[test]
    fn rejects_tiny_inputs() {
        let mut arch = ArchConfig::reduced(2);
        arch.input_size = 4;
        assert!(arch.validate().is_err());
    }
}

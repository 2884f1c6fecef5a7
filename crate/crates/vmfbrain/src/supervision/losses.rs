//! Loss terms and the gated joint objective.
//!
//! Total objective per batch:
//!   L = L_clu + lambda_Dice * L_Dice + lambda_weak * L_weak
//! where lambda_Dice is 1 for samples carrying a pixel mask and 0
//! otherwise (all-or-nothing per sample), L_Dice averages over the
//! pixel-labeled samples only, and L_weak (mean L1 between predicted and
//! target presence) averages over every sample.

use super::labels::{SliceSample, TaskMode};
use super::train::TrainingConfig;
use crate::error::{Result, VmfError};
use crate::model::{ForwardPass, ModelBundle};
use ndarray::{Array2, Array4};

pub const DICE_EPS: f64 = 1e-6;

/// Mean absolute difference between predicted and target presence
/// vectors, averaged over every entry of the batch.
pub fn weak_loss(predicted: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if predicted.dim() != target.dim() {
        return Err(VmfError::DimensionMismatch {
            context: "weak_loss".into(),
            expected: format!("{:?}", target.dim()),
            actual: format!("{:?}", predicted.dim()),
        });
    }
    let n = predicted.len() as f64;
    Ok((predicted - target).mapv(f64::abs).sum() / n)
}

/// Gradient of [`weak_loss`] with respect to the predictions
/// (subgradient 0 at exact equality).
pub fn weak_loss_backward(predicted: &Array2<f64>, target: &Array2<f64>) -> Array2<f64> {
    let n = predicted.len() as f64;
    let mut grad = predicted - target;
    grad.mapv_inplace(|v| {
        if v > 0.0 {
            1.0 / n
        } else if v < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    grad
}

fn check_one_hot(target: &Array4<f64>) -> Result<()> {
    let (n, c, h, w) = target.dim();
    for s in 0..n {
        for i in 0..h {
            for j in 0..w {
                let mut sum = 0.0;
                for ch in 0..c {
                    let v = target[[s, ch, i, j]];
                    if v != 0.0 && v != 1.0 {
                        return Err(VmfError::InvalidConfig(format!(
                            "dice target not one-hot at ({s},{ch},{i},{j}): {v}"
                        )));
                    }
                    sum += v;
                }
                if sum != 1.0 {
                    return Err(VmfError::InvalidConfig(format!(
                        "dice target channels sum to {sum} at ({s},{i},{j})"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Soft Dice loss over the foreground channels:
/// 1 - mean over batch and foreground classes of
/// (2*sum(p*q) + eps) / (sum(p) + sum(q) + eps).
///
/// The background channel (index 0) is excluded. Targets must be one-hot.
pub fn dice_loss(predicted: &Array4<f64>, target: &Array4<f64>) -> Result<f64> {
    if predicted.dim() != target.dim() {
        return Err(VmfError::DimensionMismatch {
            context: "dice_loss".into(),
            expected: format!("{:?}", target.dim()),
            actual: format!("{:?}", predicted.dim()),
        });
    }
    check_one_hot(target)?;
    let (n, c, h, w) = predicted.dim();
    let mut acc = 0.0;
    for s in 0..n {
        for ch in 1..c {
            let mut inter = 0.0;
            let mut p_sum = 0.0;
            let mut q_sum = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let p = predicted[[s, ch, i, j]];
                    let q = target[[s, ch, i, j]];
                    inter += p * q;
                    p_sum += p;
                    q_sum += q;
                }
            }
            acc += (2.0 * inter + DICE_EPS) / (p_sum + q_sum + DICE_EPS);
        }
    }
    Ok(1.0 - acc / (n * (c - 1)) as f64)
}

/// Gradient of [`dice_loss`] with respect to the predictions. The
/// background channel receives zero gradient directly (it still couples
/// through the upstream softmax).
pub fn dice_loss_backward(predicted: &Array4<f64>, target: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = predicted.dim();
    let scale = -1.0 / (n * (c - 1)) as f64;
    let mut grad = Array4::zeros((n, c, h, w));
    for s in 0..n {
        for ch in 1..c {
            let mut inter = 0.0;
            let mut p_sum = 0.0;
            let mut q_sum = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let p = predicted[[s, ch, i, j]];
                    let q = target[[s, ch, i, j]];
                    inter += p * q;
                    p_sum += p;
                    q_sum += q;
                }
            }
            let denom = p_sum + q_sum + DICE_EPS;
            let numer = 2.0 * inter + DICE_EPS;
            for i in 0..h {
                for j in 0..w {
                    let q = target[[s, ch, i, j]];
                    grad[[s, ch, i, j]] = scale * (2.0 * q * denom - numer) / (denom * denom);
                }
            }
        }
    }
    grad
}

/// A batch assembled for the training loop.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    /// B x 4 x S x S images.
    pub images: Array4<f64>,
    /// Indices of samples carrying pixel masks.
    pub labeled: Vec<usize>,
    /// B x C x S x S one-hot masks; rows of unlabeled samples are
    /// ignored by the Dice term.
    pub masks: Array4<f64>,
    /// B x K weak-label targets.
    pub weak_targets: Array2<f64>,
}

impl TrainBatch {
    pub fn from_samples(samples: &[&SliceSample], mode: TaskMode) -> Result<Self> {
        if samples.is_empty() {
            return Err(VmfError::EmptyInput("empty training batch".into()));
        }
        let (c_img, h, w) = samples[0].image.dim();
        let classes = mode.class_count();
        // weak width comes from the samples so coarse (whole-tumour)
        // presence labels can drive the sub-region task
        let k = samples[0].weak_label.width();
        let mut images = Array4::zeros((samples.len(), c_img, h, w));
        let mut masks = Array4::zeros((samples.len(), classes, h, w));
        let mut weak_targets = Array2::zeros((samples.len(), k));
        let mut labeled = Vec::new();
        for (b, sample) in samples.iter().enumerate() {
            if sample.image.dim() != (c_img, h, w) {
                return Err(VmfError::DimensionMismatch {
                    context: "batch image shapes".into(),
                    expected: format!("{c_img}x{h}x{w}"),
                    actual: format!("{:?}", sample.image.dim()),
                });
            }
            if sample.weak_label.width() != k {
                return Err(VmfError::DimensionMismatch {
                    context: "batch weak labels".into(),
                    expected: format!("width {k}"),
                    actual: format!("width {}", sample.weak_label.width()),
                });
            }
            images
                .index_axis_mut(ndarray::Axis(0), b)
                .assign(&sample.image);
            if sample.has_pixel_label {
                labeled.push(b);
                masks
                    .index_axis_mut(ndarray::Axis(0), b)
                    .assign(&sample.one_hot_mask(mode));
            }
            for (kk, v) in sample.weak_label.as_f64().into_iter().enumerate() {
                weak_targets[[b, kk]] = v;
            }
        }
        Ok(Self {
            images,
            labeled,
            masks,
            weak_targets,
        })
    }

    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-term values of the joint objective for one batch.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub clustering: f64,
    /// Mean Dice loss over labeled samples; 0 when the batch carries no
    /// pixel masks (the lambda_Dice gate is then 0).
    pub dice: f64,
    pub weak: f64,
    pub labeled_count: usize,
    pub lambda_weak: f64,
}

fn subset_batch(t: &Array4<f64>, indices: &[usize]) -> Array4<f64> {
    let (_, c, h, w) = t.dim();
    let mut out = Array4::zeros((indices.len(), c, h, w));
    for (row, &idx) in indices.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), row)
            .assign(&t.index_axis(ndarray::Axis(0), idx));
    }
    out
}

fn assemble(
    bundle: &ModelBundle,
    pass: &ForwardPass,
    batch: &TrainBatch,
    lambda_weak: f64,
    include_clustering: bool,
) -> Result<LossBreakdown> {
    let clustering = if include_clustering {
        bundle.clustering_loss_of(pass)?
    } else {
        0.0
    };
    let dice = if batch.labeled.is_empty() {
        0.0
    } else {
        let probs_l = subset_batch(&pass.probs, &batch.labeled);
        let masks_l = subset_batch(&batch.masks, &batch.labeled);
        dice_loss(&probs_l, &masks_l)?
    };
    let weak = weak_loss(&pass.presence, &batch.weak_targets)?;
    let gate = if batch.labeled.is_empty() { 0.0 } else { 1.0 };
    Ok(LossBreakdown {
        total: clustering + gate * dice + lambda_weak * weak,
        clustering,
        dice,
        weak,
        labeled_count: batch.labeled.len(),
        lambda_weak,
    })
}

/// Evaluates the joint objective on a batch without touching gradients.
///
/// `include_clustering = false` evaluates only the terms whose gradients
/// reach the feature extractor (the clustering term treats features as
/// constants, so it is excluded when finite-differencing extractor
/// parameters).
pub fn total_loss(
    bundle: &ModelBundle,
    batch: &TrainBatch,
    config: &TrainingConfig,
    include_clustering: bool,
) -> Result<LossBreakdown> {
    let pass = bundle.forward(&batch.images)?;
    assemble(bundle, &pass, batch, config.lambda_weak, include_clustering)
}

/// Forward + loss + full backward: accumulates gradients for every
/// parameter (call `bundle.zero_grad()` first) and returns the
/// breakdown with the forward pass.
pub fn total_loss_and_grads(
    bundle: &mut ModelBundle,
    batch: &TrainBatch,
    config: &TrainingConfig,
) -> Result<(LossBreakdown, ForwardPass)> {
    let pass = bundle.forward(&batch.images)?;
    let breakdown = assemble(bundle, &pass, batch, config.lambda_weak, true)?;

    // Dice gradient on the labeled subset, scattered back to batch rows
    let mut grad_probs = Array4::zeros(pass.probs.raw_dim());
    if !batch.labeled.is_empty() {
        let probs_l = subset_batch(&pass.probs, &batch.labeled);
        let masks_l = subset_batch(&batch.masks, &batch.labeled);
        let grad_l = dice_loss_backward(&probs_l, &masks_l);
        for (row, &idx) in batch.labeled.iter().enumerate() {
            grad_probs
                .index_axis_mut(ndarray::Axis(0), idx)
                .assign(&grad_l.index_axis(ndarray::Axis(0), row));
        }
    }

    let mut grad_presence = weak_loss_backward(&pass.presence, &batch.weak_targets);
    grad_presence *= config.lambda_weak;

    bundle.backward(&pass, &grad_probs, &grad_presence, 1.0)?;
    Ok((breakdown, pass))
}

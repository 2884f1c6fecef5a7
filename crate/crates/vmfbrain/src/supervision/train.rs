//! End-to-end training: reconstruction pre-training, k-means kernel
//! initialization, minibatch Adam on the joint objective, and a
//! fully-supervised baseline trained on Dice alone.

use super::labels::{SliceSample, TaskMode};
use super::losses::{dice_loss, dice_loss_backward, total_loss_and_grads, TrainBatch};
use crate::error::{Result, VmfError};
use crate::model::{pretrain_reconstruction, ArchConfig, ModelBundle, UNet};
use crate::nn::{channel_softmax, channel_softmax_backward, Adam, Conv2d};
use crate::vmf::init_kernels_kmeans;
use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Hyperparameters of one training run.
///
/// `label_fraction` is carried for provenance (subset flagging happens
/// when the dataset is assembled); `weak_mode` sets the granularity of
/// the presence labels, which may be coarser than the segmentation task
/// (whole-tumour presence while segmenting sub-regions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mode: TaskMode,
    pub weak_mode: TaskMode,
    pub arch: ArchConfig,
    pub label_fraction: f64,
    pub lambda_weak: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub kmeans_iters: usize,
    pub kmeans_vectors_per_image: usize,
    pub seed: u64,
}

impl TrainingConfig {
    /// Full-scale defaults: Adam 1e-4, batch 32, 50 epochs, 10
    /// reconstruction epochs, lambda_weak 0.5 (whole-tumour) or 0.1
    /// (sub-region).
    pub fn new(mode: TaskMode) -> Self {
        Self {
            mode,
            weak_mode: mode,
            arch: ArchConfig::full(mode.class_count()),
            label_fraction: 1.0,
            lambda_weak: mode.default_lambda_weak(),
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 50,
            pretrain_epochs: 10,
            pretrain_learning_rate: 1e-3,
            kmeans_iters: 100,
            kmeans_vectors_per_image: 100,
            seed: 0,
        }
    }

    /// Same defaults on the reduced architecture (16x16 inputs).
    pub fn reduced(mode: TaskMode) -> Self {
        Self {
            arch: ArchConfig::reduced(mode.class_count()),
            ..Self::new(mode)
        }
    }

    /// Use coarser presence labels than the segmentation task.
    pub fn with_weak_mode(mut self, weak_mode: TaskMode) -> Self {
        self.weak_mode = weak_mode;
        self.arch.weak_target_count = weak_mode.weak_width();
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.arch.class_count != self.mode.class_count() {
            return Err(VmfError::InvalidConfig(format!(
                "architecture emits {} classes but the task needs {}",
                self.arch.class_count,
                self.mode.class_count()
            )));
        }
        if self.arch.weak_targets() != self.weak_mode.weak_width() {
            return Err(VmfError::InvalidConfig(format!(
                "weak classifier width {} does not match weak-label granularity {}",
                self.arch.weak_targets(),
                self.weak_mode.weak_width()
            )));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(VmfError::InvalidConfig(format!(
                "label_fraction {} outside (0, 1]",
                self.label_fraction
            )));
        }
        if self.lambda_weak < 0.0 {
            return Err(VmfError::InvalidConfig(
                "lambda_weak must be non-negative".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.pretrain_learning_rate > 0.0) {
            return Err(VmfError::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(VmfError::InvalidConfig(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.kmeans_vectors_per_image == 0 {
            return Err(VmfError::InvalidConfig(
                "kmeans_vectors_per_image must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Anything that maps a batch of images to per-position class
/// probabilities; lets the evaluation code treat the compositional model
/// and the plain UNet baseline uniformly.
pub trait SlicePredictor {
    /// B x 4 x S x S images -> B x C x S x S probabilities.
    fn predict_probs(&self, images: &Array4<f64>) -> Result<Array4<f64>>;
    fn class_count(&self) -> usize;
}

impl SlicePredictor for ModelBundle {
    fn predict_probs(&self, images: &Array4<f64>) -> Result<Array4<f64>> {
        Ok(self.forward(images)?.probs)
    }

    fn class_count(&self) -> usize {
        self.arch.class_count
    }
}

/// Per-epoch training log entry (Dice in percent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_clustering: f64,
    pub mean_dice: f64,
    pub mean_weak: f64,
    /// NaN when no validation set was provided.
    pub val_dice: f64,
    /// Per-foreground-class validation Dice; empty without a
    /// validation set.
    #[serde(default)]
    pub val_dice_per_class: Vec<f64>,
}

/// A finished training run: the best-validation model plus its log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    /// Mean squared error per reconstruction pre-training epoch.
    pub pretrain_losses: Vec<f64>,
    pub kmeans_iterations: usize,
}

fn images_of(samples: &[SliceSample]) -> Vec<Array3<f64>> {
    samples.iter().map(|s| s.image.clone()).collect()
}

/// Per-foreground-class Dice (percent) of a predictor over a sample
/// set, accumulated globally per class across all slices (a class
/// missing from both prediction and ground truth scores 100).
pub fn validation_dice_per_class<P: SlicePredictor>(
    predictor: &P,
    samples: &[SliceSample],
    mode: TaskMode,
    batch_size: usize,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(VmfError::EmptyInput("empty validation set".into()));
    }
    let classes = mode.class_count();
    let mut inter = vec![0.0f64; classes];
    let mut pred_count = vec![0.0f64; classes];
    let mut true_count = vec![0.0f64; classes];
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SliceSample> = chunk.iter().collect();
        let batch = TrainBatch::from_samples(&refs, mode)?;
        let probs = predictor.predict_probs(&batch.images)?;
        let (n, c, h, w) = probs.dim();
        if c != classes {
            return Err(VmfError::DimensionMismatch {
                context: "validation probabilities".into(),
                expected: format!("{classes} classes"),
                actual: format!("{c} classes"),
            });
        }
        for (s, sample) in chunk.iter().enumerate().take(n) {
            for i in 0..h {
                for j in 0..w {
                    let mut best = 0usize;
                    let mut best_v = probs[[s, 0, i, j]];
                    for ch in 1..c {
                        let v = probs[[s, ch, i, j]];
                        if v > best_v {
                            best_v = v;
                            best = ch;
                        }
                    }
                    let truth = mode.class_of_label(sample.mask[[i, j]]);
                    pred_count[best] += 1.0;
                    true_count[truth] += 1.0;
                    if best == truth {
                        inter[best] += 1.0;
                    }
                }
            }
        }
    }
    let mut per_class = Vec::with_capacity(classes - 1);
    for ch in 1..classes {
        let denom = pred_count[ch] + true_count[ch];
        per_class.push(if denom == 0.0 {
            100.0
        } else {
            100.0 * 2.0 * inter[ch] / denom
        });
    }
    Ok(per_class)
}

/// Mean foreground Dice (percent): the average of
/// [`validation_dice_per_class`] over the foreground classes.
pub fn validation_dice<P: SlicePredictor>(
    predictor: &P,
    samples: &[SliceSample],
    mode: TaskMode,
    batch_size: usize,
) -> Result<f64> {
    let per_class = validation_dice_per_class(predictor, samples, mode, batch_size)?;
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Trains the compositional model end-to-end:
///
/// 1. reconstruction pre-training of a throwaway extractor,
/// 2. feature harvesting and spherical k-means to initialize kernels,
/// 3. minibatch Adam on the joint objective with kernel renormalization
///    after every step,
/// 4. checkpoint selection by best validation Dice (final epoch when no
///    validation set is given).
pub fn train(
    train_samples: &[SliceSample],
    val_samples: &[SliceSample],
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_samples.is_empty() {
        return Err(VmfError::EmptyInput("empty training set".into()));
    }
    // samples must have been assembled at the configured weak
    // granularity (make_split_samples with config.weak_mode)
    let sample_width = train_samples[0].weak_label.width();
    if sample_width != config.arch.weak_target_count {
        return Err(VmfError::InvalidConfig(format!(
            "samples carry {sample_width}-wide weak labels but the classifier expects {}; \
             assemble samples with the configured weak granularity",
            config.arch.weak_target_count
        )));
    }
    let images = images_of(train_samples);

    let recon = pretrain_reconstruction(
        &images,
        &config.arch,
        config.pretrain_epochs,
        config.pretrain_learning_rate,
        config.batch_size,
        config.seed,
    )?;
    let vectors = crate::model::harvest_feature_vectors(
        &recon.unet,
        &images,
        config.kmeans_vectors_per_image,
        config.seed.wrapping_add(1),
    )?;
    let (bank, km) = init_kernels_kmeans(
        &vectors,
        config.arch.kernel_count,
        config.kmeans_iters,
        config.seed.wrapping_add(2),
        config.arch.concentration,
    )?;

    let mut bundle = ModelBundle::new(&config.arch, config.seed.wrapping_add(3))?;
    bundle.set_bank(&bank)?;

    let mut opt = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(4));
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ModelBundle)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&SliceSample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let batch = TrainBatch::from_samples(&refs, config.mode)?;
            bundle.zero_grad();
            let (breakdown, _) = total_loss_and_grads(&mut bundle, &batch, config)?;
            opt.step(&mut bundle.params_mut());
            bundle.renormalize_kernels()?;
            let weight = chunk.len() as f64;
            sums[0] += breakdown.total * weight;
            sums[1] += breakdown.clustering * weight;
            sums[2] += breakdown.dice * weight;
            sums[3] += breakdown.weak * weight;
        }
        let n = train_samples.len() as f64;
        let (val_dice, val_dice_per_class) = if val_samples.is_empty() {
            (f64::NAN, Vec::new())
        } else {
            let per_class =
                validation_dice_per_class(&bundle, val_samples, config.mode, config.batch_size)?;
            let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
            (mean, per_class)
        };
        log.push(EpochRecord {
            epoch,
            mean_total: sums[0] / n,
            mean_clustering: sums[1] / n,
            mean_dice: sums[2] / n,
            mean_weak: sums[3] / n,
            val_dice,
            val_dice_per_class,
        });
        let improved = match &best {
            None => true,
            Some((_, best_dice, _)) => {
                val_samples.is_empty() || (!val_dice.is_nan() && val_dice > *best_dice)
            }
        };
        if improved {
            best = Some((epoch, val_dice, bundle.clone()));
        }
    }

    let (best_epoch, best_val_dice, bundle) =
        best.expect("at least one epoch ran, so a checkpoint exists");
    Ok(TrainOutcome {
        bundle,
        log,
        best_epoch,
        best_val_dice,
        pretrain_losses: recon.epoch_losses,
        kmeans_iterations: km.iterations,
    })
}

/// Plain UNet baseline: extractor plus a 1x1 projection to class
/// probabilities, trained with Dice loss on pixel-labeled slices only.
#[derive(Debug, Clone)]
pub struct UnetBaseline {
    pub unet: UNet,
    pub head: Conv2d,
    classes: usize,
}

impl UnetBaseline {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unet = UNet::new(arch, &mut rng);
        let head = Conv2d::new(
            "baseline.head",
            arch.feature_dim,
            arch.class_count,
            1,
            1,
            0,
            &mut rng,
        );
        Ok(Self {
            unet,
            head,
            classes: arch.class_count,
        })
    }

    fn forward_cached(&self, images: &Array4<f64>) -> Result<(Array4<f64>, BaselineCache)> {
        let (features, unet_cache) = self.unet.forward(images)?;
        let logits = self.head.forward(&features)?;
        let probs = channel_softmax(&logits);
        Ok((
            probs.clone(),
            BaselineCache {
                unet_cache,
                features,
                probs,
            },
        ))
    }

    fn backward(&mut self, cache: &BaselineCache, grad_probs: &Array4<f64>) -> Result<()> {
        let grad_logits = channel_softmax_backward(&cache.probs, grad_probs);
        let grad_features = self.head.backward(&cache.features, &grad_logits)?;
        self.unet.backward(&cache.unet_cache, &grad_features)?;
        Ok(())
    }

    fn params_mut(&mut self) -> Vec<&mut crate::nn::Param> {
        let mut params = self.unet.params_mut();
        params.extend(self.head.params_mut());
        params
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

struct BaselineCache {
    unet_cache: crate::model::UNetCache,
    features: Array4<f64>,
    probs: Array4<f64>,
}

impl SlicePredictor for UnetBaseline {
    fn predict_probs(&self, images: &Array4<f64>) -> Result<Array4<f64>> {
        Ok(self.forward_cached(images)?.0)
    }

    fn class_count(&self) -> usize {
        self.classes
    }
}

/// Outcome of a baseline run (same log format, clustering and weak
/// terms always zero).
#[derive(Debug)]
pub struct BaselineOutcome {
    pub model: UnetBaseline,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
}

/// Trains [`UnetBaseline`] on the pixel-labeled subset of the samples
/// (weak-only samples are ignored entirely).
pub fn train_unet_baseline(
    train_samples: &[SliceSample],
    val_samples: &[SliceSample],
    config: &TrainingConfig,
) -> Result<BaselineOutcome> {
    config.validate()?;
    let labeled: Vec<&SliceSample> = train_samples.iter().filter(|s| s.has_pixel_label).collect();
    if labeled.is_empty() {
        return Err(VmfError::EmptyInput(
            "baseline training needs at least one pixel-labeled sample".into(),
        ));
    }
    let mut model = UnetBaseline::new(&config.arch, config.seed.wrapping_add(3))?;
    let mut opt = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(4));
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, UnetBaseline)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut dice_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&SliceSample> = chunk.iter().map(|&i| labeled[i]).collect();
            let batch = TrainBatch::from_samples(&refs, config.mode)?;
            let (probs, cache) = model.forward_cached(&batch.images)?;
            let loss = dice_loss(&probs, &batch.masks)?;
            let grad_probs = dice_loss_backward(&probs, &batch.masks);
            model.zero_grad();
            model.backward(&cache, &grad_probs)?;
            opt.step(&mut model.params_mut());
            dice_sum += loss * chunk.len() as f64;
        }
        let mean_dice = dice_sum / labeled.len() as f64;
        let (val_dice, val_dice_per_class) = if val_samples.is_empty() {
            (f64::NAN, Vec::new())
        } else {
            let per_class =
                validation_dice_per_class(&model, val_samples, config.mode, config.batch_size)?;
            let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
            (mean, per_class)
        };
        log.push(EpochRecord {
            epoch,
            mean_total: mean_dice,
            mean_clustering: 0.0,
            mean_dice,
            mean_weak: 0.0,
            val_dice,
            val_dice_per_class,
        });
        let improved = match &best {
            None => true,
            Some((_, best_dice, _)) => {
                val_samples.is_empty() || (!val_dice.is_nan() && val_dice > *best_dice)
            }
        };
        if improved {
            best = Some((epoch, val_dice, model.clone()));
        }
    }
    let (best_epoch, best_val_dice, model) =
        best.expect("at least one epoch ran, so a checkpoint exists");
    Ok(BaselineOutcome {
        model,
        log,
        best_epoch,
        best_val_dice,
    })
}

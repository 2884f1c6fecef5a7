//! Mixed supervision: weak labels from two-point annotations, the gated
//! joint objective, and the end-to-end training loop.
//!
//! Pixel masks exist only on a small labeled fraction of slices; every
//! slice carries a cheap presence vector derived from per-volume
//! two-point annotations. [`losses::total_loss`] combines the clustering
//! term, a per-sample-gated Dice term and an L1 presence term;
//! [`train::train`] runs reconstruction pre-training, k-means kernel
//! initialization and minibatch Adam over that objective.

pub mod labels;
pub mod losses;
pub mod train;

pub use labels::{
    presence_from_two_point, two_point_from_mask, weak_label_for_slice, SliceSample, Structure,
    TaskMode, TwoPointAnnotation, WeakLabel,
};
pub use losses::{
    dice_loss, dice_loss_backward, total_loss, total_loss_and_grads, weak_loss,
    weak_loss_backward, LossBreakdown, TrainBatch, DICE_EPS,
};
pub use train::{
    train, train_unet_baseline, validation_dice, validation_dice_per_class, BaselineOutcome,
    EpochRecord, SlicePredictor,
    TrainOutcome, TrainingConfig, UnetBaseline,
};

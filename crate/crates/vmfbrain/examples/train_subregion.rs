//! Sub-region training and the weak-label granularity trade-off.
//!
//! The sub-region task segments ED/ET/NE (4 classes). Its weak labels
//! can come at two granularities: per-sub-region presence (K=3, from
//! three two-point annotations per volume) or whole-tumour presence
//! only (K=1, a single coarser annotation). This example trains briefly
//! with both and prints the resulting validation Dice, illustrating the
//! configuration mechanics of `weak_mode`.
//!
//! Run with: `cargo run --release --example train_subregion`

use vmfbrain::data::{
    generate_synthetic_dataset, make_split_samples, sample_labeled_subset, Split, SyntheticSpec,
};
use vmfbrain::supervision::{train, TaskMode, TrainingConfig};

fn main() -> vmfbrain::Result<()> {
    let mut spec = SyntheticSpec::desk(23);
    spec.train_volumes = 8;
    spec.val_volumes = 2;
    spec.test_volumes = 0;
    spec.tumour_probability = 1.0;
    let volumes = generate_synthetic_dataset(&spec)?;

    let mode = TaskMode::SubRegion;

    let base = {
        let mut c = TrainingConfig::reduced(mode);
        c.label_fraction = 0.1;
        c.epochs = 5;
        c.batch_size = 16;
        c.learning_rate = 1e-3;
        c.pretrain_epochs = 1;
        c.kmeans_iters = 20;
        c.kmeans_vectors_per_image = 30;
        c.seed = 23;
        c
    };

    for (name, config) in [
        ("sub-region weak labels (K=3)", base.clone()),
        (
            "whole-tumour weak labels (K=1)",
            base.clone().with_weak_mode(TaskMode::WholeTumour),
        ),
    ] {
        // weak labels are assembled at the configured granularity
        let train_all = make_split_samples(&volumes, Split::Train, config.weak_mode)?;
        let val_samples = make_split_samples(&volumes, Split::Val, config.weak_mode)?;
        let samples = sample_labeled_subset(train_all, config.label_fraction, config.seed)?;
        let outcome = train(&samples, &val_samples, &config)?;
        println!(
            "{name}: weak width {} -> best val Dice {:.2} (epoch {})",
            config.arch.weak_target_count, outcome.best_val_dice, outcome.best_epoch
        );
    }
    Ok(())
}

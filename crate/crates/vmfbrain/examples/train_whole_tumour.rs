//! Mixed-supervision training on the whole-tumour task.
//!
//! Demonstrates the full recipe at desk scale: reconstruction
//! pre-training of a throwaway extractor, spherical k-means over its
//! features to initialize the kernel bank, then joint minibatch Adam on
//! clustering + gated Dice + weak losses with kernel renormalization
//! after every step. Only 10% of slices keep their pixel masks; the
//! weak slice-level labels cover everything.
//!
//! Run with: `cargo run --release --example train_whole_tumour`

use vmfbrain::data::{
    generate_synthetic_dataset, make_split_samples, sample_labeled_subset, Split, SyntheticSpec,
};
use vmfbrain::supervision::{train, TaskMode, TrainingConfig};

fn main() -> vmfbrain::Result<()> {
    let mut spec = SyntheticSpec::desk(19);
    spec.train_volumes = 10;
    spec.val_volumes = 2;
    spec.test_volumes = 2;
    let volumes = generate_synthetic_dataset(&spec)?;

    let mode = TaskMode::WholeTumour;
    let train_all = make_split_samples(&volumes, Split::Train, mode)?;
    let val_samples = make_split_samples(&volumes, Split::Val, mode)?;

    let mut config = TrainingConfig::reduced(mode);
    config.label_fraction = 0.1;
    config.epochs = 8;
    config.batch_size = 16;
    config.learning_rate = 1e-3;
    config.pretrain_epochs = 2;
    config.kmeans_iters = 30;
    config.kmeans_vectors_per_image = 40;
    config.seed = 19;

    let train_samples = sample_labeled_subset(train_all, config.label_fraction, config.seed)?;
    let labeled = train_samples.iter().filter(|s| s.has_pixel_label).count();
    println!(
        "training on {} slices, {labeled} with pixel masks (lambda_weak = {})",
        train_samples.len(),
        config.lambda_weak
    );

    let outcome = train(&train_samples, &val_samples, &config)?;

    println!("\nepoch  total    clustering  dice     weak     val-dice");
    for record in &outcome.log {
        println!(
            "{:>5}  {:+.4}  {:+.4}     {:.4}   {:.4}   {:.2}",
            record.epoch,
            record.mean_total,
            record.mean_clustering,
            record.mean_dice,
            record.mean_weak,
            record.val_dice
        );
    }
    println!(
        "\nbest validation Dice {:.2} at epoch {} (k-means took {} iterations)",
        outcome.best_val_dice, outcome.best_epoch, outcome.kmeans_iterations
    );
    Ok(())
}

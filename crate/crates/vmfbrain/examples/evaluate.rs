//! Volume-wise evaluation: per-class Dice (%) and 95th-percentile
//! Hausdorff distance with mean/std aggregation.
//!
//! Trains a quick model, then evaluates it on the held-out test split
//! the same way the `eval` command does: slice-wise inference, argmax
//! binarization per class, both metrics per volume, and a `mean_std`
//! table. Also shows the empty-mask policies on hand-built volumes.
//!
//! Run with: `cargo run --release --example evaluate`

use ndarray::Array3;
use vmfbrain::data::{
    generate_synthetic_dataset, make_split_samples, sample_labeled_subset, Split, SyntheticSpec,
};
use vmfbrain::metrics::{dice_score_volume, evaluate_model, hausdorff95};
use vmfbrain::supervision::{train, TaskMode, TrainingConfig};

fn main() -> vmfbrain::Result<()> {
    // metric policies on hand-built masks
    let empty = Array3::from_elem((2, 8, 8), false);
    let mut point = empty.clone();
    point[[1, 4, 4]] = true;
    println!("both-empty Dice: {}", dice_score_volume(&empty, &empty)?);
    println!("both-empty HD95: {:?}", hausdorff95(&empty, &empty)?);
    println!(
        "one-empty HD95 (undefined, excluded from aggregation): {:?}",
        hausdorff95(&point, &empty)?
    );

    // a quickly trained model on the test split
    let mut spec = SyntheticSpec::desk(29);
    spec.train_volumes = 10;
    spec.val_volumes = 2;
    spec.test_volumes = 4;
    let volumes = generate_synthetic_dataset(&spec)?;

    let mode = TaskMode::WholeTumour;
    let mut config = TrainingConfig::reduced(mode);
    config.label_fraction = 0.25;
    config.epochs = 8;
    config.batch_size = 16;
    config.learning_rate = 1e-3;
    config.pretrain_epochs = 2;
    config.kmeans_iters = 20;
    config.kmeans_vectors_per_image = 40;
    config.seed = 29;

    let train_samples = sample_labeled_subset(
        make_split_samples(&volumes, Split::Train, mode)?,
        config.label_fraction,
        config.seed,
    )?;
    let val_samples = make_split_samples(&volumes, Split::Val, mode)?;
    let outcome = train(&train_samples, &val_samples, &config)?;

    let test: Vec<_> = volumes
        .into_iter()
        .filter(|v| v.split == Split::Test)
        .collect();
    let report = evaluate_model(&outcome.bundle, &test, mode, 8)?;

    println!("\nper-volume metrics (CSV):\n{}", report.to_csv());
    println!("aggregate (mean_std):\n{}", report.table());
    Ok(())
}

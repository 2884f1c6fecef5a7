//! Exports per-kernel activation images for one slice.
//!
//! Writes one grayscale PNG per kernel (min-max scaled per channel,
//! ordered by descending mean activation), the four input modalities,
//! the ground-truth mask, and a JSON manifest recording the channel
//! permutation. On a trained model, one channel's activation mass
//! concentrates inside the tumour; here an untrained model is used so
//! the export stays instant — expect diffuse channels.
//!
//! Run with: `cargo run --example viz_activations`

use vmfbrain::data::{generate_synthetic_dataset, SyntheticSpec};
use vmfbrain::model::{ArchConfig, ModelBundle};
use vmfbrain::viz::{export_slice_visualization, intersection_over_activation};

fn main() -> vmfbrain::Result<()> {
    let mut spec = SyntheticSpec::desk(31);
    spec.train_volumes = 0;
    spec.val_volumes = 0;
    spec.test_volumes = 1;
    spec.tumour_probability = 1.0;
    let volume = generate_synthetic_dataset(&spec)?.remove(0);

    let bundle = ModelBundle::new(&ArchConfig::reduced(2), 31)?;
    let out_dir = std::env::temp_dir().join("vmfbrain_example_viz");
    let slice_index = volume.slice_count() / 2;
    let manifest = export_slice_visualization(&bundle, &volume, slice_index, &out_dir)?;

    println!(
        "exported slice {} of {} to {}",
        manifest.slice_index,
        manifest.volume_id,
        out_dir.display()
    );
    println!("\nchannels by descending mean activation:");
    for entry in &manifest.channels {
        println!(
            "  rank {} = kernel {} (mean {:.4}) -> {}",
            entry.rank, entry.kernel, entry.mean_activation, entry.file
        );
    }
    println!("modalities: {:?}", manifest.modality_files);
    println!("mask: {}", manifest.mask_file);

    // how concentrated is each channel inside the tumour mask?
    let images = ndarray::Array4::from_shape_fn(
        (1, 4, spec.image_size, spec.image_size),
        |(_, c, i, j)| volume.modalities[[c, slice_index, i, j]],
    );
    let pass = bundle.forward(&images)?;
    let mask = ndarray::Array2::from_shape_fn((spec.image_size, spec.image_size), |(i, j)| {
        volume.mask[[slice_index, i, j]] > 0
    });
    println!("\nactivation mass inside the tumour per kernel:");
    for k in 0..bundle.arch.kernel_count {
        let channel = pass.act_samples[0].values.index_axis(ndarray::Axis(2), k);
        println!(
            "  kernel {k}: {:.3}",
            intersection_over_activation(&channel, &mask)
        );
    }
    Ok(())
}

//! Two-point annotations and the weak labels derived from them.
//!
//! A two-point annotation marks only the bottom and top slices
//! containing a structure — two clicks per volume instead of thousands
//! of painted pixels. Slice-level presence bits fall out of the range,
//! and the round trip mask → annotation → presence reproduces the true
//! slice membership exactly on synthetic volumes.
//!
//! Run with: `cargo run --example weak_labels`

use vmfbrain::data::{generate_synthetic_dataset, SyntheticSpec};
use vmfbrain::supervision::{
    presence_from_two_point, two_point_from_mask, weak_label_for_slice, Structure, TaskMode,
};

fn main() -> vmfbrain::Result<()> {
    let mut spec = SyntheticSpec::desk(21);
    spec.tumour_probability = 1.0;
    spec.train_volumes = 1;
    spec.val_volumes = 0;
    spec.test_volumes = 0;
    let volume = generate_synthetic_dataset(&spec)?.remove(0);

    println!("volume {} with {} slices", volume.subject_id, volume.slice_count());

    // re-derive the annotation for each structure from the pixel masks
    for structure in [
        Structure::WholeTumour,
        Structure::Edema,
        Structure::Enhancing,
        Structure::Necrotic,
    ] {
        let annotation = two_point_from_mask(&volume.mask, structure);
        println!("  {structure:?}: {:?}", annotation.range);

        // the derived presence bits agree with the planted mask per slice
        for s in 0..volume.slice_count() {
            let bit = presence_from_two_point(&annotation, s)?;
            let truth = volume
                .mask
                .index_axis(ndarray::Axis(0), s)
                .iter()
                .any(|&v| structure.contains_label(v));
            assert_eq!(bit == 1, truth, "slice {s} of {structure:?}");
        }
    }

    // K-wide weak-label vectors, as consumed by the weak loss
    let middle = volume.slice_count() / 2;
    let whole = weak_label_for_slice(&volume.annotations, TaskMode::WholeTumour, middle)?;
    let sub = weak_label_for_slice(&volume.annotations, TaskMode::SubRegion, middle)?;
    println!("\nslice {middle} weak labels:");
    println!("  whole-tumour (K=1): {:?}", whole.values);
    println!("  sub-region  (K=3): {:?}", sub.values);
    println!("\nround trip mask -> annotation -> presence is exact");
    Ok(())
}

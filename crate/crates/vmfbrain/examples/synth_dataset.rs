//! Generates a small synthetic dataset, persists it, and reloads it.
//!
//! Each volume is a brain-shaped intensity phantom with four MRI-like
//! modalities and (usually) a planted tumour of nested ED/ET/NE
//! regions. The generator also derives the per-structure two-point
//! annotations (bottom/top slice of each structure), which drive the
//! weak labels elsewhere.
//!
//! Run with: `cargo run --example synth_dataset`

use vmfbrain::data::{generate_synthetic_dataset, load_dataset, save_dataset, SyntheticSpec};

fn main() -> vmfbrain::Result<()> {
    let spec = SyntheticSpec::desk(7);
    let volumes = generate_synthetic_dataset(&spec)?;
    println!(
        "generated {} volumes of {} slices at {}x{}",
        volumes.len(),
        spec.slice_count,
        spec.image_size,
        spec.image_size
    );

    let with_tumour = volumes
        .iter()
        .filter(|v| v.annotations[0].range.is_some())
        .count();
    println!("{with_tumour} of {} volumes contain a tumour", volumes.len());

    let sample = &volumes[0];
    println!("\nfirst volume: {} ({:?} split)", sample.subject_id, sample.split);
    for annotation in &sample.annotations {
        match annotation.range {
            Some((bottom, top)) => println!(
                "  {:?}: slices {bottom}..={top}",
                annotation.structure
            ),
            None => println!("  {:?}: absent", annotation.structure),
        }
    }

    let dir = std::env::temp_dir().join("vmfbrain_example_dataset");
    let manifest = save_dataset(&dir, &volumes, &spec)?;
    println!(
        "\nsaved to {} (manifest spec hash {})",
        dir.display(),
        manifest.spec_hash
    );

    let (reloaded, _) = load_dataset(&dir)?;
    assert_eq!(reloaded.len(), volumes.len());
    assert_eq!(reloaded[0].modalities, volumes[0].modalities);
    println!("reload round trip is bit-identical");
    Ok(())
}

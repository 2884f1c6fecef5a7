//! Ingests a BraTS-style subject from NIfTI files.
//!
//! Real BraTS volumes are 240x240x155 with four modalities and a
//! label map coded {0, 1, 2, 4}. Ingestion validates the label codes,
//! remaps them to the internal {0=background, 1=ED, 2=ET, 3=NE},
//! downsamples in-plane to 128x128 (area averaging for images, nearest
//! neighbour for masks so no labels are invented), and z-normalizes
//! intensities over nonzero voxels. Since the licensed dataset cannot
//! ship with the code, this example writes a small synthetic stand-in
//! with the same file structure, then ingests it.
//!
//! Run with: `cargo run --release --example brats_ingest`

use ndarray::Array3;
use vmfbrain::data::nifti::{write_nifti, NiftiDtype};
use vmfbrain::data::{load_brats_volume, BratsPaths, Split};

fn main() -> vmfbrain::Result<()> {
    let dir = std::env::temp_dir().join("vmfbrain_example_brats");
    std::fs::create_dir_all(&dir)?;

    // small stand-in volume: 40x40 in-plane, 8 slices, file-coded labels
    let (nx, ny, nz) = (40usize, 40usize, 8usize);
    let mut mask = Array3::<f64>::zeros((nx, ny, nz));
    for x in 14..26 {
        for y in 14..26 {
            for z in 2..6 {
                // concentric BraTS codes: 2 = ED ring, 4 = ET, 1 = NE core
                let r = ((x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2)).sqrt();
                mask[[x, y, z]] = if r < 2.0 {
                    1.0
                } else if r < 4.0 {
                    4.0
                } else {
                    2.0
                };
            }
        }
    }

    let paths = BratsPaths {
        t1: dir.join("t1.nii.gz"),
        t1gd: dir.join("t1gd.nii.gz"),
        t2: dir.join("t2.nii.gz"),
        flair: dir.join("flair.nii.gz"),
        mask: dir.join("seg.nii.gz"),
    };
    for (i, path) in [&paths.t1, &paths.t1gd, &paths.t2, &paths.flair]
        .into_iter()
        .enumerate()
    {
        let image = Array3::from_shape_fn((nx, ny, nz), |(x, y, z)| {
            let brain = ((x as f64 - 20.0).powi(2) + (y as f64 - 20.0).powi(2)).sqrt() < 16.0;
            if brain {
                100.0 + 10.0 * i as f64 + (x + y + z) as f64
            } else {
                0.0
            }
        });
        write_nifti(path, &image, NiftiDtype::F32)?;
    }
    write_nifti(&paths.mask, &mask, NiftiDtype::U8)?;
    println!("wrote stand-in subject to {}", dir.display());

    let volume = load_brats_volume(&paths, "demo-subject", Split::Test)?;
    let (c, s, h, w) = volume.modalities.dim();
    println!("ingested {}: {c} modalities x {s} slices x {h}x{w}", volume.subject_id);

    // remapped label codes and derived annotations
    let mut counts = [0usize; 4];
    for &v in volume.mask.iter() {
        counts[v as usize] += 1;
    }
    println!(
        "label voxels after remap: background {}, ED {}, ET {}, NE {}",
        counts[0], counts[1], counts[2], counts[3]
    );
    for annotation in &volume.annotations {
        println!("  {:?}: {:?}", annotation.structure, annotation.range);
    }

    // z-normalization: nonzero foreground is standardized
    let t1 = volume.modalities.index_axis(ndarray::Axis(0), 0);
    let nonzero: Vec<f64> = t1.iter().copied().filter(|v| *v != 0.0).collect();
    let mean = nonzero.iter().sum::<f64>() / nonzero.len() as f64;
    println!("t1 nonzero-voxel mean after normalization: {mean:.2e}");
    Ok(())
}

//! Kernel-activation visualization.
//!
//! For one selected slice this module exports the four input
//! modalities, the ground-truth mask, and every activation channel as
//! grayscale PNGs (one file per channel, min-max scaled per channel),
//! plus a JSON manifest recording the channel ordering. Channels are
//! ordered by descending mean activation over the slice so the most
//! active kernel always comes first; the manifest records the
//! permutation back to kernel indices.

use crate::data::VolumeRecord;
use crate::error::{Result, VmfError};
use crate::model::ModelBundle;
use image::GrayImage;
use ndarray::{Array2, Array4, ArrayView2};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Modality file-name stems, in channel order.
pub const MODALITY_NAMES: [&str; 4] = ["t1", "t1gd", "t2", "flair"];

/// Name of the channel-ordering manifest inside the output directory.
pub const CHANNEL_MANIFEST_FILE: &str = "channels.json";

/// Fraction of a channel's activation mass that falls inside a mask.
/// Zero total mass yields 0 (no evidence of overlap).
pub fn intersection_over_activation(channel: &ArrayView2<f64>, mask: &Array2<bool>) -> f64 {
    let mut total = 0.0;
    let mut inside = 0.0;
    for (idx, &v) in channel.indexed_iter() {
        total += v;
        if mask[idx] {
            inside += v;
        }
    }
    if total <= 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// The channel whose activation mass is most concentrated inside the
/// mask, with its score; lowest index wins ties.
pub fn best_channel_overlap(
    activations: &ndarray::ArrayView3<f64>,
    mask: &Array2<bool>,
) -> (usize, f64) {
    let channels = activations.dim().2;
    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..channels {
        let channel = activations.index_axis(ndarray::Axis(2), j);
        let score = intersection_over_activation(&channel, mask);
        if score > best.1 {
            best = (j, score);
        }
    }
    best
}

/// Min-max scales a 2D map into an 8-bit grayscale image; a constant
/// map becomes uniform mid-gray.
pub fn to_gray_image(values: &ArrayView2<f64>) -> GrayImage {
    let (h, w) = values.dim();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    let range = max - min;
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = values[[y as usize, x as usize]];
        let level = if range <= 0.0 {
            128
        } else {
            ((v - min) / range * 255.0).round() as u8
        };
        image::Luma([level])
    })
}

/// One activation channel in the manifest, in output (rank) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    /// Position in the exported ordering (0 = most active).
    pub rank: usize,
    /// Original kernel index of this channel.
    pub kernel: usize,
    pub mean_activation: f64,
    pub file: String,
}

/// Manifest describing every exported file of one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizManifest {
    pub volume_id: String,
    pub slice_index: usize,
    /// Channels by descending mean activation.
    pub channels: Vec<ChannelEntry>,
    pub modality_files: Vec<String>,
    pub mask_file: String,
}

/// Runs the model on one slice and writes all visualization artifacts
/// into `out_dir` (created if needed). Returns the written manifest.
pub fn export_slice_visualization(
    bundle: &ModelBundle,
    volume: &VolumeRecord,
    slice_index: usize,
    out_dir: &Path,
) -> Result<VizManifest> {
    let (_, slices, h, w) = volume.modalities.dim();
    if slice_index >= slices {
        return Err(VmfError::SliceOutOfBounds {
            index: slice_index,
            slices,
        });
    }
    std::fs::create_dir_all(out_dir)?;

    let images = Array4::from_shape_fn((1, 4, h, w), |(_, c, i, j)| {
        volume.modalities[[c, slice_index, i, j]]
    });
    let pass = bundle.forward(&images)?;
    let activations = &pass.act_samples[0].values; // H x W x J

    // order channels by descending mean activation, ties by index
    let j_count = activations.dim().2;
    let means: Vec<f64> = (0..j_count)
        .map(|j| activations.index_axis(ndarray::Axis(2), j).mean().unwrap())
        .collect();
    let mut order: Vec<usize> = (0..j_count).collect();
    order.sort_by(|&a, &b| means[b].partial_cmp(&means[a]).unwrap().then(a.cmp(&b)));

    let mut channels = Vec::with_capacity(j_count);
    for (rank, &kernel) in order.iter().enumerate() {
        let file = format!("channel_{rank:02}_kernel_{kernel}.png");
        let map = activations.index_axis(ndarray::Axis(2), kernel);
        to_gray_image(&map)
            .save(out_dir.join(&file))
            .map_err(VmfError::Image)?;
        channels.push(ChannelEntry {
            rank,
            kernel,
            mean_activation: means[kernel],
            file,
        });
    }

    let mut modality_files = Vec::with_capacity(4);
    for (c, name) in MODALITY_NAMES.iter().enumerate() {
        let file = format!("modality_{name}.png");
        let map = Array2::from_shape_fn((h, w), |(i, j)| volume.modalities[[c, slice_index, i, j]]);
        to_gray_image(&map.view())
            .save(out_dir.join(&file))
            .map_err(VmfError::Image)?;
        modality_files.push(file);
    }

    // labels 0..=3 spread over the 8-bit range for visibility
    let mask_file = "mask.png".to_string();
    let mask_img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([volume.mask[[slice_index, y as usize, x as usize]] * 85])
    });
    mask_img
        .save(out_dir.join(&mask_file))
        .map_err(VmfError::Image)?;

    let manifest = VizManifest {
        volume_id: volume.subject_id.clone(),
        slice_index,
        channels,
        modality_files,
        mask_file,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| VmfError::InvalidConfig(format!("serializing manifest: {e}")))?;
    std::fs::write(out_dir.join(CHANNEL_MANIFEST_FILE), json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SyntheticSpec};
    use crate::model::ArchConfig;
    use ndarray::Array3;

    fn desk_volume() -> VolumeRecord {
        let mut spec = SyntheticSpec::desk(40);
        spec.tumour_probability = 1.0;
        spec.train_volumes = 1;
        spec.val_volumes = 0;
        spec.test_volumes = 0;
        generate_synthetic_dataset(&spec).unwrap().remove(0)
    }

    #[test]
    fn gray_image_scales_min_to_zero_and_max_to_full() {
        let map = Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64);
        let img = to_gray_image(&map.view());
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(5, 3).0[0], 255);
    }

    #[test]
    fn constant_map_renders_uniform_gray() {
        let map = Array2::from_elem((5, 5), 0.125);
        let img = to_gray_image(&map.view());
        assert!(img.pixels().all(|p| p.0[0] == 128));
    }

    #[test]
    fn overlap_fraction_is_exact_on_a_hand_built_channel() {
        let mut channel = Array2::zeros((4, 4));
        channel[[0, 0]] = 3.0; // inside
        channel[[1, 1]] = 1.0; // inside
        channel[[3, 3]] = 4.0; // outside
        let mut mask = Array2::from_elem((4, 4), false);
        mask[[0, 0]] = true;
        mask[[1, 1]] = true;
        let score = intersection_over_activation(&channel.view(), &mask);
        assert!((score - 0.5).abs() < 1e-12);
        let empty = Array2::zeros((4, 4));
        assert_eq!(intersection_over_activation(&empty.view(), &mask), 0.0);
    }

    #[test]
    fn best_channel_picks_the_most_concentrated_one() {
        let mut acts = Array3::zeros((4, 4, 3));
        // channel 0: half inside; channel 1: all inside; channel 2: none
        acts[[0, 0, 0]] = 1.0;
        acts[[3, 3, 0]] = 1.0;
        acts[[0, 0, 1]] = 2.0;
        acts[[3, 3, 2]] = 5.0;
        let mut mask = Array2::from_elem((4, 4), false);
        mask[[0, 0]] = true;
        let (best, score) = best_channel_overlap(&acts.view(), &mask);
        assert_eq!(best, 1);
        assert_eq!(score, 1.0);
    }

    #[test]
    fn export_writes_the_full_file_set_with_descending_order() {
        let volume = desk_volume();
        let arch = ArchConfig::reduced(2);
        let bundle = ModelBundle::new(&arch, 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let slice_index = volume.slice_count() / 2;
        let manifest =
            export_slice_visualization(&bundle, &volume, slice_index, dir.path()).unwrap();

        assert_eq!(manifest.channels.len(), arch.kernel_count);
        assert_eq!(manifest.modality_files.len(), 4);
        for entry in &manifest.channels {
            assert!(dir.path().join(&entry.file).exists());
        }
        for file in &manifest.modality_files {
            assert!(dir.path().join(file).exists());
        }
        assert!(dir.path().join(&manifest.mask_file).exists());
        assert!(dir.path().join(CHANNEL_MANIFEST_FILE).exists());

        // ordering is by descending mean activation with ranks 0..J
        for (rank, entry) in manifest.channels.iter().enumerate() {
            assert_eq!(entry.rank, rank);
            if rank > 0 {
                assert!(entry.mean_activation <= manifest.channels[rank - 1].mean_activation);
            }
        }
        // the permutation covers every kernel exactly once
        let mut kernels: Vec<usize> = manifest.channels.iter().map(|c| c.kernel).collect();
        kernels.sort_unstable();
        assert_eq!(kernels, (0..arch.kernel_count).collect::<Vec<_>>());
    }

    #[test]
    fn out_of_range_slice_is_rejected() {
        let volume = desk_volume();
        let bundle = ModelBundle::new(&ArchConfig::reduced(2), 13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = export_slice_visualization(&bundle, &volume, 999, dir.path());
        match err {
            Err(VmfError::SliceOutOfBounds { .. }) => {}
            other => panic!("expected slice bounds error, got {other:?}"),
        }
    }
}

//! Datasets: synthetic volume generation, BraTS-format ingestion, and
//! slice-sample assembly with percentage-labeled subsets.
//!
//! Volumes are 4-modality stacks (T1, T1Gd, T2, FLAIR order) with voxel
//! label codes 0 = background, 1 = ED (edema), 2 = ET (enhancing),
//! 3 = NE (necrotic/non-enhancing). Training consumes 2D
//! [`SliceSample`]s: every slice carries a weak presence label derived
//! from the volume's two-point annotations, while dense masks are
//! activated only on the subset chosen by [`sample_labeled_subset`].

pub mod brats;
pub mod nifti;
pub mod store;
pub mod synthetic;

pub use brats::{load_brats_volume, BratsPaths};
pub use store::{load_dataset, save_dataset, DatasetManifest};
pub use synthetic::{generate_synthetic_dataset, ContrastTable, SyntheticSpec, TumourGeometry};

use crate::error::{Result, VmfError};
use crate::supervision::labels::{
    weak_label_for_slice, SliceSample, Structure, TaskMode, TwoPointAnnotation,
};
use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Dataset partition a volume belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One subject: modality stack, voxel labels and the per-structure
/// two-point annotations.
#[derive(Debug, Clone)]
pub struct VolumeRecord {
    pub subject_id: String,
    pub split: Split,
    /// 4 x S x H x W modalities (T1, T1Gd, T2, FLAIR).
    pub modalities: Array4<f64>,
    /// S x H x W label codes in 0..=3.
    pub mask: Array3<u8>,
    /// Whole-tumour plus the three sub-region annotations.
    pub annotations: Vec<TwoPointAnnotation>,
}

impl VolumeRecord {
    /// Derives the four standard annotations from a mask.
    pub fn annotations_from_mask(mask: &Array3<u8>) -> Vec<TwoPointAnnotation> {
        [
            Structure::WholeTumour,
            Structure::Edema,
            Structure::Enhancing,
            Structure::Necrotic,
        ]
        .into_iter()
        .map(|structure| crate::supervision::labels::two_point_from_mask(mask, structure))
        .collect()
    }

    pub fn slice_count(&self) -> usize {
        self.mask.dim().0
    }

    pub fn validate(&self) -> Result<()> {
        let (m, s, h, w) = self.modalities.dim();
        if m != 4 {
            return Err(VmfError::DimensionMismatch {
                context: format!("volume {} modalities", self.subject_id),
                expected: "4 channels".into(),
                actual: format!("{m} channels"),
            });
        }
        if self.mask.dim() != (s, h, w) {
            return Err(VmfError::DimensionMismatch {
                context: format!("volume {} mask", self.subject_id),
                expected: format!("{s}x{h}x{w}"),
                actual: format!("{:?}", self.mask.dim()),
            });
        }
        if let Some(&bad) = self.mask.iter().find(|&&v| v > 3) {
            return Err(VmfError::InvalidConfig(format!(
                "volume {} mask contains label code {bad} outside 0..=3",
                self.subject_id
            )));
        }
        for ann in &self.annotations {
            if ann.slice_count != s {
                return Err(VmfError::DimensionMismatch {
                    context: format!("volume {} annotation {:?}", self.subject_id, ann.structure),
                    expected: format!("{s} slices"),
                    actual: format!("{} slices", ann.slice_count),
                });
            }
        }
        Ok(())
    }
}

/// Expands a volume into one sample per slice. Pixel masks ride along
/// but stay flagged unavailable until [`sample_labeled_subset`] picks
/// the labeled subset.
pub fn make_slice_samples(volume: &VolumeRecord, mode: TaskMode) -> Result<Vec<SliceSample>> {
    volume.validate()?;
    let (_, s, h, w) = volume.modalities.dim();
    let mut samples = Vec::with_capacity(s);
    for idx in 0..s {
        let image = Array3::from_shape_fn((4, h, w), |(c, i, j)| {
            volume.modalities[[c, idx, i, j]]
        });
        let mask = volume
            .mask
            .index_axis(ndarray::Axis(0), idx)
            .to_owned();
        let weak_label = weak_label_for_slice(&volume.annotations, mode, idx)?;
        samples.push(SliceSample {
            image,
            mask,
            weak_label,
            has_pixel_label: false,
            volume_id: volume.subject_id.clone(),
            slice_index: idx,
        });
    }
    Ok(samples)
}

/// Convenience: samples for every volume of a split, concatenated.
pub fn make_split_samples(
    volumes: &[VolumeRecord],
    split: Split,
    mode: TaskMode,
) -> Result<Vec<SliceSample>> {
    let mut samples = Vec::new();
    for volume in volumes.iter().filter(|v| v.split == split) {
        samples.extend(make_slice_samples(volume, mode)?);
    }
    Ok(samples)
}

/// Activates pixel masks on ceil(fraction * N) samples, chosen uniformly
/// without replacement across the whole list (global, not per-volume).
///
/// The choice is a prefix of one seed-determined permutation, so for a
/// fixed seed the subsets of increasing fractions are nested — smaller
/// percentages always see a subset of the larger percentage's masks.
pub fn sample_labeled_subset(
    mut samples: Vec<SliceSample>,
    fraction: f64,
    seed: u64,
) -> Result<Vec<SliceSample>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(VmfError::InvalidConfig(format!(
            "label fraction {fraction} outside (0, 1]"
        )));
    }
    for sample in &mut samples {
        sample.has_pixel_label = false;
    }
    let n = samples.len();
    let keep = (fraction * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    for &idx in order.iter().take(keep) {
        samples[idx].has_pixel_label = true;
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy_volume(id: &str, split: Split, s: usize) -> VolumeRecord {
        let h = 8;
        let mut mask = Array3::<u8>::zeros((s, h, h));
        // plant ED on slices 2..=4 with an ET pixel on slice 3
        for idx in 2..=4usize.min(s - 1) {
            mask[[idx, 4, 4]] = 1;
        }
        if s > 3 {
            mask[[3, 4, 5]] = 2;
        }
        let modalities = Array4::from_elem((4, s, h, h), 0.5);
        let annotations = VolumeRecord::annotations_from_mask(&mask);
        VolumeRecord {
            subject_id: id.into(),
            split,
            modalities,
            mask,
            annotations,
        }
    }

    #[test]
    fn one_sample_per_slice() {
        let volume = toy_volume("a", Split::Train, 6);
        let samples = make_slice_samples(&volume, TaskMode::WholeTumour).unwrap();
        assert_eq!(samples.len(), 6);
        assert!(samples.iter().all(|s| !s.has_pixel_label));
        assert_eq!(samples[3].slice_index, 3);
        assert_eq!(samples[3].weak_label.values, vec![1]);
        assert_eq!(samples[0].weak_label.values, vec![0]);
    }

    #[test]
    fn sub_region_weak_labels_follow_ranges() {
        let volume = toy_volume("a", Split::Train, 6);
        let samples = make_slice_samples(&volume, TaskMode::SubRegion).unwrap();
        // ED spans [2,4]; ET only slice 3; NE absent
        assert_eq!(samples[3].weak_label.values, vec![1, 1, 0]);
        assert_eq!(samples[2].weak_label.values, vec![1, 0, 0]);
        assert_eq!(samples[5].weak_label.values, vec![0, 0, 0]);
    }

    #[test]
    fn validation_rejects_bad_label_codes() {
        let mut volume = toy_volume("a", Split::Train, 4);
        volume.mask[[0, 0, 0]] = 7;
        assert!(volume.validate().is_err());
    }

    #[test]
    fn subset_size_is_ceiling_of_fraction() {
        let volume = toy_volume("a", Split::Train, 100);
        let samples = make_slice_samples(&volume, TaskMode::WholeTumour).unwrap();
        let labeled = sample_labeled_subset(samples.clone(), 0.01, 9).unwrap();
        assert_eq!(labeled.iter().filter(|s| s.has_pixel_label).count(), 1);
        let labeled = sample_labeled_subset(samples.clone(), 0.013, 9).unwrap();
        assert_eq!(labeled.iter().filter(|s| s.has_pixel_label).count(), 2);
        let labeled = sample_labeled_subset(samples, 1.0, 9).unwrap();
        assert!(labeled.iter().all(|s| s.has_pixel_label));
    }

    #[test]
    fn subsets_nest_across_fractions_for_one_seed() {
        let volume = toy_volume("a", Split::Train, 60);
        let samples = make_slice_samples(&volume, TaskMode::WholeTumour).unwrap();
        let small = sample_labeled_subset(samples.clone(), 0.05, 4).unwrap();
        let large = sample_labeled_subset(samples, 0.25, 4).unwrap();
        for (s, l) in small.iter().zip(&large) {
            if s.has_pixel_label {
                assert!(l.has_pixel_label, "nesting violated at slice {}", s.slice_index);
            }
        }
    }

    #[test]
    fn different_seeds_pick_different_subsets() {
        let volume = toy_volume("a", Split::Train, 200);
        let samples = make_slice_samples(&volume, TaskMode::WholeTumour).unwrap();
        let a = sample_labeled_subset(samples.clone(), 0.05, 1).unwrap();
        let b = sample_labeled_subset(samples, 0.05, 2).unwrap();
        let pick = |v: &[SliceSample]| -> Vec<usize> {
            v.iter()
                .enumerate()
                .filter(|(_, s)| s.has_pixel_label)
                .map(|(i, _)| i)
                .collect()
        };
        assert_eq!(pick(&a).len(), pick(&b).len());
        assert_ne!(pick(&a), pick(&b));
    }

    #[test]
    fn fraction_bounds_are_enforced() {
        let volume = toy_volume("a", Split::Train, 4);
        let samples = make_slice_samples(&volume, TaskMode::WholeTumour).unwrap();
        assert!(sample_labeled_subset(samples.clone(), 0.0, 1).is_err());
        assert!(sample_labeled_subset(samples, 1.2, 1).is_err());
    }

    #[test]
    fn split_sample_collection_filters_by_split() {
        let volumes = vec![
            toy_volume("a", Split::Train, 4),
            toy_volume("b", Split::Val, 4),
            toy_volume("c", Split::Train, 4),
        ];
        let train = make_split_samples(&volumes, Split::Train, TaskMode::WholeTumour).unwrap();
        let val = make_split_samples(&volumes, Split::Val, TaskMode::WholeTumour).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 4);
        assert!(train.iter().all(|s| s.volume_id != "b"));
    }

    #[test]
    fn mask_slice_matches_volume() {
        let volume = toy_volume("a", Split::Train, 6);
        let samples = make_slice_samples(&volume, TaskMode::WholeTumour).unwrap();
        let expected: Array2<u8> = volume.mask.index_axis(ndarray::Axis(0), 3).to_owned();
        assert_eq!(samples[3].mask, expected);
        assert_eq!(samples[3].image[[0, 4, 4]], 0.5);
    }
}

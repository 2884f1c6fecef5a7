//! Weak labels, two-point annotations and slice samples.
//!
//! A two-point annotation marks the bottom and top slices of a structure
//! in a volume — the cheap expert signal. Slice-level weak labels are
//! derived from those ranges: a slice is positive for a structure iff it
//! lies inside the structure's annotated range.

use crate::error::{Result, VmfError};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Which segmentation problem is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskMode {
    /// Background vs any tumour tissue; C = 2, K = 1.
    #[serde(rename = "whole")]
    WholeTumour,
    /// Background / ED / ET / NE; C = 4, K = 3.
    #[serde(rename = "sub")]
    SubRegion,
}

impl TaskMode {
    pub fn class_count(&self) -> usize {
        match self {
            TaskMode::WholeTumour => 2,
            TaskMode::SubRegion => 4,
        }
    }

    /// Width K of the weak-label vector.
    pub fn weak_width(&self) -> usize {
        match self {
            TaskMode::WholeTumour => 1,
            TaskMode::SubRegion => 3,
        }
    }

    /// Structures carrying weak labels, in label order.
    pub fn weak_structures(&self) -> &'static [Structure] {
        match self {
            TaskMode::WholeTumour => &[Structure::WholeTumour],
            TaskMode::SubRegion => &[Structure::Edema, Structure::Enhancing, Structure::Necrotic],
        }
    }

    /// Published weak-loss weight: 0.5 whole-tumour, 0.1 sub-region.
    pub fn default_lambda_weak(&self) -> f64 {
        match self {
            TaskMode::WholeTumour => 0.5,
            TaskMode::SubRegion => 0.1,
        }
    }

    /// Segmentation class index of a mask voxel code under this task.
    pub fn class_of_label(&self, label: u8) -> usize {
        match self {
            TaskMode::WholeTumour => usize::from(label > 0),
            TaskMode::SubRegion => usize::from(label.min(3)),
        }
    }
}

/// Anatomical structures that can be annotated. Mask voxels use the
/// internal codes 0 = background, 1 = ED, 2 = ET, 3 = NE; the whole
/// tumour is the union of the three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    WholeTumour,
    Edema,
    Enhancing,
    Necrotic,
}

impl Structure {
    /// Whether a mask voxel code belongs to this structure.
    pub fn contains_label(&self, label: u8) -> bool {
        match self {
            Structure::WholeTumour => label > 0,
            Structure::Edema => label == 1,
            Structure::Enhancing => label == 2,
            Structure::Necrotic => label == 3,
        }
    }
}

/// Bottom/top slice marking for one structure in one volume. An absent
/// range means the structure does not occur.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoPointAnnotation {
    pub structure: Structure,
    /// (bottom, top) inclusive slice indices, or None when absent.
    pub range: Option<(usize, usize)>,
    /// Total slices in the annotated volume.
    pub slice_count: usize,
}

impl TwoPointAnnotation {
    pub fn new(
        structure: Structure,
        range: Option<(usize, usize)>,
        slice_count: usize,
    ) -> Result<Self> {
        if let Some((bottom, top)) = range {
            if bottom > top || top >= slice_count {
                return Err(VmfError::InvalidConfig(format!(
                    "annotation range ({bottom}, {top}) invalid for {slice_count} slices"
                )));
            }
        }
        Ok(Self {
            structure,
            range,
            slice_count,
        })
    }
}

/// 1 iff the slice lies inside the annotated range (inclusive); 0 when
/// the structure is absent. Out-of-bounds slice indices are rejected.
pub fn presence_from_two_point(annotation: &TwoPointAnnotation, slice_index: usize) -> Result<u8> {
    if slice_index >= annotation.slice_count {
        return Err(VmfError::SliceOutOfBounds {
            index: slice_index,
            slices: annotation.slice_count,
        });
    }
    Ok(match annotation.range {
        Some((bottom, top)) if bottom <= slice_index && slice_index <= top => 1,
        _ => 0,
    })
}

/// Simulates the expert annotation from a label volume (S x H x W):
/// bottom/top are the min/max slices containing at least one voxel of
/// the structure; absent if none. Slices inside the range with zero
/// structure voxels still receive presence 1 downstream — that is the
/// annotation's inherent coarseness.
pub fn two_point_from_mask(mask: &Array3<u8>, structure: Structure) -> TwoPointAnnotation {
    let (s, _h, _w) = mask.dim();
    let mut bottom = None;
    let mut top = None;
    for idx in 0..s {
        let slice = mask.index_axis(ndarray::Axis(0), idx);
        if slice.iter().any(|&v| structure.contains_label(v)) {
            if bottom.is_none() {
                bottom = Some(idx);
            }
            top = Some(idx);
        }
    }
    let range = match (bottom, top) {
        (Some(b), Some(t)) => Some((b, t)),
        _ => None,
    };
    TwoPointAnnotation {
        structure,
        range,
        slice_count: s,
    }
}

/// Binary slice-level presence vector c; K = 1 (whole tumour) or 3
/// (ED, ET, NE).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakLabel {
    pub values: Vec<u8>,
}

impl WeakLabel {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if values.len() != 1 && values.len() != 3 {
            return Err(VmfError::InvalidConfig(format!(
                "weak label width must be 1 or 3, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| *v > 1) {
            return Err(VmfError::InvalidConfig(
                "weak label entries must be binary".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| *v as f64).collect()
    }
}

/// Builds the weak label of one slice from a volume's annotations.
///
/// Annotations may cover more structures than the task needs; the ones
/// named by the task mode must be present.
pub fn weak_label_for_slice(
    annotations: &[TwoPointAnnotation],
    mode: TaskMode,
    slice_index: usize,
) -> Result<WeakLabel> {
    let mut values = Vec::with_capacity(mode.weak_width());
    for structure in mode.weak_structures() {
        let ann = annotations
            .iter()
            .find(|a| a.structure == *structure)
            .ok_or_else(|| {
                VmfError::InvalidConfig(format!("missing annotation for {structure:?}"))
            })?;
        values.push(presence_from_two_point(ann, slice_index)?);
    }
    WeakLabel::new(values)
}

/// One 2D training example: the image, its weak label, and (when the
/// sample is in the pixel-labeled subset) the dense mask.
#[derive(Debug, Clone)]
pub struct SliceSample {
    /// 4 x S x S modality channels.
    pub image: Array3<f64>,
    /// S x S voxel label codes (0..=3); kept for every slice but only
    /// used for training when `has_pixel_label` is set.
    pub mask: Array2<u8>,
    pub weak_label: WeakLabel,
    pub has_pixel_label: bool,
    pub volume_id: String,
    pub slice_index: usize,
}

impl SliceSample {
    /// One-hot mask (C x S x S) under the task mode's class scheme.
    pub fn one_hot_mask(&self, mode: TaskMode) -> Array3<f64> {
        let (h, w) = self.mask.dim();
        let c = mode.class_count();
        let mut out = Array3::zeros((c, h, w));
        for i in 0..h {
            for j in 0..w {
                let label = self.mask[[i, j]];
                let channel = match mode {
                    TaskMode::WholeTumour => usize::from(label > 0),
                    TaskMode::SubRegion => label as usize,
                };
                out[[channel.min(c - 1), i, j]] = 1.0;
            }
        }
        out
    }

    /// Whether the mask has at least one voxel of the weak structure `k`.
    pub fn mask_has_structure(&self, mode: TaskMode, k: usize) -> bool {
        let structure = mode.weak_structures()[k];
        self.mask.iter().any(|&v| structure.contains_label(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted_mask(s: usize, ranges: &[(Structure, usize, usize)]) -> Array3<u8> {
        // each structure gets a small block of voxels on its slices
        let mut mask = Array3::zeros((s, 8, 8));
        for (structure, bottom, top) in ranges {
            let code = match structure {
                Structure::Edema => 1,
                Structure::Enhancing => 2,
                Structure::Necrotic => 3,
                Structure::WholeTumour => unreachable!("plant sub-regions"),
            };
            for idx in *bottom..=*top {
                mask[[idx, 4, 4]] = code;
            }
        }
        mask
    }

    #[test]
    fn presence_inside_range() {
        let ann = TwoPointAnnotation::new(Structure::WholeTumour, Some((40, 80)), 155).unwrap();
        assert_eq!(presence_from_two_point(&ann, 60).unwrap(), 1);
        assert_eq!(presence_from_two_point(&ann, 40).unwrap(), 1);
        assert_eq!(presence_from_two_point(&ann, 80).unwrap(), 1);
    }

    #[test]
    fn presence_outside_range() {
        let ann = TwoPointAnnotation::new(Structure::WholeTumour, Some((40, 80)), 155).unwrap();
        assert_eq!(presence_from_two_point(&ann, 81).unwrap(), 0);
        assert_eq!(presence_from_two_point(&ann, 39).unwrap(), 0);
    }

    #[test]
    fn presence_absent_structure() {
        let ann = TwoPointAnnotation::new(Structure::Necrotic, None, 155).unwrap();
        assert_eq!(presence_from_two_point(&ann, 0).unwrap(), 0);
    }

    #[test]
    fn presence_rejects_out_of_bounds() {
        let ann = TwoPointAnnotation::new(Structure::WholeTumour, Some((0, 9)), 10).unwrap();
        assert!(matches!(
            presence_from_two_point(&ann, 10),
            Err(VmfError::SliceOutOfBounds { .. })
        ));
    }

    #[test]
    fn annotation_rejects_inverted_or_overflowing_range() {
        assert!(TwoPointAnnotation::new(Structure::Edema, Some((5, 3)), 10).is_err());
        assert!(TwoPointAnnotation::new(Structure::Edema, Some((0, 10)), 10).is_err());
    }

    #[test]
    fn two_point_from_mask_finds_min_max() {
        let mask = planted_mask(30, &[(Structure::Edema, 12, 20)]);
        let ann = two_point_from_mask(&mask, Structure::Edema);
        assert_eq!(ann.range, Some((12, 20)));
        assert_eq!(ann.slice_count, 30);
    }

    #[test]
    fn two_point_from_mask_handles_gaps() {
        // structure present only in slices {12, 13, 20} -> range (12, 20)
        let mut mask = Array3::zeros((30, 8, 8));
        for idx in [12usize, 13, 20] {
            mask[[idx, 2, 2]] = 1;
        }
        let ann = two_point_from_mask(&mask, Structure::Edema);
        assert_eq!(ann.range, Some((12, 20)));
        // gap slice still counts as present downstream — annotation
        // coarseness is intentional
        assert_eq!(presence_from_two_point(&ann, 15).unwrap(), 1);
    }

    #[test]
    fn two_point_from_mask_absent_structure() {
        let mask = planted_mask(30, &[(Structure::Edema, 5, 9)]);
        let ann = two_point_from_mask(&mask, Structure::Necrotic);
        assert_eq!(ann.range, None);
    }

    #[test]
    fn whole_tumour_spans_all_subregions() {
        let mask = planted_mask(
            60,
            &[
                (Structure::Edema, 10, 50),
                (Structure::Enhancing, 15, 40),
                (Structure::Necrotic, 20, 30),
            ],
        );
        let ann = two_point_from_mask(&mask, Structure::WholeTumour);
        assert_eq!(ann.range, Some((10, 50)));
    }

    #[test]
    fn round_trip_presence_equals_slice_membership() {
        let mask = planted_mask(40, &[(Structure::Enhancing, 7, 22)]);
        let ann = two_point_from_mask(&mask, Structure::Enhancing);
        for s in 0..40 {
            let expected = u8::from((7..=22).contains(&s));
            assert_eq!(presence_from_two_point(&ann, s).unwrap(), expected);
        }
    }

    #[test]
    fn weak_label_vector_orders_subregions() {
        let mask = planted_mask(
            60,
            &[
                (Structure::Edema, 10, 50),
                (Structure::Enhancing, 15, 40),
                (Structure::Necrotic, 20, 30),
            ],
        );
        let annotations: Vec<_> = [
            Structure::WholeTumour,
            Structure::Edema,
            Structure::Enhancing,
            Structure::Necrotic,
        ]
        .into_iter()
        .map(|st| two_point_from_mask(&mask, st))
        .collect();
        // slice 12: only ED present
        let label = weak_label_for_slice(&annotations, TaskMode::SubRegion, 12).unwrap();
        assert_eq!(label.values, vec![1, 0, 0]);
        // whole-tumour label covers exactly the union range [10, 50]
        for s in 0..60 {
            let label = weak_label_for_slice(&annotations, TaskMode::WholeTumour, s).unwrap();
            assert_eq!(label.values[0], u8::from((10..=50).contains(&s)));
        }
    }

    #[test]
    fn weak_label_validation() {
        assert!(WeakLabel::new(vec![0]).is_ok());
        assert!(WeakLabel::new(vec![1, 0, 1]).is_ok());
        assert!(WeakLabel::new(vec![0, 1]).is_err());
        assert!(WeakLabel::new(vec![2]).is_err());
    }

    #[test]
    fn one_hot_mask_is_one_hot() {
        let mut mask = Array2::zeros((4, 4));
        mask[[1, 1]] = 1;
        mask[[2, 2]] = 2;
        mask[[3, 3]] = 3;
        let sample = SliceSample {
            image: Array3::zeros((4, 4, 4)),
            mask,
            weak_label: WeakLabel::new(vec![1]).unwrap(),
            has_pixel_label: true,
            volume_id: "v0".into(),
            slice_index: 0,
        };
        let whole = sample.one_hot_mask(TaskMode::WholeTumour);
        assert_eq!(whole.dim(), (2, 4, 4));
        let sub = sample.one_hot_mask(TaskMode::SubRegion);
        assert_eq!(sub.dim(), (4, 4, 4));
        for i in 0..4 {
            for j in 0..4 {
                let ws: f64 = (0..2).map(|c| whole[[c, i, j]]).sum();
                let ss: f64 = (0..4).map(|c| sub[[c, i, j]]).sum();
                assert_eq!(ws, 1.0);
                assert_eq!(ss, 1.0);
            }
        }
        assert_eq!(whole[[1, 1, 1]], 1.0);
        assert_eq!(whole[[1, 2, 2]], 1.0);
        assert_eq!(sub[[2, 2, 2]], 1.0);
        assert_eq!(sub[[3, 3, 3]], 1.0);
    }
}

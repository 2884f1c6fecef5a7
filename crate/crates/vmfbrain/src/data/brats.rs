//! BraTS-format volume ingestion.
//!
//! Reads the four modality volumes and the label volume from NIfTI-1
//! files, remaps the file's label codes to the internal scheme,
//! downscales in-plane to 128x128 (area interpolation for images,
//! nearest-neighbour for masks) and normalizes each modality to zero
//! mean / unit variance over its nonzero (brain) voxels.

use super::nifti::read_nifti;
use super::{Split, VolumeRecord};
use crate::error::{Result, VmfError};
use ndarray::{Array2, Array3, Array4, ArrayView2};
use std::path::{Path, PathBuf};

/// In-plane resolution every ingested volume is resampled to.
pub const TARGET_SIZE: usize = 128;

/// The five files that make up one BraTS subject.
#[derive(Debug, Clone)]
pub struct BratsPaths {
    pub t1: PathBuf,
    pub t1gd: PathBuf,
    pub t2: PathBuf,
    pub flair: PathBuf,
    pub mask: PathBuf,
}

impl BratsPaths {
    fn modality_files(&self) -> [(&'static str, &Path); 4] {
        [
            ("t1", &self.t1),
            ("t1gd", &self.t1gd),
            ("t2", &self.t2),
            ("flair", &self.flair),
        ]
    }
}

/// Maps a BraTS file label code to the internal 0..=3 scheme
/// (0 background, 1 ED, 2 ET, 3 NE). BraTS files use 0 = background,
/// 1 = necrotic/non-enhancing core, 2 = edema, 4 = enhancing tumour.
fn remap_label(code: u8) -> Option<u8> {
    match code {
        0 => Some(0),
        2 => Some(1),
        4 => Some(2),
        1 => Some(3),
        _ => None,
    }
}

/// Box-filter area downscaling; each output pixel averages the source
/// region it covers (exact fractional overlaps, so non-integer ratios
/// like 240 -> 128 are handled without drift).
pub fn area_downscale(src: &ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (sh, sw) = src.dim();
    let ry = sh as f64 / out_h as f64;
    let rx = sw as f64 / out_w as f64;
    let mut out = Array2::zeros((out_h, out_w));
    for oi in 0..out_h {
        let y0 = oi as f64 * ry;
        let y1 = y0 + ry;
        let sy0 = y0.floor() as usize;
        let sy1 = (y1.ceil() as usize).min(sh);
        for oj in 0..out_w {
            let x0 = oj as f64 * rx;
            let x1 = x0 + rx;
            let sx0 = x0.floor() as usize;
            let sx1 = (x1.ceil() as usize).min(sw);
            let mut acc = 0.0;
            for sy in sy0..sy1 {
                let wy = (y1.min((sy + 1) as f64) - y0.max(sy as f64)).max(0.0);
                for sx in sx0..sx1 {
                    let wx = (x1.min((sx + 1) as f64) - x0.max(sx as f64)).max(0.0);
                    acc += src[[sy, sx]] * wy * wx;
                }
            }
            out[[oi, oj]] = acc / (ry * rx);
        }
    }
    out
}

/// Nearest-neighbour downscaling for label maps; output values are
/// always drawn from the input, so no new label codes can appear.
pub fn nearest_downscale(src: &ArrayView2<u8>, out_h: usize, out_w: usize) -> Array2<u8> {
    let (sh, sw) = src.dim();
    let ry = sh as f64 / out_h as f64;
    let rx = sw as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(oi, oj)| {
        let sy = (((oi as f64 + 0.5) * ry) as usize).min(sh - 1);
        let sx = (((oj as f64 + 0.5) * rx) as usize).min(sw - 1);
        src[[sy, sx]]
    })
}

/// Zero-mean / unit-variance normalization computed over nonzero
/// voxels only; exact zeros (non-brain background) stay zero.
fn normalize_nonzero(volume: &mut Array3<f64>) {
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for &v in volume.iter() {
        if v != 0.0 {
            sum += v;
            sq += v * v;
            n += 1;
        }
    }
    if n == 0 {
        return;
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    let std = var.sqrt();
    if std <= f64::EPSILON {
        return;
    }
    volume.mapv_inplace(|v| if v != 0.0 { (v - mean) / std } else { 0.0 });
}

/// NIfTI `[x, y, z]` voxels -> internal `S x H x W` slice stack
/// (slice = z, rows = y, columns = x).
fn to_slices(volume: &Array3<f64>) -> Array3<f64> {
    let (nx, ny, nz) = volume.dim();
    Array3::from_shape_fn((nz, ny, nx), |(s, i, j)| volume[[j, i, s]])
}

/// Ingests one subject: reads the five volumes, checks shape agreement,
/// remaps labels, downscales in-plane to 128x128 and z-normalizes each
/// modality over its brain voxels.
pub fn load_brats_volume(
    paths: &BratsPaths,
    subject_id: &str,
    split: Split,
) -> Result<VolumeRecord> {
    let mask_raw = read_nifti(&paths.mask)?;
    let dim = mask_raw.dim();
    let mut modalities_raw = Vec::with_capacity(4);
    for (name, path) in paths.modality_files() {
        let volume = read_nifti(path)?;
        if volume.dim() != dim {
            return Err(VmfError::DimensionMismatch {
                context: format!("BraTS subject {subject_id}, modality {name}"),
                expected: format!("{dim:?} (mask shape)"),
                actual: format!("{:?}", volume.dim()),
            });
        }
        modalities_raw.push(volume);
    }

    // validate + remap labels on the full-resolution mask so unknown
    // codes are caught even if downscaling would drop them
    let mask_slices = to_slices(&mask_raw);
    let (s, h, w) = mask_slices.dim();
    let mut mask_full = Array3::<u8>::zeros((s, h, w));
    for (idx, &v) in mask_slices.iter().enumerate() {
        let code = v.round();
        let remapped = if (0.0..=255.0).contains(&code) {
            remap_label(code as u8)
        } else {
            None
        };
        match remapped {
            Some(m) => mask_full.as_slice_mut().unwrap()[idx] = m,
            None => {
                return Err(VmfError::Nifti {
                    path: paths.mask.display().to_string(),
                    message: format!("unknown label code {v} at voxel {idx}"),
                });
            }
        }
    }

    let mut mask = Array3::<u8>::zeros((s, TARGET_SIZE, TARGET_SIZE));
    for idx in 0..s {
        let slice = mask_full.index_axis(ndarray::Axis(0), idx);
        mask.index_axis_mut(ndarray::Axis(0), idx)
            .assign(&nearest_downscale(&slice, TARGET_SIZE, TARGET_SIZE));
    }

    let mut modalities = Array4::<f64>::zeros((4, s, TARGET_SIZE, TARGET_SIZE));
    for (m, volume) in modalities_raw.iter().enumerate() {
        let slices = to_slices(volume);
        let mut scaled = Array3::<f64>::zeros((s, TARGET_SIZE, TARGET_SIZE));
        for idx in 0..s {
            let slice = slices.index_axis(ndarray::Axis(0), idx);
            scaled
                .index_axis_mut(ndarray::Axis(0), idx)
                .assign(&area_downscale(&slice, TARGET_SIZE, TARGET_SIZE));
        }
        normalize_nonzero(&mut scaled);
        modalities
            .index_axis_mut(ndarray::Axis(0), m)
            .assign(&scaled);
    }

    let annotations = VolumeRecord::annotations_from_mask(&mask);
    let record = VolumeRecord {
        subject_id: subject_id.to_string(),
        split,
        modalities,
        mask,
        annotations,
    };
    record.validate()?;
    Ok(record)
}

//! Deterministic synthetic multi-modal volumes for desk-scale
//! experiments.
//!
//! Each volume is a smooth elliptical "brain" on a zero background.
//! With a configurable probability a tumour is planted as three nested
//! ellipsoids — an edema shell (ED) around an enhancing ring (ET)
//! around a necrotic core (NE) — spanning a contiguous slice range.
//! Voxel classes render with per-modality contrast (edema bright on the
//! FLAIR-like channel, enhancing bright on the T1Gd-like channel), so
//! the tissue classes are separable but noisy. Masks and two-point
//! annotations come from the planted geometry itself.

use super::{Split, VolumeRecord};
use crate::error::{Result, VmfError};
use ndarray::{Array3, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Nested-ellipsoid tumour geometry, all lengths relative so one spec
/// serves any image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TumourGeometry {
    /// In-plane ED radius range as a fraction of image size.
    pub ed_radius: (f64, f64),
    /// ET radius as a fraction of the ED radius.
    pub et_fraction: f64,
    /// NE radius as a fraction of the ET radius.
    pub ne_fraction: f64,
    /// Tumour half-span range along the slice axis, as a fraction of
    /// the slice count.
    pub slice_half_span: (f64, f64),
}

impl Default for TumourGeometry {
    fn default() -> Self {
        Self {
            ed_radius: (0.16, 0.28),
            et_fraction: 0.65,
            ne_fraction: 0.5,
            slice_half_span: (0.15, 0.3),
        }
    }
}

impl TumourGeometry {
    pub fn validate(&self) -> Result<()> {
        let (r_lo, r_hi) = self.ed_radius;
        if !(0.0 < r_lo && r_lo <= r_hi && r_hi < 0.5) {
            return Err(VmfError::InvalidConfig(format!(
                "ED radius range ({r_lo}, {r_hi}) must satisfy 0 < lo <= hi < 0.5"
            )));
        }
        if !(0.0 < self.et_fraction && self.et_fraction < 1.0)
            || !(0.0 < self.ne_fraction && self.ne_fraction < 1.0)
        {
            return Err(VmfError::InvalidConfig(
                "sub-region fractions must lie in (0, 1) so NE \u{2286} ET \u{2286} ED".into(),
            ));
        }
        let (s_lo, s_hi) = self.slice_half_span;
        if !(0.0 < s_lo && s_lo <= s_hi && s_hi <= 0.45) {
            return Err(VmfError::InvalidConfig(format!(
                "slice half-span range ({s_lo}, {s_hi}) must satisfy 0 < lo <= hi <= 0.45"
            )));
        }
        Ok(())
    }
}

/// Mean intensity per tissue class and modality; rows are classes
/// (healthy brain, ED, ET, NE), columns are modalities
/// (T1, T1Gd, T2, FLAIR). All entries in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastTable {
    pub class_means: [[f64; 4]; 4],
}

impl Default for ContrastTable {
    fn default() -> Self {
        Self {
            class_means: [
                // T1    T1Gd   T2    FLAIR
                [0.45, 0.45, 0.40, 0.35], // healthy brain
                [0.35, 0.40, 0.70, 0.85], // ED: bright on T2/FLAIR
                [0.55, 0.90, 0.60, 0.60], // ET: bright on T1Gd
                [0.30, 0.15, 0.45, 0.45], // NE: dark on T1Gd
            ],
        }
    }
}

impl ContrastTable {
    pub fn validate(&self) -> Result<()> {
        for (c, row) in self.class_means.iter().enumerate() {
            for (m, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(VmfError::InvalidConfig(format!(
                        "contrast mean ({c}, {m}) = {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Full description of a synthetic dataset; the seed determines every
/// voxel. Fields missing from a serialized spec fall back to the
/// desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub train_volumes: usize,
    pub val_volumes: usize,
    pub test_volumes: usize,
    /// Slices S per volume.
    pub slice_count: usize,
    /// Square in-plane resolution.
    pub image_size: usize,
    /// Probability that a volume contains a tumour.
    pub tumour_probability: f64,
    pub geometry: TumourGeometry,
    pub contrast: ContrastTable,
    /// Standard deviation of the additive Gaussian intensity noise.
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Desk-scale default: 16x16 slices, 30/2/8 volumes (the published
    /// 938:62:251 subject ratio scaled to 40).
    pub fn desk(seed: u64) -> Self {
        Self {
            train_volumes: 30,
            val_volumes: 2,
            test_volumes: 8,
            slice_count: 12,
            image_size: 16,
            tumour_probability: 0.9,
            geometry: TumourGeometry::default(),
            contrast: ContrastTable::default(),
            noise_level: 0.04,
            seed,
        }
    }

    /// Full-resolution variant (128x128) with the same split ratio.
    pub fn full(seed: u64) -> Self {
        Self {
            image_size: 128,
            slice_count: 24,
            ..Self::desk(seed)
        }
    }

    /// Re-apportions the split sizes to `total` volumes at the same
    /// 938:62:251 subject ratio, using largest-remainder rounding so
    /// the sizes always sum to `total` exactly.
    pub fn with_total_volumes(mut self, total: usize) -> Self {
        const RATIO: [f64; 3] = [938.0, 62.0, 251.0];
        let sum: f64 = RATIO.iter().sum();
        let quotas: Vec<f64> = RATIO.iter().map(|r| total as f64 * r / sum).collect();
        let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - sizes[a] as f64;
            let rb = quotas[b] - sizes[b] as f64;
            rb.partial_cmp(&ra).unwrap()
        });
        let mut missing = total - sizes.iter().sum::<usize>();
        for &i in &order {
            if missing == 0 {
                break;
            }
            sizes[i] += 1;
            missing -= 1;
        }
        self.train_volumes = sizes[0];
        self.val_volumes = sizes[1];
        self.test_volumes = sizes[2];
        self
    }

    pub fn volume_count(&self) -> usize {
        self.train_volumes + self.val_volumes + self.test_volumes
    }

    pub fn validate(&self) -> Result<()> {
        if self.volume_count() == 0 {
            return Err(VmfError::InvalidConfig(
                "at least one volume required".into(),
            ));
        }
        if self.slice_count < 4 {
            return Err(VmfError::InvalidConfig(
                "slice_count must be at least 4".into(),
            ));
        }
        if self.image_size < 8 {
            return Err(VmfError::InvalidConfig(
                "image_size must be at least 8".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tumour_probability) {
            return Err(VmfError::InvalidConfig(format!(
                "tumour_probability {} outside [0, 1]",
                self.tumour_probability
            )));
        }
        if self.noise_level < 0.0 {
            return Err(VmfError::InvalidConfig(
                "noise_level must be non-negative".into(),
            ));
        }
        self.geometry.validate()?;
        self.contrast.validate()
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::desk(0)
    }
}

/// Generates the full dataset: `train + val + test` volumes in split
/// order, bit-identical for a fixed spec.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<Vec<VolumeRecord>> {
    spec.validate()?;
    let mut volumes = Vec::with_capacity(spec.volume_count());
    let splits = [
        (Split::Train, spec.train_volumes, "train"),
        (Split::Val, spec.val_volumes, "val"),
        (Split::Test, spec.test_volumes, "test"),
    ];
    let mut global_idx = 0u64;
    for (split, count, name) in splits {
        for local in 0..count {
            let sub_seed = spec.seed ^ global_idx.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let subject_id = format!("syn-{name}-{local:03}");
            volumes.push(generate_volume(spec, split, subject_id, sub_seed)?);
            global_idx += 1;
        }
    }
    Ok(volumes)
}

fn generate_volume(
    spec: &SyntheticSpec,
    split: Split,
    subject_id: String,
    sub_seed: u64,
) -> Result<VolumeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
    let s = spec.slice_count;
    let size = spec.image_size;
    let fsize = size as f64;

    // brain ellipse (a cylinder along the slice axis)
    let brain_cx = fsize / 2.0 + rng.random_range(-fsize / 16.0..fsize / 16.0);
    let brain_cy = fsize / 2.0 + rng.random_range(-fsize / 16.0..fsize / 16.0);
    let brain_a = rng.random_range(0.33..0.42) * fsize;
    let brain_b = rng.random_range(0.33..0.42) * fsize;

    let mut mask = Array3::<u8>::zeros((s, size, size));
    let has_tumour = rng.random_range(0.0..1.0) < spec.tumour_probability;
    if has_tumour {
        let (r_lo, r_hi) = spec.geometry.ed_radius;
        let r_ed = rng.random_range(r_lo..=r_hi) * fsize;
        let (h_lo, h_hi) = spec.geometry.slice_half_span;
        let half_span = rng.random_range(h_lo..=h_hi) * s as f64;
        let span = half_span.ceil() as usize;
        let centre_slice = rng.random_range(span..s - span) as f64;
        // tumour centre well inside the brain
        let cx = brain_cx + rng.random_range(-0.3..0.3) * brain_a;
        let cy = brain_cy + rng.random_range(-0.3..0.3) * brain_b;
        let bottom = (centre_slice - half_span).ceil() as usize;
        let top = (centre_slice + half_span).floor() as usize;
        // proportional nested ellipsoids: each sub-region is the ED
        // ellipsoid scaled by k, so ET and NE also span strictly fewer
        // slices — sub-region weak labels carry real extra information
        let et_k = spec.geometry.et_fraction;
        let ne_k = et_k * spec.geometry.ne_fraction;
        for idx in bottom..=top {
            let axial = (idx as f64 - centre_slice) / half_span;
            let mut planted = false;
            for i in 0..size {
                for j in 0..size {
                    let d = ((i as f64 - cy).powi(2) + (j as f64 - cx).powi(2)).sqrt();
                    let inside = |k: f64| {
                        (d / (k * r_ed)).powi(2) + (axial / k).powi(2) <= 1.0
                    };
                    let code = if inside(ne_k) {
                        3
                    } else if inside(et_k) {
                        2
                    } else if inside(1.0) {
                        1
                    } else {
                        0
                    };
                    if code > 0 {
                        mask[[idx, i, j]] = code;
                        planted = true;
                    }
                }
            }
            // guarantee the planted slice range survives rasterization
            // so annotations equal the planted span exactly
            if !planted {
                let ci = (cy.round() as usize).min(size - 1);
                let cj = (cx.round() as usize).min(size - 1);
                mask[[idx, ci, cj]] = 1;
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise_level.max(f64::MIN_POSITIVE))
        .map_err(|e| VmfError::InvalidConfig(format!("noise distribution: {e}")))?;
    let mut modalities = Array4::<f64>::zeros((4, s, size, size));
    for idx in 0..s {
        for i in 0..size {
            for j in 0..size {
                let dx = (j as f64 - brain_cx) / brain_a;
                let dy = (i as f64 - brain_cy) / brain_b;
                let inside_brain = dx * dx + dy * dy <= 1.0;
                if !inside_brain {
                    continue; // background stays exactly zero
                }
                let class = mask[[idx, i, j]] as usize;
                for m in 0..4 {
                    let mean = spec.contrast.class_means[class][m];
                    let v = mean + noise.sample(&mut rng);
                    modalities[[m, idx, i, j]] = v.clamp(0.0, 1.0);
                }
            }
        }
    }

    let annotations = VolumeRecord::annotations_from_mask(&mask);
    let record = VolumeRecord {
        subject_id,
        split,
        modalities,
        mask,
        annotations,
    };
    record.validate()?;
    Ok(record)
}

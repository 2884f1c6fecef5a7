//! Volume-wise evaluation: Dice (%) and 95th-percentile Hausdorff
//! distance, aggregated per class as mean and standard deviation across
//! volumes.
//!
//! Policies (documented, not universal conventions): Dice of two empty
//! masks is 100 (perfect agreement on absence); HD95 of two empty masks
//! is 0, while exactly one empty mask makes HD95 undefined — such
//! volumes are excluded from HD aggregation and counted. Distances are
//! in voxel units with unit inter-slice spacing; percentiles use linear
//! interpolation between order statistics.

pub mod edt;

use crate::data::VolumeRecord;
use crate::error::{Result, VmfError};
use crate::supervision::{SlicePredictor, TaskMode};
use edt::squared_edt_3d;
use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

/// Volume-wise Dice as a percentage: 100 * 2|P n G| / (|P| + |G|),
/// with 100 when both masks are empty.
pub fn dice_score_volume(pred: &Array3<bool>, gt: &Array3<bool>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(VmfError::DimensionMismatch {
            context: "dice_score_volume".into(),
            expected: format!("{:?}", gt.dim()),
            actual: format!("{:?}", pred.dim()),
        });
    }
    let mut inter = 0usize;
    let mut p = 0usize;
    let mut g = 0usize;
    for (&a, &b) in pred.iter().zip(gt.iter()) {
        p += usize::from(a);
        g += usize::from(b);
        inter += usize::from(a && b);
    }
    if p + g == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * inter as f64 / (p + g) as f64)
}

/// Boundary voxels: foreground voxels with at least one background
/// 6-neighbour; the outside of the grid counts as background.
pub fn boundary_voxels(mask: &Array3<bool>) -> Array3<bool> {
    let (ns, nh, nw) = mask.dim();
    Array3::from_shape_fn((ns, nh, nw), |(s, i, j)| {
        if !mask[[s, i, j]] {
            return false;
        }
        let neighbours = [
            (s.wrapping_sub(1), i, j),
            (s + 1, i, j),
            (s, i.wrapping_sub(1), j),
            (s, i + 1, j),
            (s, i, j.wrapping_sub(1)),
            (s, i, j + 1),
        ];
        neighbours.iter().any(|&(a, b, c)| {
            if a >= ns || b >= nh || c >= nw {
                true // outside the grid counts as background
            } else {
                !mask[[a, b, c]]
            }
        })
    })
}

/// Percentile with linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty; `q` in [0, 1].
pub fn percentile_linear(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Symmetric 95th-percentile surface distance between two binary
/// volumes, in voxel units.
///
/// Returns `Some(0.0)` when both masks are empty and `None` (undefined)
/// when exactly one is empty; callers exclude undefined values from
/// aggregation and report the exclusion count.
pub fn hausdorff95(pred: &Array3<bool>, gt: &Array3<bool>) -> Result<Option<f64>> {
    if pred.dim() != gt.dim() {
        return Err(VmfError::DimensionMismatch {
            context: "hausdorff95".into(),
            expected: format!("{:?}", gt.dim()),
            actual: format!("{:?}", pred.dim()),
        });
    }
    let p_empty = !pred.iter().any(|&v| v);
    let g_empty = !gt.iter().any(|&v| v);
    match (p_empty, g_empty) {
        (true, true) => return Ok(Some(0.0)),
        (true, false) | (false, true) => return Ok(None),
        _ => {}
    }
    let bp = boundary_voxels(pred);
    let bg = boundary_voxels(gt);
    let directed = |from: &Array3<bool>, to: &Array3<bool>| -> f64 {
        let field = squared_edt_3d(&to.view());
        let mut dists: Vec<f64> = from
            .indexed_iter()
            .filter(|(_, &v)| v)
            .map(|(idx, _)| field[idx].sqrt())
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
        percentile_linear(&dists, 0.95)
    };
    Ok(Some(directed(&bp, &bg).max(directed(&bg, &bp))))
}

/// Dice and HD95 of one volume for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub dice_percent: f64,
    /// None = undefined (exactly one of the masks was empty).
    pub hd95: Option<f64>,
}

/// All per-class metrics of one volume, foreground classes in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetrics {
    pub volume_id: String,
    pub per_class: Vec<ClassMetrics>,
}

/// Mean/std aggregate for one foreground class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateClass {
    pub class_name: String,
    pub dice_mean: f64,
    pub dice_std: f64,
    /// None when every volume's HD was undefined.
    pub hd_mean: Option<f64>,
    pub hd_std: Option<f64>,
    /// Volumes whose HD was undefined and excluded from the mean.
    pub hd_excluded: usize,
}

/// Full evaluation result: per-volume values plus the aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskMode,
    pub per_volume: Vec<VolumeMetrics>,
    pub aggregate: Vec<AggregateClass>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Foreground class names in channel order for a task.
pub fn class_names(mode: TaskMode) -> &'static [&'static str] {
    match mode {
        TaskMode::WholeTumour => &["tumour"],
        TaskMode::SubRegion => &["ED", "ET", "NE"],
    }
}

impl MetricsReport {
    fn aggregate_from(task: TaskMode, per_volume: Vec<VolumeMetrics>) -> Self {
        let names = class_names(task);
        let mut aggregate = Vec::with_capacity(names.len());
        for (c, name) in names.iter().enumerate() {
            let dice: Vec<f64> = per_volume.iter().map(|v| v.per_class[c].dice_percent).collect();
            let hd: Vec<f64> = per_volume
                .iter()
                .filter_map(|v| v.per_class[c].hd95)
                .collect();
            let (dice_mean, dice_std) = mean_std(&dice);
            let (hd_mean, hd_std) = if hd.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&hd);
                (Some(m), Some(s))
            };
            aggregate.push(AggregateClass {
                class_name: (*name).to_string(),
                dice_mean,
                dice_std,
                hd_mean,
                hd_std,
                hd_excluded: per_volume.len() - hd.len(),
            });
        }
        Self {
            task,
            per_volume,
            aggregate,
        }
    }

    /// Aggregate rows in `mean_std` layout.
    pub fn table(&self) -> String {
        let mut out = String::from("class\tdice\thd95\thd_excluded\n");
        for row in &self.aggregate {
            let hd = match (row.hd_mean, row.hd_std) {
                (Some(m), Some(s)) => format!("{m:.2}_{s:.2}"),
                _ => "undefined".to_string(),
            };
            out.push_str(&format!(
                "{}\t{:.2}_{:.2}\t{}\t{}\n",
                row.class_name, row.dice_mean, row.dice_std, hd, row.hd_excluded
            ));
        }
        out
    }

    /// Per-volume records, one row per volume and class (HD empty when
    /// undefined).
    pub fn to_csv(&self) -> String {
        let names = class_names(self.task);
        let mut out = String::from("volume_id,class,dice_percent,hd95\n");
        for volume in &self.per_volume {
            for (c, metrics) in volume.per_class.iter().enumerate() {
                let hd = metrics
                    .hd95
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{:.6},{}\n",
                    volume.volume_id, names[c], metrics.dice_percent, hd
                ));
            }
        }
        out
    }

    /// Mean Dice over the foreground classes (the single headline
    /// number used for run comparisons).
    pub fn mean_dice(&self) -> f64 {
        let sum: f64 = self.aggregate.iter().map(|a| a.dice_mean).sum();
        sum / self.aggregate.len() as f64
    }
}

/// Predicted class volume (argmax over channel probabilities) for every
/// slice of one volume, in evaluation batches.
fn predict_classes<P: SlicePredictor>(
    predictor: &P,
    volume: &VolumeRecord,
    batch_size: usize,
) -> Result<Array3<u8>> {
    let (_, s, h, w) = volume.modalities.dim();
    let mut classes = Array3::<u8>::zeros((s, h, w));
    let mut start = 0usize;
    while start < s {
        let end = (start + batch_size.max(1)).min(s);
        let images = Array4::from_shape_fn((end - start, 4, h, w), |(n, c, i, j)| {
            volume.modalities[[c, start + n, i, j]]
        });
        let probs = predictor.predict_probs(&images)?;
        let (_, c_out, ph, pw) = probs.dim();
        if (ph, pw) != (h, w) {
            return Err(VmfError::DimensionMismatch {
                context: "prediction resolution".into(),
                expected: format!("{h}x{w}"),
                actual: format!("{ph}x{pw}"),
            });
        }
        for n in 0..end - start {
            for i in 0..h {
                for j in 0..w {
                    let mut best = 0usize;
                    let mut best_v = probs[[n, 0, i, j]];
                    for c in 1..c_out {
                        if probs[[n, c, i, j]] > best_v {
                            best_v = probs[[n, c, i, j]];
                            best = c;
                        }
                    }
                    classes[[start + n, i, j]] = best as u8;
                }
            }
        }
        start = end;
    }
    Ok(classes)
}

/// Evaluates a slice predictor volume-wise: slice inference, argmax
/// binarization per class, both metrics per volume, mean/std aggregate.
pub fn evaluate_model<P: SlicePredictor>(
    predictor: &P,
    volumes: &[VolumeRecord],
    mode: TaskMode,
    batch_size: usize,
) -> Result<MetricsReport> {
    if volumes.is_empty() {
        return Err(VmfError::EmptyInput("no volumes to evaluate".into()));
    }
    if predictor.class_count() != mode.class_count() {
        return Err(VmfError::DimensionMismatch {
            context: "evaluation task".into(),
            expected: format!("{} classes", mode.class_count()),
            actual: format!("{} classes", predictor.class_count()),
        });
    }
    let classes = mode.class_count();
    let mut per_volume = Vec::with_capacity(volumes.len());
    for volume in volumes {
        volume.validate()?;
        let predicted = predict_classes(predictor, volume, batch_size)?;
        let mut per_class = Vec::with_capacity(classes - 1);
        for c in 1..classes {
            let pred_bin = predicted.mapv(|v| usize::from(v) == c);
            let gt_bin = volume.mask.mapv(|v| mode.class_of_label(v) == c);
            per_class.push(ClassMetrics {
                dice_percent: dice_score_volume(&pred_bin, &gt_bin)?,
                hd95: hausdorff95(&pred_bin, &gt_bin)?,
            });
        }
        per_volume.push(VolumeMetrics {
            volume_id: volume.subject_id.clone(),
            per_class,
        });
    }
    Ok(MetricsReport::aggregate_from(mode, per_volume))
}

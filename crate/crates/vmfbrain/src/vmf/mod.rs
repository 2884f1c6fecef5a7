//! von-Mises-Fisher kernel bank and the operations built on it.
//!
//! Image features are modelled with `J` vMF distributions on the unit
//! sphere in feature space. Each distribution has a learnable unit-norm
//! mean (a *kernel*) and a shared fixed concentration. Per-position
//! likelihoods over the kernels form the compositional representation
//! that downstream task networks consume.

pub mod kmeans;

pub use kmeans::{
    cluster_purity, init_kernels_kmeans, perturb_on_sphere, spherical_kmeans, subsample_rows,
    KmeansConfig, KmeansOutcome,
};

use crate::error::{Result, VmfError};
use ndarray::{Array2, Array3, ArrayView2, Axis};

/// Positions whose raw feature norm falls below this are flagged
/// degenerate instead of being divided by a near-zero norm.
pub const DEGENERATE_NORM_EPS: f64 = 1e-8;

/// Tolerance on kernel row norms enforced by [`KernelBank::validate`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// The learned compositional vocabulary: `J` unit-norm kernel means with a
/// shared concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    /// J x D matrix; rows are kernel means.
    pub kernels: Array2<f64>,
    /// Shared concentration of all vMF distributions.
    pub concentration: f64,
}

impl KernelBank {
    /// Builds a bank from a J x D matrix of unit rows.
    pub fn new(kernels: Array2<f64>, concentration: f64) -> Result<Self> {
        let bank = Self {
            kernels,
            concentration,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn kernel_count(&self) -> usize {
        self.kernels.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.kernels.ncols()
    }

    /// Checks J >= 2, D >= 2, concentration > 0 and unit rows.
    pub fn validate(&self) -> Result<()> {
        let (j, d) = self.kernels.dim();
        if j < 2 || d < 2 {
            return Err(VmfError::InvalidConfig(format!(
                "kernel bank needs J >= 2 and D >= 2, got J={j}, D={d}"
            )));
        }
        if !(self.concentration > 0.0) {
            return Err(VmfError::InvalidConfig(format!(
                "concentration must be positive, got {}",
                self.concentration
            )));
        }
        for (idx, row) in self.kernels.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(VmfError::InvalidConfig(format!(
                    "kernel {idx} has norm {norm}, expected 1 within {UNIT_NORM_TOL:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-position unit feature vectors of one slice, H x W x D.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    /// H x W x D values; normalized rows except degenerate positions.
    pub values: Array3<f64>,
    /// True once per-position normalization has been applied.
    pub normalized: bool,
    /// Euclidean norms of the raw input at each position (H x W),
    /// kept for backpropagation through the normalization.
    pub raw_norms: Array2<f64>,
    /// Positions whose raw norm fell below [`DEGENERATE_NORM_EPS`].
    pub degenerate: Array2<bool>,
}

impl FeatureMap {
    pub fn height(&self) -> usize {
        self.values.dim().0
    }

    pub fn width(&self) -> usize {
        self.values.dim().1
    }

    pub fn feature_dim(&self) -> usize {
        self.values.dim().2
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }
}

/// Per-position, per-kernel activations of one slice, H x W x J.
/// Entries lie in [0, 1] and sum to 1 over the kernel axis.
#[derive(Debug, Clone)]
pub struct VmfActivations {
    pub values: Array3<f64>,
}

impl VmfActivations {
    pub fn height(&self) -> usize {
        self.values.dim().0
    }

    pub fn width(&self) -> usize {
        self.values.dim().1
    }

    pub fn kernel_count(&self) -> usize {
        self.values.dim().2
    }
}

/// Projects each position's feature vector onto the unit sphere.
///
/// Positions with norm below [`DEGENERATE_NORM_EPS`] become the zero
/// vector and are flagged degenerate. Non-finite input is rejected with
/// the offending position.
pub fn normalize_features(raw: &Array3<f64>) -> Result<FeatureMap> {
    let (h, w, d) = raw.dim();
    for ((i, j, _), v) in raw.indexed_iter() {
        if !v.is_finite() {
            return Err(VmfError::NonFiniteInput {
                row: i,
                col: j,
            });
        }
    }
    // force standard layout so downstream flattening to (HW) x D views
    // is always valid, whatever strides the caller's array carries
    let mut values = Array3::from_shape_fn((h, w, d), |idx| raw[idx]);
    let mut raw_norms = Array2::zeros((h, w));
    let mut degenerate = Array2::from_elem((h, w), false);
    for i in 0..h {
        for j in 0..w {
            let mut norm_sq = 0.0;
            for k in 0..d {
                let v = raw[[i, j, k]];
                norm_sq += v * v;
            }
            let norm = norm_sq.sqrt();
            raw_norms[[i, j]] = norm;
            if norm < DEGENERATE_NORM_EPS {
                degenerate[[i, j]] = true;
                for k in 0..d {
                    values[[i, j, k]] = 0.0;
                }
            } else {
                for k in 0..d {
                    values[[i, j, k]] /= norm;
                }
            }
        }
    }
    Ok(FeatureMap {
        values,
        normalized: true,
        raw_norms,
        degenerate,
    })
}

/// Backpropagates a gradient on the normalized features to the raw input.
///
/// For z = r / ||r||, grad_r = (g - (g . z) z) / ||r||. Degenerate
/// positions receive zero gradient.
pub fn normalize_features_backward(features: &FeatureMap, grad_z: &Array3<f64>) -> Array3<f64> {
    let (h, w, d) = features.values.dim();
    debug_assert_eq!(grad_z.dim(), (h, w, d));
    let mut grad_raw = Array3::zeros((h, w, d));
    for i in 0..h {
        for j in 0..w {
            if features.degenerate[[i, j]] {
                continue;
            }
            let norm = features.raw_norms[[i, j]];
            let mut dot = 0.0;
            for k in 0..d {
                dot += grad_z[[i, j, k]] * features.values[[i, j, k]];
            }
            for k in 0..d {
                grad_raw[[i, j, k]] =
                    (grad_z[[i, j, k]] - dot * features.values[[i, j, k]]) / norm;
            }
        }
    }
    grad_raw
}

fn check_dims(features: &FeatureMap, bank: &KernelBank, context: &str) -> Result<()> {
    if features.feature_dim() != bank.feature_dim() {
        return Err(VmfError::DimensionMismatch {
            context: context.to_string(),
            expected: format!("feature dim {}", bank.feature_dim()),
            actual: format!("feature dim {}", features.feature_dim()),
        });
    }
    Ok(())
}

/// Computes per-position kernel activations.
///
/// Raw scores are `concentration * mu_j . z_i`; the output normalizes the
/// exponentiated scores across kernels (max-subtracted for stability), so
/// each position's activations sum to 1. Degenerate positions get the
/// uniform vector 1/J.
pub fn vmf_activations(features: &FeatureMap, bank: &KernelBank) -> Result<VmfActivations> {
    if !features.normalized {
        return Err(VmfError::InvalidConfig(
            "vmf_activations requires normalized features".into(),
        ));
    }
    check_dims(features, bank, "vmf_activations")?;
    let (h, w, d) = features.values.dim();
    let j = bank.kernel_count();
    let z = features
        .values
        .view()
        .into_shape_with_order((h * w, d))
        .expect("contiguous feature map");
    // scores: (HW x J) = z . kernels^T, scaled by the concentration
    let mut scores = z.dot(&bank.kernels.t());
    scores *= bank.concentration;
    let uniform = 1.0 / j as f64;
    let mut flat_idx = 0;
    for mut row in scores.rows_mut() {
        let pi = flat_idx / w;
        let pj = flat_idx % w;
        flat_idx += 1;
        if features.degenerate[[pi, pj]] {
            row.fill(uniform);
            continue;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let values = scores
        .into_shape_with_order((h, w, j))
        .expect("reshape back to H x W x J");
    Ok(VmfActivations { values })
}

/// Gradients of [`vmf_activations`] with respect to the normalized
/// features and the kernels.
///
/// Returns `(grad_features, grad_kernels)`. Degenerate positions emit
/// constant activations, so they propagate nothing.
pub fn vmf_activations_backward(
    features: &FeatureMap,
    bank: &KernelBank,
    activations: &VmfActivations,
    grad_act: &Array3<f64>,
) -> (Array3<f64>, Array2<f64>) {
    let (h, w, d) = features.values.dim();
    let j = bank.kernel_count();
    debug_assert_eq!(grad_act.dim(), (h, w, j));
    let sigma = bank.concentration;

    let a = activations
        .values
        .view()
        .into_shape_with_order((h * w, j))
        .expect("contiguous activations");
    let ga = grad_act
        .view()
        .into_shape_with_order((h * w, j))
        .expect("contiguous activation grads");

    // softmax backward: gs = a * (ga - sum(ga * a)), zeroed at degenerate
    // positions
    let mut gs = Array2::<f64>::zeros((h * w, j));
    for idx in 0..h * w {
        let pi = idx / w;
        let pj = idx % w;
        if features.degenerate[[pi, pj]] {
            continue;
        }
        let mut dot = 0.0;
        for k in 0..j {
            dot += ga[[idx, k]] * a[[idx, k]];
        }
        for k in 0..j {
            gs[[idx, k]] = a[[idx, k]] * (ga[[idx, k]] - dot);
        }
    }

    let z = features
        .values
        .view()
        .into_shape_with_order((h * w, d))
        .expect("contiguous feature map");
    let mut grad_z = gs.dot(&bank.kernels);
    grad_z *= sigma;
    let mut grad_kernels = gs.t().dot(&z);
    grad_kernels *= sigma;

    let grad_features = grad_z
        .into_shape_with_order((h, w, d))
        .expect("reshape grads to H x W x D");
    (grad_features, grad_kernels)
}

/// Clustering loss: negative mean best cosine similarity between feature
/// vectors and kernels.
///
/// Degenerate positions contribute 0 to the sum; the denominator stays
/// H*W. The value lies in [-1, 1].
pub fn clustering_loss(features: &FeatureMap, bank: &KernelBank) -> Result<f64> {
    if !features.normalized {
        return Err(VmfError::InvalidConfig(
            "clustering_loss requires normalized features".into(),
        ));
    }
    check_dims(features, bank, "clustering_loss")?;
    let (h, w, d) = features.values.dim();
    let z = features
        .values
        .view()
        .into_shape_with_order((h * w, d))
        .expect("contiguous feature map");
    let sims = z.dot(&bank.kernels.t());
    let mut acc = 0.0;
    for (idx, row) in sims.rows().into_iter().enumerate() {
        let pi = idx / w;
        let pj = idx % w;
        if features.degenerate[[pi, pj]] {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for &v in row.iter() {
            if v > best {
                best = v;
            }
        }
        acc += best;
    }
    Ok(-acc / (h * w) as f64)
}

/// Gradient of [`clustering_loss`] with respect to the kernels.
///
/// Feature vectors are treated as constants inside this loss; only the
/// per-position argmax kernel receives -z_i / (H*W). Ties resolve to the
/// lowest kernel index.
pub fn clustering_loss_grad_kernels(
    features: &FeatureMap,
    bank: &KernelBank,
) -> Result<Array2<f64>> {
    if !features.normalized {
        return Err(VmfError::InvalidConfig(
            "clustering_loss requires normalized features".into(),
        ));
    }
    check_dims(features, bank, "clustering_loss_grad_kernels")?;
    let (h, w, d) = features.values.dim();
    let j = bank.kernel_count();
    let z = features
        .values
        .view()
        .into_shape_with_order((h * w, d))
        .expect("contiguous feature map");
    let sims = z.dot(&bank.kernels.t());
    let mut grad = Array2::<f64>::zeros((j, d));
    let scale = -1.0 / (h * w) as f64;
    for (idx, row) in sims.rows().into_iter().enumerate() {
        let pi = idx / w;
        let pj = idx % w;
        if features.degenerate[[pi, pj]] {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_j = 0;
        for (kj, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                best_j = kj;
            }
        }
        for k in 0..d {
            grad[[best_j, k]] += scale * z[[idx, k]];
        }
    }
    Ok(grad)
}

/// Projects every kernel row back onto the unit sphere.
///
/// Rejects rows with norm below 1e-8, identifying the kernel index.
/// Called after every optimizer step on the bank.
pub fn renormalize_kernels(bank: &mut KernelBank) -> Result<()> {
    renormalize_rows(&mut bank.kernels)
}

/// Row-wise unit normalization shared by the bank and raw kernel matrices
/// held as optimizer parameters.
pub fn renormalize_rows<S>(rows: &mut ndarray::ArrayBase<S, ndarray::Ix2>) -> Result<()>
where
    S: ndarray::DataMut<Elem = f64>,
{
    for (idx, mut row) in rows.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < 1e-8 {
            return Err(VmfError::DegenerateKernel { index: idx, norm });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(())
}

/// Stacks per-position unit vectors drawn from a feature map into an
/// N x D matrix, skipping degenerate positions. Used to harvest k-means
/// training vectors.
pub fn collect_unit_vectors(features: &FeatureMap) -> Array2<f64> {
    let (h, w, d) = features.values.dim();
    let mut rows = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if !features.degenerate[[i, j]] {
                rows.push((i, j));
            }
        }
    }
    let mut out = Array2::zeros((rows.len(), d));
    for (r, (i, j)) in rows.iter().enumerate() {
        for k in 0..d {
            out[[r, k]] = features.values[[*i, *j, k]];
        }
    }
    out
}

/// Validates that every row of `vectors` is unit-norm within `tol`.
pub fn check_unit_rows(vectors: ArrayView2<f64>, tol: f64) -> Result<()> {
    for (idx, row) in vectors.axis_iter(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > tol {
            return Err(VmfError::InvalidConfig(format!(
                "row {idx} has norm {norm}, expected unit within {tol:e}"
            )));
        }
    }
    Ok(())
}

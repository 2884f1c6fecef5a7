//! Reconstruction pre-training for kernel initialization.
//!
//! A throwaway copy of the feature extractor plus a 1x1 projection back
//! to the input channels is trained under mean-squared error. Its only
//! purpose is to produce feature vectors worth clustering: the k-means
//! centres become the initial kernel bank, the pre-trained weights are
//! discarded, and the main extractor starts from fresh initialization.

use super::unet::UNet;
use super::ArchConfig;
use crate::error::{Result, VmfError};
use crate::nn::{Adam, Conv2d};
use crate::vmf::kmeans::subsample_rows;
use crate::vmf::{collect_unit_vectors, normalize_features};
use ndarray::{Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A pre-trained extractor with its reconstruction head and loss curve.
pub struct ReconOutcome {
    pub unet: UNet,
    pub proj: Conv2d,
    /// Mean squared reconstruction error per epoch (empty if epochs = 0).
    pub epoch_losses: Vec<f64>,
}

/// Trains a reconstruction UNet for `epochs` over the given images
/// (each 4 x S x S) and returns the extractor for feature harvesting.
///
/// `epochs = 0` returns the fresh initialization unchanged. Sample order
/// is shuffled per epoch from the seed, so runs are reproducible.
pub fn pretrain_reconstruction(
    images: &[Array3<f64>],
    arch: &ArchConfig,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ReconOutcome> {
    if images.is_empty() {
        return Err(VmfError::EmptyInput(
            "reconstruction pre-training needs a non-empty image set".into(),
        ));
    }
    if batch_size == 0 {
        return Err(VmfError::InvalidConfig("batch_size must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unet = UNet::new(arch, &mut rng);
    let mut proj = Conv2d::new(
        "recon.proj",
        arch.feature_dim,
        arch.in_channels,
        1,
        1,
        0,
        &mut rng,
    );
    let mut opt = Adam::new(learning_rate);
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let x = stack_images(images, chunk);
            let (features, unet_cache) = unet.forward(&x)?;
            let recon = proj.forward(&features)?;
            let diff = &recon - &x;
            let numel = diff.len() as f64;
            let loss = diff.iter().map(|v| v * v).sum::<f64>() / numel;
            epoch_loss += loss;
            batches += 1;

            let grad_recon = diff.mapv(|v| 2.0 * v / numel);
            for p in unet.params_mut() {
                p.zero_grad();
            }
            for p in proj.params_mut() {
                p.zero_grad();
            }
            let grad_features = proj.backward(&features, &grad_recon)?;
            unet.backward(&unet_cache, &grad_features)?;
            let mut params = unet.params_mut();
            params.extend(proj.params_mut());
            opt.step(&mut params);
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }
    Ok(ReconOutcome {
        unet,
        proj,
        epoch_losses,
    })
}

/// Runs the (pre-trained) extractor over images and harvests unit-norm
/// feature vectors for k-means, keeping at most `per_image` vectors per
/// image (degenerate positions skipped before subsampling).
pub fn harvest_feature_vectors(
    unet: &UNet,
    images: &[Array3<f64>],
    per_image: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if images.is_empty() {
        return Err(VmfError::EmptyInput(
            "feature harvesting needs a non-empty image set".into(),
        ));
    }
    let d = unet.feature_dim();
    let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(images.len());
    for (idx, image) in images.iter().enumerate() {
        let x = stack_images(std::slice::from_ref(image), &[0]);
        let (features_cf, _) = unet.forward(&x)?;
        let (_, _, h, w) = features_cf.dim();
        let mut raw = Array3::zeros((h, w, d));
        for i in 0..h {
            for j in 0..w {
                for k in 0..d {
                    raw[[i, j, k]] = features_cf[[0, k, i, j]];
                }
            }
        }
        let fm = normalize_features(&raw)?;
        let vectors = collect_unit_vectors(&fm);
        if vectors.nrows() == 0 {
            continue;
        }
        blocks.push(subsample_rows(&vectors, per_image, seed ^ (idx as u64)));
    }
    if blocks.is_empty() {
        return Err(VmfError::EmptyInput(
            "all harvested feature vectors were degenerate".into(),
        ));
    }
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Array2::zeros((total, d));
    let mut row = 0;
    for block in blocks {
        for r in 0..block.nrows() {
            out.row_mut(row).assign(&block.row(r));
            row += 1;
        }
    }
    Ok(out)
}

fn stack_images(images: &[Array3<f64>], indices: &[usize]) -> Array4<f64> {
    let (c, h, w) = images[indices[0]].dim();
    let mut out = Array4::zeros((indices.len(), c, h, w));
    for (row, &idx) in indices.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), row)
            .assign(&images[idx]);
    }
    out
}

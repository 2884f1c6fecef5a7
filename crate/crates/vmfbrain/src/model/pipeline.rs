//! The full differentiable pipeline: images -> raw features ->
//! unit-sphere normalization -> kernel activations -> class
//! probabilities -> presence scores.
//!
//! Tensor layouts at the public boundary follow the natural form of each
//! stage: images and soft masks are channels-first (N, C, H, W); raw
//! features and kernel activations are channels-last (N, H, W, D) /
//! (N, H, W, J), matching the per-position view the sphere operations
//! take. Internally convolutions run channels-first.

use super::heads::{TaskHead, TaskHeadCache, WeakClassifier, WeakClassifierCache};
use super::unet::{UNet, UNetCache};
use super::ArchConfig;
use crate::error::{Result, VmfError};
use crate::nn::Param;
use crate::vmf::{
    clustering_loss, clustering_loss_grad_kernels, normalize_features,
    normalize_features_backward, renormalize_rows, vmf_activations, vmf_activations_backward,
    FeatureMap, KernelBank, VmfActivations,
};
use ndarray::{Array2, Array3, Array4, ArrayD, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// All trainable state: the three networks plus the kernel bank held as
/// an optimizer parameter.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub arch: ArchConfig,
    pub unet: UNet,
    pub head: TaskHead,
    pub weak: WeakClassifier,
    /// J x D kernel matrix as a trainable parameter; rows stay unit-norm
    /// via renormalization after every optimizer step.
    pub kernels: Param,
}

impl ModelBundle {
    /// Fresh bundle with fan-in-scaled random network weights and random
    /// unit-norm kernels, fully determined by the seed.
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unet = UNet::new(arch, &mut rng);
        let head = TaskHead::new(arch, &mut rng);
        let weak = WeakClassifier::new(arch, &mut rng);
        let mut kernels = Param::uniform_init(
            "kernels",
            &[arch.kernel_count, arch.feature_dim],
            1.0,
            &mut rng,
        );
        let mut view = kernels
            .value
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2d kernel parameter");
        renormalize_rows(&mut view)?;
        drop(view);
        Ok(Self {
            arch: arch.clone(),
            unet,
            head,
            weak,
            kernels,
        })
    }

    /// Snapshot of the kernel parameter as a bank value.
    pub fn bank(&self) -> KernelBank {
        let kernels = self
            .kernels
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2d kernel parameter")
            .to_owned();
        KernelBank {
            kernels,
            concentration: self.arch.concentration,
        }
    }

    /// Replaces the kernel parameter from an initialized bank.
    pub fn set_bank(&mut self, bank: &KernelBank) -> Result<()> {
        bank.validate()?;
        if bank.kernel_count() != self.arch.kernel_count
            || bank.feature_dim() != self.arch.feature_dim
        {
            return Err(VmfError::DimensionMismatch {
                context: "kernel bank install".into(),
                expected: format!("{}x{}", self.arch.kernel_count, self.arch.feature_dim),
                actual: format!("{}x{}", bank.kernel_count(), bank.feature_dim()),
            });
        }
        self.kernels.value = ArrayD::from_shape_vec(
            self.kernels.value.raw_dim(),
            bank.kernels.iter().copied().collect(),
        )
        .expect("matching kernel shape");
        Ok(())
    }

    /// Projects kernel rows back onto the unit sphere; call after every
    /// optimizer step.
    pub fn renormalize_kernels(&mut self) -> Result<()> {
        let mut view = self
            .kernels
            .value
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2d kernel parameter");
        renormalize_rows(&mut view)
    }

    /// Raw features in channels-last layout: (N, 4, S, S) -> (N, S, S, D).
    pub fn extract_features(&self, images: &Array4<f64>) -> Result<Array4<f64>> {
        let (features_cf, _) = self.unet.forward(images)?;
        Ok(to_channels_last(&features_cf))
    }

    /// Per-sample sphere normalization + kernel activations:
    /// (N, S, S, D) -> (N, S, S, J).
    pub fn activations(&self, features: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, h, w, _d) = features.dim();
        let bank = self.bank();
        let mut out = Array4::zeros((n, h, w, bank.kernel_count()));
        for s in 0..n {
            let raw = features.index_axis(ndarray::Axis(0), s).to_owned();
            let fm = normalize_features(&raw)?;
            let act = vmf_activations(&fm, &bank)?;
            out.index_axis_mut(ndarray::Axis(0), s).assign(&act.values);
        }
        Ok(out)
    }

    /// Class probabilities from activations: (N, S, S, J) -> (N, C, S, S).
    pub fn predict_segmentation(&self, activations: &Array4<f64>) -> Result<Array4<f64>> {
        let act_cf = to_channels_first(activations);
        let (probs, _) = self.head.forward(&act_cf)?;
        Ok(probs)
    }

    /// Presence scores from soft masks: (N, C, S, S) -> (N, K).
    pub fn predict_presence(&self, soft_mask: &Array4<f64>) -> Result<Array2<f64>> {
        let (presence, _) = self.weak.forward(soft_mask)?;
        Ok(presence)
    }

    /// Full inference: images -> (activations (N,S,S,J), probs, presence).
    pub fn infer(&self, images: &Array4<f64>) -> Result<(Array4<f64>, Array4<f64>, Array2<f64>)> {
        let features = self.extract_features(images)?;
        let activations = self.activations(&features)?;
        let probs = self.predict_segmentation(&activations)?;
        let presence = self.predict_presence(&probs)?;
        Ok((activations, probs, presence))
    }

    /// Training-mode forward keeping every intermediate for backward.
    pub fn forward(&self, images: &Array4<f64>) -> Result<ForwardPass> {
        let bank = self.bank();
        let (features_cf, unet_cache) = self.unet.forward(images)?;
        let n = features_cf.dim().0;
        let (h, w) = (features_cf.dim().2, features_cf.dim().3);
        let j = bank.kernel_count();

        let mut feature_maps = Vec::with_capacity(n);
        let mut act_samples = Vec::with_capacity(n);
        let mut act_cf = Array4::zeros((n, j, h, w));
        for s in 0..n {
            let raw = sample_channels_last(&features_cf, s);
            let fm = normalize_features(&raw)?;
            let act = vmf_activations(&fm, &bank)?;
            for i in 0..h {
                for jj in 0..w {
                    for k in 0..j {
                        act_cf[[s, k, i, jj]] = act.values[[i, jj, k]];
                    }
                }
            }
            feature_maps.push(fm);
            act_samples.push(act);
        }

        let (probs, head_cache) = self.head.forward(&act_cf)?;
        let (presence, weak_cache) = self.weak.forward(&probs)?;
        Ok(ForwardPass {
            unet_cache,
            feature_maps,
            act_samples,
            head_cache,
            weak_cache,
            probs,
            presence,
        })
    }

    /// Backpropagates loss gradients through every stage, accumulating
    /// into all parameter `.grad` buffers.
    ///
    /// `grad_probs` is dL/dY-hat (from the Dice term), `grad_presence` is
    /// dL/dc-hat (from the weak term), and `clu_weight` scales the
    /// clustering-loss contribution (dL/dL_clu, normally 1/batch per
    /// sample handled internally: pass the coefficient multiplying the
    /// batch-mean clustering loss). The clustering term routes gradients
    /// to the kernels only; features are constants inside it.
    pub fn backward(
        &mut self,
        pass: &ForwardPass,
        grad_probs: &Array4<f64>,
        grad_presence: &Array2<f64>,
        clu_weight: f64,
    ) -> Result<()> {
        let bank = self.bank();
        let n = pass.feature_maps.len();
        let (h, w) = (pass.probs.dim().2, pass.probs.dim().3);
        let j = bank.kernel_count();
        let d = bank.feature_dim();

        // presence path adds to the soft-mask gradient
        let grad_probs_weak = self.weak.backward(&pass.weak_cache, grad_presence)?;
        let grad_probs_total = grad_probs + &grad_probs_weak;
        let grad_act_cf = self.head.backward(&pass.head_cache, &grad_probs_total)?;

        // through the vMF stage per sample
        let mut grad_features_cf = Array4::zeros((n, d, h, w));
        let mut kernel_grad = Array2::<f64>::zeros((j, d));
        for s in 0..n {
            let mut grad_act = Array3::zeros((h, w, j));
            for i in 0..h {
                for jj in 0..w {
                    for k in 0..j {
                        grad_act[[i, jj, k]] = grad_act_cf[[s, k, i, jj]];
                    }
                }
            }
            let fm = &pass.feature_maps[s];
            let (grad_z, grad_k) =
                vmf_activations_backward(fm, &bank, &pass.act_samples[s], &grad_act);
            kernel_grad += &grad_k;
            let grad_raw = normalize_features_backward(fm, &grad_z);
            for i in 0..h {
                for jj in 0..w {
                    for k in 0..d {
                        grad_features_cf[[s, k, i, jj]] = grad_raw[[i, jj, k]];
                    }
                }
            }
            // clustering term: batch mean, kernels only
            if clu_weight != 0.0 {
                let g = clustering_loss_grad_kernels(fm, &bank)?;
                kernel_grad.scaled_add(clu_weight / n as f64, &g);
            }
        }
        let mut kg = self
            .kernels
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2d kernel grad");
        kg += &kernel_grad;
        drop(kg);

        self.unet.backward(&pass.unet_cache, &grad_features_cf)?;
        Ok(())
    }

    /// Batch-mean clustering loss of a forward pass.
    pub fn clustering_loss_of(&self, pass: &ForwardPass) -> Result<f64> {
        let bank = self.bank();
        let mut acc = 0.0;
        for fm in &pass.feature_maps {
            acc += clustering_loss(fm, &bank)?;
        }
        Ok(acc / pass.feature_maps.len() as f64)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.unet.params_mut();
        out.extend(self.head.params_mut());
        out.extend(self.weak.params_mut());
        out.push(&mut self.kernels);
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.unet.params();
        out.extend(self.head.params());
        out.extend(self.weak.params());
        out.push(&self.kernels);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Everything the backward pass needs from one training forward.
pub struct ForwardPass {
    pub unet_cache: UNetCache,
    pub feature_maps: Vec<FeatureMap>,
    pub act_samples: Vec<VmfActivations>,
    pub head_cache: TaskHeadCache,
    pub weak_cache: WeakClassifierCache,
    /// (N, C, H, W) class probabilities.
    pub probs: Array4<f64>,
    /// (N, K) presence scores.
    pub presence: Array2<f64>,
}

/// (N, C, H, W) -> (N, H, W, C) standard-layout copy.
pub fn to_channels_last(x: &Array4<f64>) -> Array4<f64> {
    let v = x.view().permuted_axes([0, 2, 3, 1]);
    Array4::from_shape_fn(v.raw_dim(), |idx| v[idx])
}

/// (N, H, W, C) -> (N, C, H, W) standard-layout copy.
pub fn to_channels_first(x: &Array4<f64>) -> Array4<f64> {
    let v = x.view().permuted_axes([0, 3, 1, 2]);
    Array4::from_shape_fn(v.raw_dim(), |idx| v[idx])
}

/// One sample of a channels-first batch as an (H, W, C) array.
fn sample_channels_last(x: &Array4<f64>, s: usize) -> Array3<f64> {
    let v = x.index_axis(ndarray::Axis(0), s).permuted_axes([1, 2, 0]);
    Array3::from_shape_fn(v.raw_dim(), |idx| v[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn bundle(seed: u64, class_count: usize) -> ModelBundle {
        ModelBundle::new(&ArchConfig::reduced(class_count), seed).unwrap()
    }

    fn random_images(n: usize, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn((n, 4, 16, 16), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn shape_closure_for_batch_sizes() {
        let b = bundle(1, 2);
        for n in [1usize, 2, 3] {
            let images = random_images(n, 10 + n as u64);
            let features = b.extract_features(&images).unwrap();
            assert_eq!(features.dim(), (n, 16, 16, 16));
            let acts = b.activations(&features).unwrap();
            assert_eq!(acts.dim(), (n, 16, 16, 8));
            let probs = b.predict_segmentation(&acts).unwrap();
            assert_eq!(probs.dim(), (n, 2, 16, 16));
            let presence = b.predict_presence(&probs).unwrap();
            assert_eq!(presence.dim(), (n, 1));
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let b = bundle(2, 4);
        let images = random_images(2, 20);
        let (a1, p1, c1) = b.infer(&images).unwrap();
        let (a2, p2, c2) = b.infer(&images).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(p1, p2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn activation_positions_sum_to_one() {
        let b = bundle(3, 2);
        let images = random_images(2, 30);
        let (acts, probs, presence) = b.infer(&images).unwrap();
        for s in 0..2 {
            for i in 0..16 {
                for j in 0..16 {
                    let sum: f64 = (0..8).map(|k| acts[[s, i, j, k]]).sum();
                    assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-6);
                    let psum: f64 = (0..2).map(|c| probs[[s, c, i, j]]).sum();
                    assert_abs_diff_eq!(psum, 1.0, epsilon = 1e-6);
                }
            }
        }
        assert!(presence.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn set_bank_round_trips() {
        let mut b = bundle(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut m = Array2::from_shape_fn((8, 16), |_| rng.random_range(-1.0..1.0));
        renormalize_rows(&mut m).unwrap();
        let bank = KernelBank::new(m.clone(), 30.0).unwrap();
        b.set_bank(&bank).unwrap();
        assert_eq!(b.bank().kernels, m);
    }

    #[test]
    fn set_bank_rejects_shape_mismatch() {
        let mut b = bundle(5, 2);
        let mut m = Array2::zeros((4, 16));
        for i in 0..4 {
            m[[i, i]] = 1.0;
        }
        let bank = KernelBank::new(m, 30.0).unwrap();
        assert!(b.set_bank(&bank).is_err());
    }

    #[test]
    fn transposes_are_inverses() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let x = Array4::from_shape_fn((2, 3, 4, 5), |_| rng.random_range(-1.0..1.0));
        let back = to_channels_first(&to_channels_last(&x));
        assert_eq!(x, back);
    }

    /// End-to-end finite-difference check of the dense-supervision path
    /// (a weighted-sum objective over probs and presence) for parameters
    /// sampled from every network plus the kernels. The clustering term
    /// is checked separately since its feature path is defined as
    /// constant.
    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut b = bundle(6, 2);
        let images = random_images(2, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let w_probs = Array4::from_shape_fn((2, 2, 16, 16), |_| rng.random_range(-1.0..1.0));
        let w_pres = Array2::from_shape_fn((2, 1), |_| rng.random_range(-1.0..1.0));

        b.zero_grad();
        let pass = b.forward(&images).unwrap();
        b.backward(&pass, &w_probs, &w_pres, 0.0).unwrap();

        let eval = |b: &ModelBundle| -> f64 {
            let pass = b.forward(&images).unwrap();
            (&pass.probs * &w_probs).sum() + (&pass.presence * &w_pres).sum()
        };

        let step = 1e-5;
        let n_params = b.params().len();
        let mut checked = 0;
        for p_idx in (0..n_params).step_by(3) {
            let (a, orig, e_idx) = {
                let params = b.params();
                let p = params[p_idx];
                let e_idx = (p_idx * 101) % p.value.len();
                (
                    p.grad.as_slice().unwrap()[e_idx],
                    p.value.as_slice().unwrap()[e_idx],
                    e_idx,
                )
            };
            {
                b.params_mut()[p_idx].value.as_slice_mut().unwrap()[e_idx] = orig + step;
            }
            let plus = eval(&b);
            {
                b.params_mut()[p_idx].value.as_slice_mut().unwrap()[e_idx] = orig - step;
            }
            let minus = eval(&b);
            {
                b.params_mut()[p_idx].value.as_slice_mut().unwrap()[e_idx] = orig;
            }
            let fd = (plus - minus) / (2.0 * step);
            let denom = fd.abs().max(a.abs()).max(1e-6);
            assert!(
                ((fd - a) / denom).abs() < 1e-3,
                "param {p_idx} entry {e_idx}: fd {fd} vs analytic {a}"
            );
            checked += 1;
        }
        assert!(checked >= 8);
    }

    /// The clustering path: gradient w.r.t. kernels matches FD of the
    /// batch-mean clustering loss alone (features held constant by
    /// definition, so FD is taken over the loss's explicit kernel
    /// dependence only).
    #[test]
    fn clustering_path_kernel_gradient_matches_fd() {
        let mut b = bundle(7, 2);
        let images = random_images(2, 70);
        b.zero_grad();
        let pass = b.forward(&images).unwrap();
        let zero_probs = Array4::zeros(pass.probs.raw_dim());
        let zero_pres = Array2::zeros(pass.presence.raw_dim());
        b.backward(&pass, &zero_probs, &zero_pres, 1.0).unwrap();

        // FD over kernels of mean clustering loss at fixed features;
        // kernel-only perturbation keeps features constant automatically
        // because L_clu reads features from the cached pass
        let step = 1e-5;
        let fms = &pass.feature_maps;
        let eval = |kernels: &Array2<f64>| -> f64 {
            let bank = KernelBank {
                kernels: kernels.clone(),
                concentration: 30.0,
            };
            let mut acc = 0.0;
            for fm in fms {
                acc += clustering_loss(fm, &bank).unwrap();
            }
            acc / fms.len() as f64
        };
        let base = b
            .kernels
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .to_owned();
        // note: the activation path also touches kernels, but its
        // gradient contribution is zero here because grad_probs and
        // grad_presence are zero
        for j in 0..8 {
            for c in (0..16).step_by(5) {
                let mut plus = base.clone();
                plus[[j, c]] += step;
                let mut minus = base.clone();
                minus[[j, c]] -= step;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let a = b.kernels.grad.view().into_dimensionality::<Ix2>().unwrap()[[j, c]];
                let denom = fd.abs().max(a.abs()).max(1e-6);
                assert!(
                    ((fd - a) / denom).abs() < 1e-4,
                    "kernel ({j},{c}): fd {fd} vs analytic {a}"
                );
            }
        }
    }
}

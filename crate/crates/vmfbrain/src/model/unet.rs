//! Feature extractor: a compact 2D UNet without a classification layer.
//!
//! Each encoder level applies two 3x3 convolutions with SiLU; levels
//! after the first downsample by folding a stride-2 step into their
//! first convolution. The decoder mirrors with nearest-neighbour
//! upsampling, a channel-reducing convolution, a skip concatenation and
//! a merge convolution. A final 1x1 projection emits D raw feature
//! channels at input resolution (no activation — features are
//! sphere-normalized downstream).

use super::ArchConfig;
use crate::error::{Result, VmfError};
use crate::nn::{
    concat_channels, silu, silu_backward, split_channels, upsample2x_nearest,
    upsample2x_nearest_backward, Conv2d, Param,
};
use ndarray::Array4;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct UNet {
    /// Two convolutions per level; the first conv of levels > 0 has
    /// stride 2.
    enc: Vec<[Conv2d; 2]>,
    /// Per decode level i (0..L-1): channel reduction ch[i+1] -> ch[i]
    /// applied after upsampling.
    dec_up: Vec<Conv2d>,
    /// Per decode level i: merge 2*ch[i] -> ch[i] after the skip concat.
    dec_merge: Vec<Conv2d>,
    /// 1x1 projection ch[0] -> D.
    proj: Conv2d,
    in_channels: usize,
    input_size: usize,
}

/// Intermediate tensors kept alive between forward and backward.
#[derive(Debug)]
pub struct UNetCache {
    enc_conv_in: Vec<Vec<Array4<f64>>>,
    enc_pre: Vec<Vec<Array4<f64>>>,
    skips: Vec<Array4<f64>>,
    dec_steps: Vec<DecStep>,
    proj_in: Array4<f64>,
}

#[derive(Debug)]
struct DecStep {
    level: usize,
    up_in: Array4<f64>,
    up_pre: Array4<f64>,
    merge_in: Array4<f64>,
    merge_pre: Array4<f64>,
}

impl UNet {
    pub fn new(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let ch = &arch.encoder_channels;
        let levels = ch.len();
        let mut enc = Vec::with_capacity(levels);
        for l in 0..levels {
            let (in_ch, stride) = if l == 0 {
                (arch.in_channels, 1)
            } else {
                (ch[l - 1], 2)
            };
            enc.push([
                Conv2d::new(&format!("enc{l}.0"), in_ch, ch[l], 3, stride, 1, rng),
                Conv2d::new(&format!("enc{l}.1"), ch[l], ch[l], 3, 1, 1, rng),
            ]);
        }
        let mut dec_up = Vec::new();
        let mut dec_merge = Vec::new();
        for l in 0..levels.saturating_sub(1) {
            dec_up.push(Conv2d::new(
                &format!("dec{l}.up"),
                ch[l + 1],
                ch[l],
                3,
                1,
                1,
                rng,
            ));
            dec_merge.push(Conv2d::new(
                &format!("dec{l}.merge"),
                2 * ch[l],
                ch[l],
                3,
                1,
                1,
                rng,
            ));
        }
        let proj = Conv2d::new("proj", ch[0], arch.feature_dim, 1, 1, 0, rng);
        Self {
            enc,
            dec_up,
            dec_merge,
            proj,
            in_channels: arch.in_channels,
            input_size: arch.input_size,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.proj.out_channels()
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(VmfError::DimensionMismatch {
                context: "feature extractor input".into(),
                expected: format!("{} channels", self.in_channels),
                actual: format!("{c} channels"),
            });
        }
        if h != self.input_size || w != self.input_size {
            return Err(VmfError::DimensionMismatch {
                context: "feature extractor input".into(),
                expected: format!("{0}x{0} spatial size", self.input_size),
                actual: format!("{h}x{w}"),
            });
        }
        Ok(())
    }

    /// Produces (N, D, H, W) raw features and the cache for backward.
    pub fn forward(&self, x: &Array4<f64>) -> Result<(Array4<f64>, UNetCache)> {
        self.check_input(x)?;
        let levels = self.enc.len();
        let mut enc_conv_in = Vec::with_capacity(levels);
        let mut enc_pre = Vec::with_capacity(levels);
        let mut skips = Vec::with_capacity(levels);
        let mut cur = x.clone();
        for block in &self.enc {
            let mut conv_in = Vec::with_capacity(2);
            let mut pre = Vec::with_capacity(2);
            for conv in block {
                conv_in.push(cur.clone());
                let z = conv.forward(&cur)?;
                cur = silu(&z);
                pre.push(z);
            }
            enc_conv_in.push(conv_in);
            enc_pre.push(pre);
            skips.push(cur.clone());
        }
        let mut dec_steps = Vec::with_capacity(levels.saturating_sub(1));
        for level in (0..levels.saturating_sub(1)).rev() {
            let up_in = upsample2x_nearest(&cur);
            let up_pre = self.dec_up[level].forward(&up_in)?;
            cur = silu(&up_pre);
            let merge_in = concat_channels(&skips[level], &cur)?;
            let merge_pre = self.dec_merge[level].forward(&merge_in)?;
            cur = silu(&merge_pre);
            dec_steps.push(DecStep {
                level,
                up_in,
                up_pre,
                merge_in,
                merge_pre,
            });
        }
        let proj_in = cur;
        let features = self.proj.forward(&proj_in)?;
        Ok((
            features,
            UNetCache {
                enc_conv_in,
                enc_pre,
                skips,
                dec_steps,
                proj_in,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &UNetCache, grad_features: &Array4<f64>) -> Result<Array4<f64>> {
        let levels = self.enc.len();
        let mut grad = self.proj.backward(&cache.proj_in, grad_features)?;
        let mut skip_grads: Vec<Option<Array4<f64>>> = (0..levels).map(|_| None).collect();
        for step in cache.dec_steps.iter().rev() {
            let skip_channels = cache.skips[step.level].dim().1;
            let g_merge_pre = silu_backward(&step.merge_pre, &grad);
            let g_cat = self.dec_merge[step.level].backward(&step.merge_in, &g_merge_pre)?;
            let (g_skip, g_up_out) = split_channels(&g_cat, skip_channels);
            skip_grads[step.level] = Some(g_skip);
            let g_up_pre = silu_backward(&step.up_pre, &g_up_out);
            let g_upsampled = self.dec_up[step.level].backward(&step.up_in, &g_up_pre)?;
            grad = upsample2x_nearest_backward(&g_upsampled);
        }
        // grad now sits on the deepest block's output; walk encoder
        // blocks in reverse, adding each level's skip-path gradient
        for l in (0..levels).rev() {
            if let Some(sg) = &skip_grads[l] {
                grad += sg;
            }
            for c in (0..2).rev() {
                let g_pre = silu_backward(&cache.enc_pre[l][c], &grad);
                grad = self.enc[l][c].backward(&cache.enc_conv_in[l][c], &g_pre)?;
            }
        }
        Ok(grad)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for block in &mut self.enc {
            for conv in block {
                out.extend(conv.params_mut());
            }
        }
        for conv in &mut self.dec_up {
            out.extend(conv.params_mut());
        }
        for conv in &mut self.dec_merge {
            out.extend(conv.params_mut());
        }
        out.extend(self.proj.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for block in &self.enc {
            for conv in block {
                out.extend(conv.params());
            }
        }
        for conv in &self.dec_up {
            out.extend(conv.params());
        }
        for conv in &self.dec_merge {
            out.extend(conv.params());
        }
        out.extend(self.proj.params());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn reduced_unet(seed: u64) -> UNet {
        let arch = ArchConfig::reduced(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        UNet::new(&arch, &mut rng)
    }

    #[test]
    fn output_shape_is_input_resolution_with_feature_channels() {
        let unet = reduced_unet(1);
        let x = Array4::zeros((2, 4, 16, 16));
        let (features, _) = unet.forward(&x).unwrap();
        assert_eq!(features.dim(), (2, 16, 16, 16));
    }

    #[test]
    fn all_zero_input_gives_finite_output() {
        let unet = reduced_unet(2);
        let x = Array4::zeros((1, 4, 16, 16));
        let (features, _) = unet.forward(&x).unwrap();
        assert!(features.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identical_batch_entries_give_identical_features() {
        let unet = reduced_unet(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = Array4::from_shape_fn((1, 4, 16, 16), |_| rng.random_range(-1.0..1.0));
        let mut two = Array4::zeros((2, 4, 16, 16));
        for c in 0..4 {
            for i in 0..16 {
                for j in 0..16 {
                    two[[0, c, i, j]] = one[[0, c, i, j]];
                    two[[1, c, i, j]] = one[[0, c, i, j]];
                }
            }
        }
        let (f, _) = unet.forward(&two).unwrap();
        for d in 0..16 {
            for i in 0..16 {
                for j in 0..16 {
                    assert_eq!(f[[0, d, i, j]].to_bits(), f[[1, d, i, j]].to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_channels_and_size() {
        let unet = reduced_unet(5);
        assert!(unet.forward(&Array4::zeros((1, 3, 16, 16))).is_err());
        assert!(unet.forward(&Array4::zeros((1, 4, 32, 32))).is_err());
    }

    #[test]
    fn gradients_match_finite_differences_on_sampled_params() {
        let mut unet = reduced_unet(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array4::from_shape_fn((1, 4, 16, 16), |_| rng.random_range(-1.0..1.0));
        let weights = Array4::from_shape_fn((1, 16, 16, 16), |_| rng.random_range(-1.0..1.0));

        let (_, cache) = unet.forward(&x).unwrap();
        unet.backward(&cache, &weights).unwrap();

        // snapshot analytic grads for sampled parameter entries
        let param_count = unet.params().len();
        let step = 1e-5;
        let mut checked = 0;
        for p_idx in 0..param_count {
            let (a, orig, e_idx) = {
                let params = unet.params();
                let p = params[p_idx];
                let e_idx = (p_idx * 37) % p.value.len();
                (
                    p.grad.as_slice().unwrap()[e_idx],
                    p.value.as_slice().unwrap()[e_idx],
                    e_idx,
                )
            };
            let eval = |unet: &UNet| -> f64 {
                let (f, _) = unet.forward(&x).unwrap();
                (&f * &weights).sum()
            };
            {
                let mut params = unet.params_mut();
                params[p_idx].value.as_slice_mut().unwrap()[e_idx] = orig + step;
            }
            let plus = eval(&unet);
            {
                let mut params = unet.params_mut();
                params[p_idx].value.as_slice_mut().unwrap()[e_idx] = orig - step;
            }
            let minus = eval(&unet);
            {
                let mut params = unet.params_mut();
                params[p_idx].value.as_slice_mut().unwrap()[e_idx] = orig;
            }
            let fd = (plus - minus) / (2.0 * step);
            let denom = fd.abs().max(a.abs()).max(1e-6);
            assert!(
                ((fd - a) / denom).abs() < 1e-3,
                "param {p_idx} entry {e_idx}: fd {fd} vs analytic {a}"
            );
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} parameters checked");
    }

    #[test]
    fn full_preset_builds_and_runs() {
        let arch = ArchConfig::full(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let unet = UNet::new(&arch, &mut rng);
        let x = Array4::zeros((1, 4, 128, 128));
        let (f, _) = unet.forward(&x).unwrap();
        assert_eq!(f.dim(), (1, 64, 128, 128));
    }
}

//! Task head and weak-supervision classifier.

use super::ArchConfig;
use crate::error::{Result, VmfError};
use crate::nn::{
    channel_softmax, channel_softmax_backward, global_max_pool, global_max_pool_backward,
    sigmoid, sigmoid_backward, silu, silu_backward, Conv2d, Linear, Param,
};
use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

/// Segmentation head: three 3x3 convolutions (J -> h1 -> h2 -> C) with
/// SiLU between, closed by a per-position softmax over classes.
#[derive(Debug, Clone)]
pub struct TaskHead {
    convs: [Conv2d; 3],
}

#[derive(Debug)]
pub struct TaskHeadCache {
    conv_in: [Array4<f64>; 3],
    pre: [Array4<f64>; 2],
    /// Softmax output, needed for its backward pass.
    pub probs: Array4<f64>,
}

impl TaskHead {
    pub fn new(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let [h1, h2] = arch.head_hidden;
        Self {
            convs: [
                Conv2d::new("head.0", arch.kernel_count, h1, 3, 1, 1, rng),
                Conv2d::new("head.1", h1, h2, 3, 1, 1, rng),
                Conv2d::new("head.2", h2, arch.class_count, 3, 1, 1, rng),
            ],
        }
    }

    pub fn kernel_count(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn class_count(&self) -> usize {
        self.convs[2].out_channels()
    }

    /// (N, J, H, W) activations -> (N, C, H, W) class probabilities.
    pub fn forward(&self, activations: &Array4<f64>) -> Result<(Array4<f64>, TaskHeadCache)> {
        if activations.dim().1 != self.kernel_count() {
            return Err(VmfError::DimensionMismatch {
                context: "task head input".into(),
                expected: format!("{} kernel channels", self.kernel_count()),
                actual: format!("{} channels", activations.dim().1),
            });
        }
        let in0 = activations.clone();
        let pre0 = self.convs[0].forward(&in0)?;
        let in1 = silu(&pre0);
        let pre1 = self.convs[1].forward(&in1)?;
        let in2 = silu(&pre1);
        let logits = self.convs[2].forward(&in2)?;
        let probs = channel_softmax(&logits);
        Ok((
            probs.clone(),
            TaskHeadCache {
                conv_in: [in0, in1, in2],
                pre: [pre0, pre1],
                probs,
            },
        ))
    }

    /// Returns the gradient with respect to the input activations.
    pub fn backward(
        &mut self,
        cache: &TaskHeadCache,
        grad_probs: &Array4<f64>,
    ) -> Result<Array4<f64>> {
        let g = channel_softmax_backward(&cache.probs, grad_probs);
        let g = self.convs[2].backward(&cache.conv_in[2], &g)?;
        let g = silu_backward(&cache.pre[1], &g);
        let g = self.convs[1].backward(&cache.conv_in[1], &g)?;
        let g = silu_backward(&cache.pre[0], &g);
        self.convs[0].backward(&cache.conv_in[0], &g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.convs.iter().flat_map(|c| c.params()).collect()
    }
}

/// Weak classifier: soft masks (N, C, H, W) -> presence scores (N, K)
/// via two stride-2 convolutions, global max pooling and a
/// sigmoid-bounded affine map.
///
/// Max pooling (rather than averaging) keeps the evidence of a small
/// structure from being diluted across the slice: one confident location
/// is enough to assert presence, which is exactly the semantics of the
/// slice-level labels.
#[derive(Debug, Clone)]
pub struct WeakClassifier {
    convs: [Conv2d; 2],
    fc: Linear,
}

#[derive(Debug)]
pub struct WeakClassifierCache {
    conv_in: [Array4<f64>; 2],
    pre: [Array4<f64>; 2],
    pooled_size: (usize, usize),
    /// Winning spatial position of each pooled channel.
    winners: Array2<usize>,
    fc_in: Array2<f64>,
    /// Sigmoid output, needed for its backward pass.
    pub presence: Array2<f64>,
}

impl WeakClassifier {
    pub fn new(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let [w1, w2] = arch.weak_hidden;
        Self {
            convs: [
                Conv2d::new("weak.0", arch.class_count, w1, 3, 2, 1, rng),
                Conv2d::new("weak.1", w1, w2, 3, 2, 1, rng),
            ],
            fc: Linear::new("weak.fc", w2, arch.weak_targets(), rng),
        }
    }

    pub fn class_count(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn target_count(&self) -> usize {
        self.fc.weight.value.shape()[0]
    }

    /// (N, C, H, W) soft masks -> (N, K) presence scores in [0, 1].
    pub fn forward(&self, soft_mask: &Array4<f64>) -> Result<(Array2<f64>, WeakClassifierCache)> {
        if soft_mask.dim().1 != self.class_count() {
            return Err(VmfError::DimensionMismatch {
                context: "weak classifier input".into(),
                expected: format!("{} class channels", self.class_count()),
                actual: format!("{} channels", soft_mask.dim().1),
            });
        }
        let in0 = soft_mask.clone();
        let pre0 = self.convs[0].forward(&in0)?;
        let in1 = silu(&pre0);
        let pre1 = self.convs[1].forward(&in1)?;
        let post1 = silu(&pre1);
        let (_, _, ph, pw) = post1.dim();
        let (fc_in, winners) = global_max_pool(&post1);
        let scores = self.fc.forward(&fc_in);
        let presence = sigmoid(&scores);
        Ok((
            presence.clone(),
            WeakClassifierCache {
                conv_in: [in0, in1],
                pre: [pre0, pre1],
                pooled_size: (ph, pw),
                winners,
                fc_in,
                presence,
            },
        ))
    }

    /// Returns the gradient with respect to the input soft masks.
    pub fn backward(
        &mut self,
        cache: &WeakClassifierCache,
        grad_presence: &Array2<f64>,
    ) -> Result<Array4<f64>> {
        let g = sigmoid_backward(&cache.presence, grad_presence);
        let g = self.fc.backward(&cache.fc_in, &g);
        let (ph, pw) = cache.pooled_size;
        let g = global_max_pool_backward(&g, &cache.winners, ph, pw);
        let g = silu_backward(&cache.pre[1], &g);
        let g = self.convs[1].backward(&cache.conv_in[1], &g)?;
        let g = silu_backward(&cache.pre[0], &g);
        self.convs[0].backward(&cache.conv_in[0], &g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        out.extend(self.fc.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.convs.iter().flat_map(|c| c.params()).collect();
        out.extend(self.fc.params());
        out
    }
}

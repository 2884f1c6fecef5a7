//! Small convolutional building blocks with explicit forward and
//! backward passes.
//!
//! Everything is double precision and deterministic. Layers own their
//! parameters as [`Param`] values (value + gradient buffers); backward
//! passes accumulate into the gradient buffers and return the gradient
//! with respect to the layer input. Callers keep layer inputs alive
//! between forward and backward — nothing is cached implicitly.
//!
//! Activations are smooth (SiLU, sigmoid) and downsampling uses strided
//! convolutions, so network outputs are differentiable everywhere and
//! finite-difference checks hold tightly.

pub mod adam;
pub mod conv;
pub mod ops;

pub use adam::Adam;
pub use conv::Conv2d;
pub use ops::{
    channel_softmax, channel_softmax_backward, concat_channels, global_avg_pool,
    global_avg_pool_backward, global_max_pool, global_max_pool_backward, sigmoid,
    sigmoid_backward, silu, silu_backward, split_channels, upsample2x_nearest,
    upsample2x_nearest_backward, Linear,
};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A named tensor parameter with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    /// He (fan-in) normal initialization: std = sqrt(2 / fan_in).
    pub fn he_init(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            let v: f64 = StandardNormal.sample(rng);
            v * std
        });
        Self::new(name, value)
    }

    /// Uniform init in [-bound, bound], used for final linear layers.
    pub fn uniform_init(
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let value =
            ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..bound));
        Self::new(name, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn he_init_matches_fan_in_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Param::he_init("w", &[64, 32, 3, 3], 32 * 9, &mut rng);
        let n = p.value.len() as f64;
        let mean: f64 = p.value.iter().sum::<f64>() / n;
        let var: f64 = p.value.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / (32.0 * 9.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(
            (var - expected).abs() / expected < 0.15,
            "var {var} vs expected {expected}"
        );
    }

    #[test]
    fn zero_grad_clears_accumulator() {
        let mut p = Param::zeros("b", &[4]);
        p.grad.fill(3.0);
        p.zero_grad();
        assert!(p.grad.iter().all(|v| *v == 0.0));
    }
}

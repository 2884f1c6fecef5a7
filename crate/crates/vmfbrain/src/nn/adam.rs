//! Adam optimizer with per-parameter moment buffers.

use super::Param;
use ndarray::ArrayD;

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
///
/// Moment buffers are allocated lazily on the first step and matched to
/// the parameter list by position, so the caller must pass the same
/// parameters in the same order on every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: Vec<(ArrayD<f64>, ArrayD<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    /// Steps per-parameter count already taken.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter and clears nothing — call
    /// `zero_grad` on the params before the next backward pass.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    (
                        ArrayD::zeros(p.value.raw_dim()),
                        ArrayD::zeros(p.value.raw_dim()),
                    )
                })
                .collect();
        }
        assert_eq!(
            self.moments.len(),
            params.len(),
            "parameter list changed between optimizer steps"
        );
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (param, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            assert_eq!(
                m.shape(),
                param.value.shape(),
                "parameter {} changed shape",
                param.name
            );
            ndarray::Zip::from(&mut param.value)
                .and(&param.grad)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }
}

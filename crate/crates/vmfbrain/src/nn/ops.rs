//! Activations, pooling, resampling and the dense layer.

use super::Param;
use crate::error::{Result, VmfError};
use ndarray::{Array1, Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// SiLU activation x * sigmoid(x), elementwise.
pub fn silu(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v * sigmoid_scalar(v))
}

/// Gradient of [`silu`] given the forward input.
pub fn silu_backward(x: &Array4<f64>, grad_out: &Array4<f64>) -> Array4<f64> {
    let mut grad = grad_out.clone();
    ndarray::Zip::from(&mut grad).and(x).for_each(|g, &v| {
        let s = sigmoid_scalar(v);
        *g *= s * (1.0 + v * (1.0 - s));
    });
    grad
}

/// Elementwise logistic sigmoid over a 2D tensor.
pub fn sigmoid(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(sigmoid_scalar)
}

/// Gradient of [`sigmoid`] given the forward *output*.
pub fn sigmoid_backward(y: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut grad = grad_out.clone();
    ndarray::Zip::from(&mut grad).and(y).for_each(|g, &v| {
        *g *= v * (1.0 - v);
    });
    grad
}

/// Softmax across the channel axis of an NCHW tensor, max-subtracted for
/// stability. Each spatial position's channel vector sums to 1.
pub fn channel_softmax(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = x.clone();
    for s in 0..n {
        for i in 0..h {
            for j in 0..w {
                let mut max = f64::NEG_INFINITY;
                for ch in 0..c {
                    max = max.max(out[[s, ch, i, j]]);
                }
                let mut sum = 0.0;
                for ch in 0..c {
                    let e = (out[[s, ch, i, j]] - max).exp();
                    out[[s, ch, i, j]] = e;
                    sum += e;
                }
                for ch in 0..c {
                    out[[s, ch, i, j]] /= sum;
                }
            }
        }
    }
    out
}

/// Gradient of [`channel_softmax`] given the forward output `y`.
pub fn channel_softmax_backward(y: &Array4<f64>, grad_out: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = y.dim();
    let mut grad = Array4::zeros((n, c, h, w));
    for s in 0..n {
        for i in 0..h {
            for j in 0..w {
                let mut dot = 0.0;
                for ch in 0..c {
                    dot += grad_out[[s, ch, i, j]] * y[[s, ch, i, j]];
                }
                for ch in 0..c {
                    grad[[s, ch, i, j]] = y[[s, ch, i, j]] * (grad_out[[s, ch, i, j]] - dot);
                }
            }
        }
    }
    grad
}

/// Nearest-neighbour 2x spatial upsampling.
pub fn upsample2x_nearest(x: &Array4<f64>) -> Array4<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array4::zeros((n, c, 2 * h, 2 * w));
    for s in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = x[[s, ch, i, j]];
                    out[[s, ch, 2 * i, 2 * j]] = v;
                    out[[s, ch, 2 * i + 1, 2 * j]] = v;
                    out[[s, ch, 2 * i, 2 * j + 1]] = v;
                    out[[s, ch, 2 * i + 1, 2 * j + 1]] = v;
                }
            }
        }
    }
    out
}

/// Gradient of [`upsample2x_nearest`]: sums each 2x2 block.
pub fn upsample2x_nearest_backward(grad_out: &Array4<f64>) -> Array4<f64> {
    let (n, c, h2, w2) = grad_out.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut grad = Array4::zeros((n, c, h, w));
    for s in 0..n {
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    grad[[s, ch, i, j]] = grad_out[[s, ch, 2 * i, 2 * j]]
                        + grad_out[[s, ch, 2 * i + 1, 2 * j]]
                        + grad_out[[s, ch, 2 * i, 2 * j + 1]]
                        + grad_out[[s, ch, 2 * i + 1, 2 * j + 1]];
                }
            }
        }
    }
    grad
}

/// Spatial mean per channel: (N, C, H, W) -> (N, C).
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut out = Array2::zeros((n, c));
    for s in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += x[[s, ch, i, j]];
                }
            }
            out[[s, ch]] = acc * scale;
        }
    }
    out
}

/// Gradient of [`global_avg_pool`], spread uniformly over positions.
pub fn global_avg_pool_backward(
    grad_out: &Array2<f64>,
    h: usize,
    w: usize,
) -> Array4<f64> {
    let (n, c) = grad_out.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut grad = Array4::zeros((n, c, h, w));
    for s in 0..n {
        for ch in 0..c {
            let v = grad_out[[s, ch]] * scale;
            for i in 0..h {
                for j in 0..w {
                    grad[[s, ch, i, j]] = v;
                }
            }
        }
    }
    grad
}

/// Per-channel maximum over all spatial positions: (N, C, H, W) ->
/// (N, C) plus the flat index of each winning position for the backward
/// pass. Ties resolve to the earliest position in row-major order.
///
/// Max pooling keeps small, localized evidence undiluted — the right
/// aggregation when the question is "does this appear anywhere in the
/// slice" rather than "how much of the slice is covered".
pub fn global_max_pool(x: &Array4<f64>) -> (Array2<f64>, Array2<usize>) {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::zeros((n, c));
    let mut winners = Array2::zeros((n, c));
    for s in 0..n {
        for ch in 0..c {
            let mut best = f64::NEG_INFINITY;
            let mut at = 0usize;
            for i in 0..h {
                for j in 0..w {
                    let v = x[[s, ch, i, j]];
                    if v > best {
                        best = v;
                        at = i * w + j;
                    }
                }
            }
            out[[s, ch]] = best;
            winners[[s, ch]] = at;
        }
    }
    (out, winners)
}

/// Gradient of [`global_max_pool`], routed entirely to each winning
/// position.
pub fn global_max_pool_backward(
    grad_out: &Array2<f64>,
    winners: &Array2<usize>,
    h: usize,
    w: usize,
) -> Array4<f64> {
    let (n, c) = grad_out.dim();
    let mut grad = Array4::zeros((n, c, h, w));
    for s in 0..n {
        for ch in 0..c {
            let at = winners[[s, ch]];
            grad[[s, ch, at / w, at % w]] = grad_out[[s, ch]];
        }
    }
    grad
}

/// Scales each row of an (N, C) matrix to unit Euclidean norm (rows
/// whose norm falls below 1e-12 are divided by 1e-12 instead). Returns
/// the scaled rows together with the clamped norms for the backward
/// pass.
///
/// Feeding unit vectors into an affine layer bounds its outputs by the
/// layer's own weight norms, so a downstream sigmoid cannot be pushed
/// into saturation by feature magnitude alone.
pub fn l2_normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let n = x.nrows();
    let mut out = x.clone();
    let mut norms = Array1::zeros(n);
    for s in 0..n {
        let norm = out.row(s).dot(&out.row(s)).sqrt().max(1e-12);
        out.row_mut(s).mapv_inplace(|v| v / norm);
        norms[s] = norm;
    }
    (out, norms)
}

/// Gradient of [`l2_normalize_rows`]: with unit row u obtained from norm
/// r, the Jacobian is (I - u uᵀ) / r, i.e. the incoming gradient minus
/// its projection onto u, scaled by the inverse norm.
pub fn l2_normalize_rows_backward(
    grad_out: &Array2<f64>,
    unit: &Array2<f64>,
    norms: &Array1<f64>,
) -> Array2<f64> {
    let mut grad = grad_out.clone();
    for s in 0..grad.nrows() {
        let u = unit.row(s);
        let along = u.dot(&grad.row(s));
        let inv = 1.0 / norms[s];
        for (g, &uv) in grad.row_mut(s).iter_mut().zip(u.iter()) {
            *g = (*g - along * uv) * inv;
        }
    }
    grad
}

/// Concatenates two NCHW tensors along the channel axis.
pub fn concat_channels(a: &Array4<f64>, b: &Array4<f64>) -> Result<Array4<f64>> {
    let (na, _, ha, wa) = a.dim();
    let (nb, _, hb, wb) = b.dim();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(VmfError::DimensionMismatch {
            context: "concat_channels".into(),
            expected: format!("batch/spatial {na}x{ha}x{wa}"),
            actual: format!("{nb}x{hb}x{wb}"),
        });
    }
    Ok(ndarray::concatenate(Axis(1), &[a.view(), b.view()])
        .expect("matching shapes checked above"))
}

/// Splits a channel-concatenated gradient back into the two parts.
pub fn split_channels(
    grad: &Array4<f64>,
    first: usize,
) -> (Array4<f64>, Array4<f64>) {
    let a = grad.slice(ndarray::s![.., ..first, .., ..]).to_owned();
    let b = grad.slice(ndarray::s![.., first.., .., ..]).to_owned();
    (a, b)
}

/// Fully connected layer y = x W^T + b over (N, in) inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    /// [out, in]
    pub weight: Param,
    /// [out]
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / in_features as f64).sqrt();
        let weight = Param::uniform_init(
            format!("{name}.weight"),
            &[out_features, in_features],
            bound,
            rng,
        );
        let bias = Param::zeros(format!("{name}.bias"), &[out_features]);
        Self { weight, bias }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2d linear weight");
        let mut out = x.dot(&w.t());
        for mut row in out.rows_mut() {
            for (o, b) in row.iter_mut().zip(self.bias.value.iter()) {
                *o += b;
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2d linear weight");
        let grad_x = grad_out.dot(&w);
        let gw = grad_out.t().dot(x);
        let mut wg = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2d linear weight grad");
        wg += &gw;
        for col in 0..grad_out.ncols() {
            let mut acc = 0.0;
            for row in 0..grad_out.nrows() {
                acc += grad_out[[row, col]];
            }
            self.bias.grad[col] += acc;
        }
        grad_x
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

//! 2D convolution via im2col and matrix multiply.

use super::Param;
use crate::error::{Result, VmfError};
use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

/// A 2D convolution over NCHW tensors with square kernels, zero padding
/// and uniform stride.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// [out_channels, in_channels, k, k]
    pub weight: Param,
    /// [out_channels]
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// He-initialized convolution; fan-in is `in_channels * k * k`.
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::he_init(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            rng,
        );
        let bias = Param::zeros(format!("{name}.bias"), &[out_channels]);
        Self {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    /// Spatial output size for an input of `h x w`.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        let padded_h = h + 2 * self.padding;
        let padded_w = w + 2 * self.padding;
        if padded_h < k || padded_w < k {
            return Err(VmfError::DimensionMismatch {
                context: "conv2d input".into(),
                expected: format!("spatial size >= {k} after padding"),
                actual: format!("{padded_h}x{padded_w}"),
            });
        }
        Ok((
            (padded_h - k) / self.stride + 1,
            (padded_w - k) / self.stride + 1,
        ))
    }

    /// Unfolds one sample into a (C*K*K) x (OH*OW) patch matrix.
    fn im2col(&self, x: &Array4<f64>, n: usize, oh: usize, ow: usize) -> Array2<f64> {
        let (_, c, h, w) = x.dim();
        let k = self.kernel();
        let mut cols = Array2::zeros((c * k * k, oh * ow));
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    for oi in 0..oh {
                        let ii = (oi * self.stride + ki) as isize - self.padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * self.stride + kj) as isize - self.padding as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            cols[[row, oi * ow + oj]] = x[[n, ci, ii as usize, jj as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds a patch-matrix gradient back onto the input image.
    fn col2im_add(
        &self,
        grad_cols: &Array2<f64>,
        grad_x: &mut Array4<f64>,
        n: usize,
        oh: usize,
        ow: usize,
    ) {
        let (_, c, h, w) = grad_x.dim();
        let k = self.kernel();
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    for oi in 0..oh {
                        let ii = (oi * self.stride + ki) as isize - self.padding as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * self.stride + kj) as isize - self.padding as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            grad_x[[n, ci, ii as usize, jj as usize]] +=
                                grad_cols[[row, oi * ow + oj]];
                        }
                    }
                }
            }
        }
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let oc = self.out_channels();
        let rest = self.in_channels() * self.kernel() * self.kernel();
        self.weight
            .value
            .view()
            .into_shape_with_order((oc, rest))
            .expect("contiguous conv weight")
            .to_owned()
    }

    pub fn forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels() {
            return Err(VmfError::DimensionMismatch {
                context: format!("conv2d {} input channels", self.weight.name),
                expected: self.in_channels().to_string(),
                actual: c.to_string(),
            });
        }
        let (oh, ow) = self.output_size(h, w)?;
        let oc = self.out_channels();
        let w_mat = self.weight_matrix();
        let mut out = Array4::zeros((n, oc, oh, ow));
        for s in 0..n {
            let cols = self.im2col(x, s, oh, ow);
            let prod = w_mat.dot(&cols); // (oc, oh*ow)
            for co in 0..oc {
                let b = self.bias.value[co];
                for oi in 0..oh {
                    for oj in 0..ow {
                        out[[s, co, oi, oj]] = prod[[co, oi * ow + oj]] + b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    /// `x` must be the same tensor passed to the matching forward call;
    /// patch matrices are recomputed rather than cached.
    pub fn backward(&mut self, x: &Array4<f64>, grad_out: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, _c, h, w) = x.dim();
        let (oh, ow) = self.output_size(h, w)?;
        let oc = self.out_channels();
        debug_assert_eq!(grad_out.dim(), (n, oc, oh, ow));
        let w_mat = self.weight_matrix();
        let rest = self.in_channels() * self.kernel() * self.kernel();
        let mut grad_w_mat = Array2::<f64>::zeros((oc, rest));
        let mut grad_x = Array4::zeros(x.raw_dim());
        for s in 0..n {
            let cols = self.im2col(x, s, oh, ow);
            let mut go = Array2::zeros((oc, oh * ow));
            for co in 0..oc {
                for oi in 0..oh {
                    for oj in 0..ow {
                        go[[co, oi * ow + oj]] = grad_out[[s, co, oi, oj]];
                    }
                }
            }
            grad_w_mat += &go.dot(&cols.t());
            for co in 0..oc {
                let mut acc = 0.0;
                for p in 0..oh * ow {
                    acc += go[[co, p]];
                }
                self.bias.grad[co] += acc;
            }
            let grad_cols = w_mat.t().dot(&go);
            self.col2im_add(&grad_cols, &mut grad_x, s, oh, ow);
        }
        let mut wg = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((oc, rest))
            .expect("contiguous conv weight grad");
        wg += &grad_w_mat;
        Ok(grad_x)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;
    use rand::Rng;
    use rand::SeedableRng;

    fn fd_check_conv(stride: usize, padding: usize, kernel: usize, h: usize, w: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(9 + stride as u64 * 100 + padding as u64);
        let mut conv = Conv2d::new("t", 2, 3, kernel, stride, padding, &mut rng);
        let x = Array4::from_shape_fn((2, 2, h, w), |_| rng.random_range(-1.0..1.0));
        let weights_shape = conv.forward(&x).unwrap().raw_dim();
        let weights = Array4::from_shape_fn(weights_shape, |_| rng.random_range(-1.0..1.0));

        let objective = |conv: &Conv2d, x: &Array4<f64>| -> f64 {
            (&conv.forward(x).unwrap() * &weights).sum()
        };

        let out = conv.forward(&x).unwrap();
        let grad_x = conv.backward(&x, &weights).unwrap();
        drop(out);

        let step = 1e-6;
        // all weight entries
        let n_w = conv.weight.value.len();
        for idx in 0..n_w {
            let orig = conv.weight.value.as_slice().unwrap()[idx];
            conv.weight.value.as_slice_mut().unwrap()[idx] = orig + step;
            let plus = objective(&conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[idx] = orig - step;
            let minus = objective(&conv, &x);
            conv.weight.value.as_slice_mut().unwrap()[idx] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let a = conv.weight.grad.as_slice().unwrap()[idx];
            let denom = fd.abs().max(a.abs()).max(1e-6);
            assert!(
                ((fd - a) / denom).abs() < 1e-5,
                "weight[{idx}] fd {fd} vs analytic {a} (stride {stride}, pad {padding})"
            );
        }
        // all bias entries
        for idx in 0..conv.bias.value.len() {
            let orig = conv.bias.value[idx];
            conv.bias.value[idx] = orig + step;
            let plus = objective(&conv, &x);
            conv.bias.value[idx] = orig - step;
            let minus = objective(&conv, &x);
            conv.bias.value[idx] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let a = conv.bias.grad[idx];
            let denom = fd.abs().max(a.abs()).max(1e-6);
            assert!(((fd - a) / denom).abs() < 1e-5, "bias[{idx}] fd {fd} vs {a}");
        }
        // sampled input entries
        let mut x_var = x.clone();
        for (i, j) in [(0usize, 0usize), (1, 3), (0, 7)] {
            let ii = i.min(1);
            let hh = j % h;
            let orig = x_var[[ii, 0, hh, 0]];
            x_var[[ii, 0, hh, 0]] = orig + step;
            let plus = objective(&conv, &x_var);
            x_var[[ii, 0, hh, 0]] = orig - step;
            let minus = objective(&conv, &x_var);
            x_var[[ii, 0, hh, 0]] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let a = grad_x[[ii, 0, hh, 0]];
            let denom = fd.abs().max(a.abs()).max(1e-6);
            assert!(((fd - a) / denom).abs() < 1e-5, "input fd {fd} vs {a}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_stride1() {
        fd_check_conv(1, 1, 3, 6, 6);
    }

    #[test]
    fn gradients_match_finite_differences_stride2() {
        fd_check_conv(2, 1, 3, 8, 8);
    }

    #[test]
    fn gradients_match_finite_differences_1x1() {
        fd_check_conv(1, 0, 1, 4, 4);
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let conv = Conv2d::new("t", 2, 2, 3, 1, 1, &mut rng);
        let x = Array4::from_shape_fn((1, 2, 5, 5), |_| rng.random_range(-1.0..1.0));
        let out = conv.forward(&x).unwrap();
        assert_eq!(out.dim(), (1, 2, 5, 5));
        // direct nested-loop evaluation
        for co in 0..2 {
            for oi in 0..5 {
                for oj in 0..5 {
                    let mut acc = conv.bias.value[co];
                    for ci in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let ii = oi as isize + ki as isize - 1;
                                let jj = oj as isize + kj as isize - 1;
                                if ii < 0 || ii >= 5 || jj < 0 || jj >= 5 {
                                    continue;
                                }
                                acc += conv.weight.value[[co, ci, ki, kj]]
                                    * x[[0, ci, ii as usize, jj as usize]];
                            }
                        }
                    }
                    assert_abs_diff_eq!(out[[0, co, oi, oj]], acc, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn strided_conv_halves_spatial_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv2d::new("d", 4, 8, 3, 2, 1, &mut rng);
        let x = Array4::zeros((1, 4, 32, 32));
        let out = conv.forward(&x).unwrap();
        assert_eq!(out.dim(), (1, 8, 16, 16));
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conv = Conv2d::new("t", 3, 4, 3, 1, 1, &mut rng);
        let x = Array4::zeros((1, 2, 8, 8));
        assert!(matches!(
            conv.forward(&x),
            Err(VmfError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_input_smaller_than_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let conv = Conv2d::new("t", 1, 1, 5, 1, 0, &mut rng);
        let x = Array4::zeros((1, 1, 3, 3));
        assert!(conv.forward(&x).is_err());
    }
}

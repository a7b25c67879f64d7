use alloc::vec::Vec;

use super::spectral_norm::SpectralState;
use super::init_uniform;
use crate::error::{Error, Result};
use crate::numerics::{math, Rng, Tensor};
use crate::params::{join, Named, NamedMut, Parameterized};

/// Stride-1 1-D convolution with symmetric "same" zero padding.
///
/// Weights are `[C_out, C_in, k]` with odd `k`; the output has the input's
/// length. With spectral normalization enabled the effective kernel is
/// `weight / sigma`, where `sigma` is refreshed explicitly (once per
/// optimizer step) and treated as a constant by the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub spectral: Option<SpectralState>,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, k: usize, bias: bool, spectral: bool, rng: &mut Rng) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::config("conv1d kernel size must be odd"));
        }
        if c_in == 0 || c_out == 0 {
            return Err(Error::ZeroSize);
        }
        let bound = 1.0 / math::sqrt((c_in * k) as f64);
        let weight = init_uniform(rng, &[c_out, c_in, k], bound);
        let bias = bias.then(|| init_uniform(rng, &[c_out], bound));
        let mut layer = Conv1d {
            weight,
            bias,
            spectral: spectral.then(|| SpectralState::new(c_out, rng)),
        };
        layer.refresh_spectral(1);
        Ok(layer)
    }

    pub fn from_weights(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if weight.ndim() != 3 || weight.dim(2) % 2 == 0 {
            return Err(Error::config("conv1d weights must be [C_out, C_in, odd k]"));
        }
        if let Some(b) = &bias {
            b.expect_shape("conv1d bias", &[weight.dim(0)])?;
        }
        Ok(Conv1d {
            weight,
            bias,
            spectral: None,
        })
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    #[inline]
    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    fn weight_scale(&self) -> f64 {
        self.spectral.as_ref().map_or(1.0, |s| 1.0 / s.divisor())
    }

    pub fn refresh_spectral(&mut self, iters: usize) {
        if let Some(st) = &mut self.spectral {
            st.refresh(&self.weight, iters);
        }
    }

    /// Kernel actually applied by `forward`.
    pub fn effective_weight(&self) -> Tensor {
        self.weight.scale(self.weight_scale())
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        if x.ndim() != 2 || x.dim(0) != self.in_channels() {
            return Err(Error::shape(
                "conv1d input",
                &[self.in_channels(), x.shape().last().copied().unwrap_or(0)],
                x.shape(),
            ));
        }
        if x.dim(1) == 0 {
            return Err(Error::ZeroSize);
        }
        Ok(x.dim(1))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let len = self.check_input(x)?;
        let (co, ci, k) = (self.out_channels(), self.in_channels(), self.kernel());
        let pad = (k - 1) / 2;
        let scale = self.weight_scale();
        let w = self.weight.data();
        let mut y = Tensor::zeros(&[co, len]);
        for c in 0..co {
            let yr = y.row_mut(c);
            if let Some(b) = &self.bias {
                yr.fill(b.data()[c]);
            }
            for i in 0..ci {
                let xr = x.row(i);
                for tau in 0..k {
                    let wv = w[(c * ci + i) * k + tau] * scale;
                    if wv == 0.0 {
                        continue;
                    }
                    let (ys, xs, n) = overlap(len, tau, pad);
                    for (yv, &xv) in yr[ys..ys + n].iter_mut().zip(&xr[xs..xs + n]) {
                        *yv += wv * xv;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut Conv1d) -> Result<Tensor> {
        let len = self.check_input(x)?;
        let (co, ci, k) = (self.out_channels(), self.in_channels(), self.kernel());
        grad_out.expect_shape("conv1d grad_out", &[co, len])?;
        grads.weight.expect_shape("conv1d grad buffer", self.weight.shape())?;
        let pad = (k - 1) / 2;
        let scale = self.weight_scale();
        let w = self.weight.data();
        let mut gx = Tensor::zeros(&[ci, len]);
        for c in 0..co {
            let gy = grad_out.row(c);
            if let Some(gb) = &mut grads.bias {
                gb.data_mut()[c] += math::sum(gy);
            }
            for i in 0..ci {
                let xr = x.row(i);
                for tau in 0..k {
                    let (ys, xs, n) = overlap(len, tau, pad);
                    let widx = (c * ci + i) * k + tau;
                    let dw = math::dot(&gy[ys..ys + n], &xr[xs..xs + n]);
                    grads.weight.data_mut()[widx] += dw * scale;
                    let wv = w[widx] * scale;
                    if wv != 0.0 {
                        let gxr = gx.row_mut(i);
                        for (g, &gyv) in gxr[xs..xs + n].iter_mut().zip(&gy[ys..ys + n]) {
                            *g += wv * gyv;
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Output start, input start and run length for kernel tap `tau`.
#[inline]
fn overlap(len: usize, tau: usize, pad: usize) -> (usize, usize, usize) {
    // y[t] uses x[t + tau - pad]
    let shift = tau.abs_diff(pad);
    if shift >= len {
        return (0, 0, 0);
    }
    if tau >= pad {
        let s = tau - pad;
        (0, s, len.saturating_sub(s))
    } else {
        let s = pad - tau;
        (s, 0, len.saturating_sub(s))
    }
}

impl Parameterized for Conv1d {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        out.push((join(prefix, "weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        if let Some(s) = &self.spectral {
            s.collect(prefix, out);
        }
    }

    fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        if let Some(s) = &mut self.spectral {
            s.collect_mut(prefix, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::zeros_like;

    fn single(w: &[f64], b: f64) -> Conv1d {
        Conv1d::from_weights(
            Tensor::new(&[1, 1, w.len()], w.to_vec()).unwrap(),
            Some(Tensor::from_slice(&[b])),
        )
        .unwrap()
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::new(&[1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let c = single(&[0.0, 1.0, 0.0], 0.0);
        assert_eq!(c.forward(&row(&[1., 2., 3.])).unwrap(), row(&[1., 2., 3.]));
    }

    #[test]
    fn box_kernel_zero_padded() {
        let c = single(&[1.0, 1.0, 1.0], 0.0);
        assert_eq!(c.forward(&row(&[1., 2., 3.])).unwrap(), row(&[3., 6., 5.]));
    }

    #[test]
    fn bias_only() {
        let c = single(&[0.0, 0.0, 0.0], 5.0);
        assert_eq!(c.forward(&row(&[1., -2., 3., 9.])).unwrap(), row(&[5.; 4]));
    }

    #[test]
    fn identity_adjoint() {
        let c = single(&[0.0, 1.0, 0.0], 0.0);
        let g = row(&[0.3, -1.0, 2.0]);
        let mut grads = zeros_like(&c);
        let gx = c.backward(&row(&[1., 2., 3.]), &g, &mut grads).unwrap();
        assert_eq!(gx, g);
    }

    #[test]
    fn length_preserved_for_all_odd_kernels() {
        let mut rng = Rng::new(11);
        for k in [1, 3, 5, 7, 9] {
            for len in [1, 2, 3, 8, 17] {
                let c = Conv1d::new(2, 3, k, true, false, &mut rng).unwrap();
                let y = c.forward(&Tensor::full(&[2, len], 0.5)).unwrap();
                assert_eq!(y.shape(), &[3, len]);
            }
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(Conv1d::new(1, 1, 4, true, false, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn channel_mismatch() {
        let c = Conv1d::new(2, 2, 3, true, false, &mut Rng::new(0)).unwrap();
        assert!(matches!(
            c.forward(&Tensor::zeros(&[3, 5])),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}

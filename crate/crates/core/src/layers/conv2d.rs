use alloc::vec::Vec;

use super::init_uniform;
use super::spectral_norm::SpectralState;
use crate::error::{Error, Result};
use crate::numerics::{math, Rng, Tensor};
use crate::params::{join, Named, NamedMut, Parameterized};

/// Kernel, stride and padding shared by [`Conv2d`] and [`Deconv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Geometry {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Geometry {
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent of a strided convolution along one axis.
    fn conv_len(&self, len: usize, axis: usize) -> Option<usize> {
        let (k, s, p) = self.axis(axis);
        (len + 2 * p).checked_sub(k).map(|v| v / s + 1)
    }

    /// Output extent of the transposed convolution along one axis.
    fn deconv_len(&self, len: usize, axis: usize) -> Option<usize> {
        let (k, s, p) = self.axis(axis);
        ((len - 1) * s + k).checked_sub(2 * p).filter(|&v| v > 0)
    }

    fn axis(&self, axis: usize) -> (usize, usize, usize) {
        if axis == 0 {
            (self.kernel.0, self.stride.0, self.padding.0)
        } else {
            (self.kernel.1, self.stride.1, self.padding.1)
        }
    }
}

/// Range of "small grid" indices `i` for which `i * stride + off` lands in
/// `0..big`.
#[inline]
fn tap_range(small: usize, big: usize, stride: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let hi_num = big as isize - 1 - off;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(small);
    (lo.min(hi), hi)
}

/// Visits every (small, big) plane index pair linked by one kernel tap.
///
/// For a convolution the output is the small grid; for the transposed
/// convolution the input is.
#[inline]
fn for_each_tap(
    small: (usize, usize),
    big: (usize, usize),
    g: &Geometry,
    a: usize,
    b: usize,
    mut f: impl FnMut(usize, usize),
) {
    let off_h = a as isize - g.padding.0 as isize;
    let off_w = b as isize - g.padding.1 as isize;
    let (h0, h1) = tap_range(small.0, big.0, g.stride.0, off_h);
    let (w0, w1) = tap_range(small.1, big.1, g.stride.1, off_w);
    for sh in h0..h1 {
        let bh = (sh as isize * g.stride.0 as isize + off_h) as usize;
        for sw in w0..w1 {
            let bw = (sw as isize * g.stride.1 as isize + off_w) as usize;
            f(sh * small.1 + sw, bh * big.1 + bw);
        }
    }
}

fn check_image(x: &Tensor, channels: usize, context: &'static str) -> Result<(usize, usize)> {
    if x.ndim() != 3 || x.dim(0) != channels {
        return Err(Error::shape(context, &[channels, 0, 0], x.shape()));
    }
    if x.dim(1) == 0 || x.dim(2) == 0 {
        return Err(Error::ZeroSize);
    }
    Ok((x.dim(1), x.dim(2)))
}

/// Strided 2-D convolution over `[C, H, W]` images. Weights are
/// `[C_out, C_in, k_h, k_w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub geometry: Geometry,
    pub spectral: Option<SpectralState>,
}

/// Transposed 2-D convolution. Weights are `[C_out, C_in, k_h, k_w]`.
///
/// With the same geometry, `Deconv2d` maps a `Conv2d` output shape back to
/// its input shape whenever the convolution divides evenly.
#[derive(Clone, Debug, PartialEq)]
pub struct Deconv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub geometry: Geometry,
    pub spectral: Option<SpectralState>,
}

macro_rules! conv2d_common {
    ($ty:ident) => {
        impl $ty {
            pub fn new(
                c_in: usize,
                c_out: usize,
                geometry: Geometry,
                bias: bool,
                spectral: bool,
                rng: &mut Rng,
            ) -> Result<Self> {
                if c_in == 0 || c_out == 0 || geometry.kernel.0 == 0 || geometry.kernel.1 == 0 {
                    return Err(Error::ZeroSize);
                }
                if geometry.stride.0 == 0 || geometry.stride.1 == 0 {
                    return Err(Error::config("stride must be positive"));
                }
                let (kh, kw) = geometry.kernel;
                let fan_in = c_in * kh * kw;
                let bound = 1.0 / math::sqrt(fan_in as f64);
                let weight = init_uniform(rng, &[c_out, c_in, kh, kw], bound);
                let bias = bias.then(|| init_uniform(rng, &[c_out], bound));
                let mut layer = $ty {
                    weight,
                    bias,
                    geometry,
                    spectral: spectral.then(|| SpectralState::new(c_out, rng)),
                };
                layer.refresh_spectral(1);
                Ok(layer)
            }

            pub fn from_weights(weight: Tensor, bias: Option<Tensor>, geometry: Geometry) -> Result<Self> {
                if weight.ndim() != 4 || (weight.dim(2), weight.dim(3)) != geometry.kernel {
                    return Err(Error::config("weights must be [C_out, C_in, k_h, k_w]"));
                }
                if let Some(b) = &bias {
                    b.expect_shape("bias", &[weight.dim(0)])?;
                }
                Ok($ty {
                    weight,
                    bias,
                    geometry,
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

            fn weight_scale(&self) -> f64 {
                self.spectral.as_ref().map_or(1.0, |s| 1.0 / s.divisor())
            }

            pub fn refresh_spectral(&mut self, iters: usize) {
                if let Some(st) = &mut self.spectral {
                    st.refresh(&self.weight, iters);
                }
            }
        }

        impl Parameterized for $ty {
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
    };
}

conv2d_common!(Conv2d);
conv2d_common!(Deconv2d);

fn add_bias(y: &mut Tensor, bias: &Option<Tensor>) {
    if let Some(b) = bias {
        for c in 0..y.dim(0) {
            let v = b.data()[c];
            y.row_mut(c).iter_mut().for_each(|x| *x += v);
        }
    }
}

fn bias_grad(grad_out: &Tensor, gb: &mut Option<Tensor>) {
    if let Some(gb) = gb {
        for c in 0..grad_out.dim(0) {
            gb.data_mut()[c] += grad_out.row(c).iter().sum::<f64>();
        }
    }
}

impl Conv2d {
    pub fn output_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = &self.geometry;
        match (g.conv_len(h, 0), g.conv_len(w, 1)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::shape("conv2d input smaller than kernel", &[g.kernel.0, g.kernel.1], &[h, w])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = check_image(x, self.in_channels(), "conv2d input")?;
        let (ho, wo) = self.output_shape(h, w)?;
        let (co, ci) = (self.out_channels(), self.in_channels());
        let (kh, kw) = self.geometry.kernel;
        let scale = self.weight_scale();
        let wt = self.weight.data();
        let mut y = Tensor::zeros(&[co, ho, wo]);
        for o in 0..co {
            let yr = y.row_mut(o);
            for i in 0..ci {
                let xr = x.row(i);
                for a in 0..kh {
                    for b in 0..kw {
                        let wv = wt[((o * ci + i) * kh + a) * kw + b] * scale;
                        for_each_tap((ho, wo), (h, w), &self.geometry, a, b, |s, bg| {
                            yr[s] += wv * xr[bg];
                        });
                    }
                }
            }
        }
        add_bias(&mut y, &self.bias);
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut Conv2d) -> Result<Tensor> {
        let (h, w) = check_image(x, self.in_channels(), "conv2d input")?;
        let (ho, wo) = self.output_shape(h, w)?;
        let (co, ci) = (self.out_channels(), self.in_channels());
        grad_out.expect_shape("conv2d grad_out", &[co, ho, wo])?;
        grads.weight.expect_shape("conv2d grad buffer", self.weight.shape())?;
        let (kh, kw) = self.geometry.kernel;
        let scale = self.weight_scale();
        let wt = self.weight.data();
        let mut gx = Tensor::zeros(&[ci, h, w]);
        for o in 0..co {
            let gy = grad_out.row(o);
            for i in 0..ci {
                let xr = x.row(i);
                for a in 0..kh {
                    for b in 0..kw {
                        let idx = ((o * ci + i) * kh + a) * kw + b;
                        let wv = wt[idx] * scale;
                        let mut dw = 0.0;
                        let gxr = gx.row_mut(i);
                        for_each_tap((ho, wo), (h, w), &self.geometry, a, b, |s, bg| {
                            dw += gy[s] * xr[bg];
                            gxr[bg] += wv * gy[s];
                        });
                        grads.weight.data_mut()[idx] += dw * scale;
                    }
                }
            }
        }
        bias_grad(grad_out, &mut grads.bias);
        Ok(gx)
    }
}

impl Deconv2d {
    pub fn output_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = &self.geometry;
        match (g.deconv_len(h, 0), g.deconv_len(w, 1)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::shape("deconv2d output would be empty", &[1, 1], &[h, w])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = check_image(x, self.in_channels(), "deconv2d input")?;
        let (ho, wo) = self.output_shape(h, w)?;
        let (co, ci) = (self.out_channels(), self.in_channels());
        let (kh, kw) = self.geometry.kernel;
        let scale = self.weight_scale();
        let wt = self.weight.data();
        let mut y = Tensor::zeros(&[co, ho, wo]);
        for o in 0..co {
            let yr = y.row_mut(o);
            for i in 0..ci {
                let xr = x.row(i);
                for a in 0..kh {
                    for b in 0..kw {
                        let wv = wt[((o * ci + i) * kh + a) * kw + b] * scale;
                        for_each_tap((h, w), (ho, wo), &self.geometry, a, b, |s, bg| {
                            yr[bg] += wv * xr[s];
                        });
                    }
                }
            }
        }
        add_bias(&mut y, &self.bias);
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut Deconv2d) -> Result<Tensor> {
        let (h, w) = check_image(x, self.in_channels(), "deconv2d input")?;
        let (ho, wo) = self.output_shape(h, w)?;
        let (co, ci) = (self.out_channels(), self.in_channels());
        grad_out.expect_shape("deconv2d grad_out", &[co, ho, wo])?;
        grads.weight.expect_shape("deconv2d grad buffer", self.weight.shape())?;
        let (kh, kw) = self.geometry.kernel;
        let scale = self.weight_scale();
        let wt = self.weight.data();
        let mut gx = Tensor::zeros(&[ci, h, w]);
        for o in 0..co {
            let gy = grad_out.row(o);
            for i in 0..ci {
                let xr = x.row(i);
                for a in 0..kh {
                    for b in 0..kw {
                        let idx = ((o * ci + i) * kh + a) * kw + b;
                        let wv = wt[idx] * scale;
                        let mut dw = 0.0;
                        let gxr = gx.row_mut(i);
                        for_each_tap((h, w), (ho, wo), &self.geometry, a, b, |s, bg| {
                            dw += xr[s] * gy[bg];
                            gxr[s] += wv * gy[bg];
                        });
                        grads.weight.data_mut()[idx] += dw * scale;
                    }
                }
            }
        }
        bias_grad(grad_out, &mut grads.bias);
        Ok(gx)
    }
}

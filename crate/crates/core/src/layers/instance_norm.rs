use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{math, Tensor};
use crate::params::{join, Named, NamedMut, Parameterized};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-channel standardization over all trailing axes of one sample,
/// followed by an optional per-channel scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceNorm {
    pub eps: f64,
    pub gamma: Option<Tensor>,
    pub beta: Option<Tensor>,
}

impl InstanceNorm {
    pub fn new(channels: usize, affine: bool) -> Self {
        InstanceNorm {
            eps: INSTANCE_NORM_EPS,
            gamma: affine.then(|| Tensor::full(&[channels], 1.0)),
            beta: affine.then(|| Tensor::zeros(&[channels])),
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.ndim() < 2 || x.dim(0) == 0 || x.len() == 0 {
            return Err(Error::ZeroSize);
        }
        if let Some(g) = &self.gamma {
            if g.len() != x.dim(0) {
                return Err(Error::shape("instance norm channels", g.shape(), &x.shape()[..1]));
            }
        }
        Ok(())
    }

    fn stats(row: &[f64], eps: f64) -> (f64, f64) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, 1.0 / math::sqrt(var + eps))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut y = x.clone();
        for c in 0..x.dim(0) {
            let (mean, inv) = Self::stats(x.row(c), self.eps);
            let g = self.gamma.as_ref().map_or(1.0, |g| g.data()[c]);
            let b = self.beta.as_ref().map_or(0.0, |b| b.data()[c]);
            for v in y.row_mut(c) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut InstanceNorm) -> Result<Tensor> {
        self.check(x)?;
        grad_out.same_shape(x, "instance norm grad_out")?;
        let mut gx = Tensor::zeros(x.shape());
        for c in 0..x.dim(0) {
            let xr = x.row(c);
            let gy = grad_out.row(c);
            let n = xr.len() as f64;
            let (mean, inv) = Self::stats(xr, self.eps);
            let g = self.gamma.as_ref().map_or(1.0, |g| g.data()[c]);
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for (&xv, &dy) in xr.iter().zip(gy) {
                let xhat = (xv - mean) * inv;
                let dxhat = dy * g;
                sum_g += dxhat;
                sum_gx += dxhat * xhat;
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
            if let Some(gg) = &mut grads.gamma {
                gg.data_mut()[c] += sum_dy_xhat;
            }
            if let Some(gb) = &mut grads.beta {
                gb.data_mut()[c] += sum_dy;
            }
            for ((out, &xv), &dy) in gx.row_mut(c).iter_mut().zip(xr).zip(gy) {
                let xhat = (xv - mean) * inv;
                *out = inv * (dy * g - sum_g / n - xhat * sum_gx / n);
            }
        }
        Ok(gx)
    }
}

impl Parameterized for InstanceNorm {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        if let (Some(g), Some(b)) = (&self.gamma, &self.beta) {
            out.push((join(prefix, "gamma"), g));
            out.push((join(prefix, "beta"), b));
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        if let (Some(g), Some(b)) = (&mut self.gamma, &mut self.beta) {
            out.push((join(prefix, "gamma"), g));
            out.push((join(prefix, "beta"), b));
        }
    }
}

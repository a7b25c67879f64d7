//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer implements [`Layer`]: `forward` is pure, and `backward`
//! takes the forward input plus the output gradient, accumulates parameter
//! gradients into a gradient container of the same type (see
//! [`crate::params::zeros_like`]) and returns the input gradient.
//!
//! Weights are initialized uniformly in `±1/sqrt(fan_in)`, biases the same.

mod activation;
mod conv1d;
mod conv2d;
mod instance_norm;
mod spectral_norm;

use alloc::vec::Vec;

pub use activation::{sigmoid, ActivationKind, LEAKY_SLOPE};
pub use conv1d::Conv1d;
pub use conv2d::{Conv2d, Deconv2d, Geometry};
pub use instance_norm::{InstanceNorm, INSTANCE_NORM_EPS};
pub use spectral_norm::{spectral_normalize_weights, SpectralState, SIGMA_FLOOR};

use crate::error::Result;
use crate::numerics::{Rng, Tensor};
use crate::params::{Named, NamedMut, Parameterized};

pub trait Layer: Parameterized + Clone {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor>;
}

/// Normalization applied inside the mask estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormKind {
    /// Divide each convolution kernel by its power-iteration singular value.
    #[default]
    Spectral,
    /// Per-channel standardization with affine parameters.
    Instance,
    None,
}

pub(crate) fn init_uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(shape, data).expect("shape product matches data")
}

/// Parameter-free activation as a standalone layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activation(pub ActivationKind);

impl Parameterized for Activation {
    fn collect_params<'a>(&'a self, _prefix: &str, _out: &mut Vec<Named<'a>>) {}
    fn collect_params_mut<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<NamedMut<'a>>) {}
}

impl Layer for Activation {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.0.apply(x))
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor, _grads: &mut Self) -> Result<Tensor> {
        self.0.backward(x, grad_out)
    }
}

macro_rules! impl_layer {
    ($($ty:ty),*) => {$(
        impl Layer for $ty {
            fn forward(&self, x: &Tensor) -> Result<Tensor> {
                <$ty>::forward(self, x)
            }

            fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut Self) -> Result<Tensor> {
                <$ty>::backward(self, x, grad_out, grads)
            }
        }
    )*};
}

impl_layer!(Conv1d, Conv2d, Deconv2d, InstanceNorm);

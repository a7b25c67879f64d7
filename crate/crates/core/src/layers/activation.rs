use crate::error::Result;
use crate::numerics::{math, Tensor};

/// Default negative slope for leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    LeakyRelu(f64),
    Sigmoid,
    Identity,
}

impl Default for ActivationKind {
    fn default() -> Self {
        ActivationKind::LeakyRelu(LEAKY_SLOPE)
    }
}

/// Logistic function, kept strictly inside `(0, 1)` for every finite input.
#[inline]
pub fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + math::exp(-v))
    } else {
        let e = math::exp(v);
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0f64.next_down())
}

impl ActivationKind {
    #[inline]
    pub fn eval(self, v: f64) -> f64 {
        match self {
            ActivationKind::LeakyRelu(slope) => {
                if v >= 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            ActivationKind::Sigmoid => sigmoid(v),
            ActivationKind::Identity => v,
        }
    }

    /// Derivative at the pre-activation value `v`.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            ActivationKind::LeakyRelu(slope) => {
                if v >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
            ActivationKind::Identity => 1.0,
        }
    }

    pub fn apply(self, x: &Tensor) -> Tensor {
        if self == ActivationKind::Identity {
            return x.clone();
        }
        x.map(|v| self.eval(v))
    }

    /// Input gradient given the forward input `x`.
    pub fn backward(self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        x.zip_map(grad_out, |v, g| g * self.derivative(v))
    }
}

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{ActivationKind, Conv1d, LEAKY_SLOPE};
use crate::numerics::{Rng, Tensor};
use crate::params::{join, Named, NamedMut, Parameterized};

/// Layout of one lifting block: a stack of `depth` "same"-length 1-D
/// convolutions with an activation between consecutive convolutions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSpec {
    pub kernel: usize,
    pub depth: usize,
    /// Hidden width as a multiple of the branch channel count.
    pub hidden_mult: usize,
    pub spectral_norm: bool,
    pub slope: f64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            kernel: 3,
            depth: 2,
            hidden_mult: 1,
            spectral_norm: false,
            slope: LEAKY_SLOPE,
        }
    }
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::config("block kernel must be odd"));
        }
        if self.depth == 0 || self.hidden_mult == 0 {
            return Err(Error::config("block depth and hidden_mult must be positive"));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::config("leaky slope must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// The residual function `F_j` of one coupling stage, `[C, L] -> [C, L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub convs: Vec<Conv1d>,
    pub activation: ActivationKind,
}

impl Block {
    /// `linear` drops biases and activations, leaving a linear map.
    pub fn new(channels: usize, spec: &BlockSpec, linear: bool, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let hidden = channels * spec.hidden_mult;
        let mut convs = Vec::with_capacity(spec.depth);
        for i in 0..spec.depth {
            let c_in = if i == 0 { channels } else { hidden };
            let c_out = if i + 1 == spec.depth { channels } else { hidden };
            convs.push(Conv1d::new(c_in, c_out, spec.kernel, !linear, spec.spectral_norm, rng)?);
        }
        let activation = if linear {
            ActivationKind::Identity
        } else {
            ActivationKind::LeakyRelu(spec.slope)
        };
        Ok(Block { convs, activation })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.convs[0].forward(x)?;
        for conv in &self.convs[1..] {
            h = conv.forward(&self.activation.apply(&h))?;
        }
        Ok(h)
    }

    /// Recomputes the intermediate activations from `x`, accumulates
    /// parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut Block) -> Result<Tensor> {
        let n = self.convs.len();
        // pre-activations of all but the last conv
        let mut pre = Vec::with_capacity(n.saturating_sub(1));
        let mut inputs = Vec::with_capacity(n);
        inputs.push(x.clone());
        for (i, conv) in self.convs[..n - 1].iter().enumerate() {
            let h = conv.forward(&inputs[i])?;
            inputs.push(self.activation.apply(&h));
            pre.push(h);
        }
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            g = self.convs[i].backward(&inputs[i], &g, &mut grads.convs[i])?;
            if i > 0 {
                g = self.activation.backward(&pre[i - 1], &g)?;
            }
        }
        Ok(g)
    }

    pub fn refresh_spectral(&mut self, iters: usize) {
        self.convs.iter_mut().for_each(|c| c.refresh_spectral(iters));
    }
}

impl Parameterized for Block {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.collect_params(&join(prefix, &format!("conv{i}")), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.collect_params_mut(&join(prefix, &format!("conv{i}")), out);
        }
    }

    fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.collect_buffers(&join(prefix, &format!("conv{i}")), out);
        }
    }

    fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.collect_buffers_mut(&join(prefix, &format!("conv{i}")), out);
        }
    }
}

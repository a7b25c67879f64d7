use alloc::format;
use alloc::vec::Vec;

use super::block::{Block, BlockSpec};
use super::ops::{
    coupling_forward, coupling_inverse, invertible_downsample, invertible_upsample, split,
    split_inverse, BranchPair,
};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::params::{join, Named, NamedMut, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftingConfig {
    /// Number of lifting stages `J`.
    pub stages: usize,
    /// Branch channel count of the first stage, `N_1`.
    pub base_channels: usize,
    pub block: BlockSpec,
    /// Strip biases and activations from every block.
    pub linear: bool,
}

impl Default for LiftingConfig {
    fn default() -> Self {
        LiftingConfig {
            stages: 6,
            base_channels: 4,
            block: BlockSpec::default(),
            linear: false,
        }
    }
}

impl LiftingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.stages > 24 {
            return Err(Error::config("lifting stages must be in 1..=24"));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be positive"));
        }
        self.block.validate()
    }

    /// Branch channels `N_j = N_1 * 2^(j-1)` of stage `j` (1-based).
    pub fn stage_channels(&self, j: usize) -> usize {
        self.base_channels << (j - 1)
    }

    /// Input lengths must be multiples of this (`2^J`).
    pub fn length_multiple(&self) -> usize {
        1 << self.stages
    }

    /// `[2 N_J, T / 2^J]`.
    pub fn feature_shape(&self, len: usize) -> [usize; 2] {
        [2 * self.stage_channels(self.stages), len >> self.stages]
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let m = self.length_multiple();
        if len == 0 || len % m != 0 {
            return Err(Error::Indivisible { len, multiple: m });
        }
        Ok(())
    }
}

/// Merged transform output `Φ`, `[2 N_J, T / 2^J]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TfFeature {
    pub phi: Tensor,
}

impl TfFeature {
    pub fn channels(&self) -> usize {
        self.phi.dim(0)
    }

    pub fn frames(&self) -> usize {
        self.phi.dim(1)
    }
}

/// Inputs seen by each block `F_j` during one evaluation, kept for the
/// backward pass. Entry `j - 1` belongs to stage `j`.
#[derive(Clone, Debug)]
pub struct Trace {
    block_inputs: Vec<Tensor>,
}

/// The invertible transform: split, `J` coupling stages (with invertible
/// down-sampling before every stage but the first) and merge. The inverse
/// runs the same blocks backwards, so both directions share one parameter
/// set.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftingTransform {
    pub config: LiftingConfig,
    pub blocks: Vec<Block>,
}

impl LiftingTransform {
    pub fn new(config: LiftingConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let blocks = (1..=config.stages)
            .map(|j| Block::new(config.stage_channels(j), &config.block, config.linear, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(LiftingTransform { config, blocks })
    }

    pub fn forward(&self, x: &Tensor) -> Result<TfFeature> {
        self.run_forward(x, None)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<(TfFeature, Trace)> {
        let mut trace = Trace {
            block_inputs: Vec::with_capacity(self.config.stages),
        };
        let phi = self.run_forward(x, Some(&mut trace))?;
        Ok((phi, trace))
    }

    fn run_forward(&self, x: &Tensor, mut trace: Option<&mut Trace>) -> Result<TfFeature> {
        if x.ndim() != 1 {
            return Err(Error::shape("transform input", &[x.len()], x.shape()));
        }
        self.config.check_len(x.len())?;
        let mut p = split(x, self.config.base_channels)?;
        for (j, block) in self.blocks.iter().enumerate() {
            if j > 0 {
                p = p.map(invertible_downsample)?;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.block_inputs.push(p.b.clone());
            }
            p = coupling_forward(&p, |v| block.forward(v))?;
        }
        Ok(TfFeature { phi: p.merge() })
    }

    fn check_feature(&self, phi: &Tensor) -> Result<()> {
        let want = 2 * self.config.stage_channels(self.config.stages);
        if phi.ndim() != 2 || phi.dim(0) != want || phi.dim(1) == 0 {
            let frames = phi.shape().get(1).copied().unwrap_or(0);
            return Err(Error::shape("transform feature", &[want, frames], phi.shape()));
        }
        Ok(())
    }

    pub fn inverse(&self, phi: &Tensor) -> Result<Tensor> {
        self.run_inverse(phi, None)
    }

    pub fn inverse_traced(&self, phi: &Tensor) -> Result<(Tensor, Trace)> {
        let mut trace = Trace {
            block_inputs: Vec::with_capacity(self.config.stages),
        };
        let x = self.run_inverse(phi, Some(&mut trace))?;
        trace.block_inputs.reverse();
        Ok((x, trace))
    }

    fn run_inverse(&self, phi: &Tensor, mut trace: Option<&mut Trace>) -> Result<Tensor> {
        self.check_feature(phi)?;
        let mut p = BranchPair::unmerge(phi)?;
        for (j, block) in self.blocks.iter().enumerate().rev() {
            if let Some(t) = trace.as_deref_mut() {
                t.block_inputs.push(p.a.clone());
            }
            p = coupling_inverse(&p, |v| block.forward(v))?;
            if j > 0 {
                p = p.map(invertible_upsample)?;
            }
        }
        split_inverse(&p)
    }

    /// Adjoint of [`forward`](Self::forward): maps `dL/dΦ` to `dL/dx` and
    /// accumulates block parameter gradients into `grads`.
    pub fn backward_forward(&self, trace: &Trace, grad_phi: &Tensor, grads: &mut LiftingTransform) -> Result<Tensor> {
        self.check_feature(grad_phi)?;
        let mut g = BranchPair::unmerge(grad_phi)?;
        for j in (0..self.blocks.len()).rev() {
            // a' = b, b' = a + F(b)
            let fb = self.blocks[j].backward(&trace.block_inputs[j], &g.b, &mut grads.blocks[j])?;
            let ga = g.b;
            let gb = g.a.add(&fb)?;
            g = BranchPair { a: ga, b: gb };
            if j > 0 {
                g = g.map(invertible_upsample)?;
            }
        }
        // adjoint of split: keep channel 0 of each branch, interleaved
        split_inverse(&g)
    }

    /// Adjoint of [`inverse`](Self::inverse): maps `dL/dx` to `dL/dΦ` and
    /// accumulates block parameter gradients into `grads`.
    pub fn backward_inverse(&self, trace: &Trace, grad_x: &Tensor, grads: &mut LiftingTransform) -> Result<Tensor> {
        let mut g = split(grad_x, self.config.base_channels)?;
        for j in 0..self.blocks.len() {
            if j > 0 {
                g = g.map(invertible_downsample)?;
            }
            // a = b' - F(a'), b = a'
            let neg = g.a.scale(-1.0);
            let fa = self.blocks[j].backward(&trace.block_inputs[j], &neg, &mut grads.blocks[j])?;
            let ga_prime = g.b.add(&fa)?;
            let gb_prime = g.a;
            g = BranchPair {
                a: ga_prime,
                b: gb_prime,
            };
        }
        Ok(g.merge())
    }

    pub fn refresh_spectral(&mut self, iters: usize) {
        self.blocks.iter_mut().for_each(|b| b.refresh_spectral(iters));
    }
}

impl Parameterized for LiftingTransform {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        for (j, b) in self.blocks.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("stage{}", j + 1)), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        for (j, b) in self.blocks.iter_mut().enumerate() {
            b.collect_params_mut(&join(prefix, &format!("stage{}", j + 1)), out);
        }
    }

    fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        for (j, b) in self.blocks.iter().enumerate() {
            b.collect_buffers(&join(prefix, &format!("stage{}", j + 1)), out);
        }
    }

    fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        for (j, b) in self.blocks.iter_mut().enumerate() {
            b.collect_buffers_mut(&join(prefix, &format!("stage{}", j + 1)), out);
        }
    }
}

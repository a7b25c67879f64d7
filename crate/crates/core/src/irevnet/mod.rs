//! The i-RevNet lifting transform and its exact inverse.
//!
//! Forward: split the waveform into even/odd branches (zero-padded to `N_1`
//! channels), then for `j = 1..=J` down-sample both branches (except at
//! `j = 1`) and apply the additive coupling `(a, b) -> (b, a + F_j(b))`;
//! finally concatenate the branches along channels. The inverse undoes each
//! step with the same blocks, so reconstruction is exact whatever the blocks
//! compute.

mod block;
mod ops;
mod transform;

pub use block::{Block, BlockSpec};
pub use ops::{
    coupling_forward, coupling_inverse, invertible_downsample, invertible_upsample, split,
    split_inverse, BranchPair,
};
pub use transform::{LiftingConfig, LiftingTransform, TfFeature, Trace};

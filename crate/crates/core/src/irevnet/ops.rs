//! Lossless reshapes and the additive coupling step.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// The two lifting branches. Both always share one `[C, L]` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchPair {
    pub a: Tensor,
    pub b: Tensor,
}

impl BranchPair {
    pub fn new(a: Tensor, b: Tensor) -> Result<Self> {
        if a.ndim() != 2 {
            return Err(Error::shape("branch pair", &[0, 0], a.shape()));
        }
        b.same_shape(&a, "branch pair")?;
        Ok(BranchPair { a, b })
    }

    /// Channel concatenation `[a; b]`.
    pub fn merge(&self) -> Tensor {
        Tensor::concat_rows(&[&self.a, &self.b]).expect("branches share shape")
    }

    /// Splits a merged feature back into its two halves.
    pub fn unmerge(phi: &Tensor) -> Result<Self> {
        if phi.ndim() != 2 {
            return Err(Error::shape("merged feature", &[0, 0], phi.shape()));
        }
        let c = phi.dim(0);
        if c % 2 != 0 {
            return Err(Error::OddChannels(c));
        }
        let mut parts = phi.split_rows(&[c / 2, c / 2])?;
        let b = parts.pop().unwrap();
        let a = parts.pop().unwrap();
        Ok(BranchPair { a, b })
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Self> {
        Ok(BranchPair {
            a: f(&self.a)?,
            b: f(&self.b)?,
        })
    }
}

/// Even-index samples go to channel 0 of `a`, odd-index samples to channel 0
/// of `b`; channels `1..n_channels` of both branches are zero.
pub fn split(x: &Tensor, n_channels: usize) -> Result<BranchPair> {
    if x.ndim() != 1 {
        return Err(Error::shape("split input", &[x.len()], x.shape()));
    }
    let t = x.len();
    if t < 2 || t % 2 != 0 {
        return Err(Error::OddLength(t));
    }
    if n_channels == 0 {
        return Err(Error::ZeroSize);
    }
    let half = t / 2;
    let mut a = Tensor::zeros(&[n_channels, half]);
    let mut b = Tensor::zeros(&[n_channels, half]);
    for (i, pair) in x.data().chunks_exact(2).enumerate() {
        a.data_mut()[i] = pair[0];
        b.data_mut()[i] = pair[1];
    }
    Ok(BranchPair { a, b })
}

/// Interleaves channel 0 of both branches; the zero-pad channels are
/// ignored.
pub fn split_inverse(p: &BranchPair) -> Result<Tensor> {
    p.b.same_shape(&p.a, "split_inverse")?;
    if p.a.ndim() != 2 || p.a.dim(0) == 0 {
        return Err(Error::shape("split_inverse", &[1, 0], p.a.shape()));
    }
    let (ra, rb) = (p.a.row(0), p.b.row(0));
    let mut out = Vec::with_capacity(2 * ra.len());
    for (&e, &o) in ra.iter().zip(rb) {
        out.push(e);
        out.push(o);
    }
    Ok(Tensor::from_vec(out))
}

/// `(C, L) -> (2C, L/2)`: `out[2c][t] = x[c][2t]`, `out[2c+1][t] = x[c][2t+1]`.
pub fn invertible_downsample(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 {
        return Err(Error::shape("downsample input", &[0, 0], x.shape()));
    }
    let (c, l) = (x.dim(0), x.dim(1));
    if l % 2 != 0 {
        return Err(Error::OddLength(l));
    }
    let half = l / 2;
    let mut out = Tensor::zeros(&[2 * c, half]);
    let o = out.data_mut();
    for ch in 0..c {
        let row = x.row(ch);
        let (even, odd) = o[2 * ch * half..(2 * ch + 2) * half].split_at_mut(half);
        for (t, pair) in row.chunks_exact(2).enumerate() {
            even[t] = pair[0];
            odd[t] = pair[1];
        }
    }
    Ok(out)
}

/// Exact inverse of [`invertible_downsample`]: `(2C, L) -> (C, 2L)`.
pub fn invertible_upsample(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 {
        return Err(Error::shape("upsample input", &[0, 0], x.shape()));
    }
    let (c2, l) = (x.dim(0), x.dim(1));
    if c2 % 2 != 0 {
        return Err(Error::OddChannels(c2));
    }
    let mut out = Tensor::zeros(&[c2 / 2, 2 * l]);
    for ch in 0..c2 / 2 {
        let (even, odd) = (x.row(2 * ch), x.row(2 * ch + 1));
        let row = out.row_mut(ch);
        for (t, pair) in row.chunks_exact_mut(2).enumerate() {
            pair[0] = even[t];
            pair[1] = odd[t];
        }
    }
    Ok(out)
}

fn checked_apply(f: impl Fn(&Tensor) -> Result<Tensor>, x: &Tensor) -> Result<Tensor> {
    let y = f(x)?;
    y.same_shape(x, "coupling block output")?;
    Ok(y)
}

/// `(a, b) -> (b, a + F(b))`.
pub fn coupling_forward(p: &BranchPair, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<BranchPair> {
    let fb = checked_apply(f, &p.b)?;
    Ok(BranchPair {
        a: p.b.clone(),
        b: p.a.add(&fb)?,
    })
}

/// `(a', b') -> (b' - F(a'), a')`, reusing the same `F`.
pub fn coupling_inverse(p: &BranchPair, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<BranchPair> {
    let fa = checked_apply(f, &p.a)?;
    Ok(BranchPair {
        a: p.b.sub(&fa)?,
        b: p.a.clone(),
    })
}

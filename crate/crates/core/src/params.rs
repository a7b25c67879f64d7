//! Named parameter traversal shared by layers, transforms and pipelines.
//!
//! A model doubles as its own gradient container: [`zeros_like`] clones the
//! structure with every trainable tensor zeroed, backward passes accumulate
//! into it, and the optimizer walks model and gradient in lockstep.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub type Named<'a> = (String, &'a Tensor);
pub type NamedMut<'a> = (String, &'a mut Tensor);

pub trait Parameterized {
    /// Trainable tensors, in a fixed traversal order.
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>);
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>);

    /// Non-trainable state that still belongs in a checkpoint
    /// (power-iteration vectors and their singular-value estimates).
    fn collect_buffers<'a>(&'a self, _prefix: &str, _out: &mut Vec<Named<'a>>) {}
    fn collect_buffers_mut<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<NamedMut<'a>>) {}

    fn params(&self) -> Vec<Named<'_>> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<NamedMut<'_>> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }

    fn buffers(&self) -> Vec<Named<'_>> {
        let mut out = Vec::new();
        self.collect_buffers("", &mut out);
        out
    }

    fn buffers_mut(&mut self) -> Vec<NamedMut<'_>> {
        let mut out = Vec::new();
        self.collect_buffers_mut("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Joins a prefix and a child name with `/`.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}/{name}")
    }
}

/// Structural clone with every trainable tensor set to zero.
pub fn zeros_like<T: Parameterized + Clone>(model: &T) -> T {
    let mut g = model.clone();
    for (_, t) in g.params_mut() {
        t.fill(0.0);
    }
    g
}

/// `dst += c * src` over matching parameter lists.
pub fn accumulate<T: Parameterized>(dst: &mut T, src: &T, c: f64) -> Result<()> {
    let src = src.params();
    let mut dst = dst.params_mut();
    if src.len() != dst.len() {
        return Err(Error::config("gradient structures differ"));
    }
    for ((_, d), (_, s)) in dst.iter_mut().zip(src.iter()) {
        d.add_scaled(s, c)?;
    }
    Ok(())
}

/// Flat copy of every trainable value, in traversal order.
pub fn flatten<T: Parameterized>(model: &T) -> Vec<f64> {
    let mut v = Vec::with_capacity(model.param_count());
    for (_, t) in model.params() {
        v.extend_from_slice(t.data());
    }
    v
}

/// Inverse of [`flatten`].
pub fn unflatten<T: Parameterized>(model: &mut T, values: &[f64]) -> Result<()> {
    let mut at = 0;
    for (_, t) in model.params_mut() {
        let n = t.len();
        let chunk = values
            .get(at..at + n)
            .ok_or_else(|| Error::config("flat parameter vector too short"))?;
        t.data_mut().copy_from_slice(chunk);
        at += n;
    }
    if at != values.len() {
        return Err(Error::config("flat parameter vector too long"));
    }
    Ok(())
}

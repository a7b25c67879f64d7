use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{math, Tensor};
use crate::params::Parameterized;

pub const DEFAULT_LR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("Adam eps must be positive"));
        }
        Ok(())
    }
}

/// Moment estimates for every parameter of one model, in traversal order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<T: Parameterized>(config: AdamConfig, model: &T) -> Self {
        let zeros: Vec<Tensor> = model.params().iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        AdamState {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of the parameters selected by `filter`.
///
/// All selected gradients are checked before anything is modified, so a
/// non-finite gradient leaves model and state untouched.
pub fn adam_step<T: Parameterized>(
    state: &mut AdamState,
    model: &mut T,
    grads: &T,
    filter: impl Fn(&str) -> bool,
) -> Result<()> {
    let g = grads.params();
    let mut p = model.params_mut();
    if g.len() != p.len() || p.len() != state.m.len() {
        return Err(Error::config("optimizer state does not match the model"));
    }
    for ((name, gt), (_, pt)) in g.iter().zip(p.iter()) {
        gt.same_shape(pt, "gradient")?;
        if filter(name) && !gt.all_finite() {
            return Err(Error::NonFiniteGradient(String::from(name.as_str())));
        }
    }
    state.t += 1;
    let c = state.config;
    let bc1 = 1.0 - math::powi(c.beta1, state.t as i32);
    let bc2 = 1.0 - math::powi(c.beta2, state.t as i32);
    for (i, ((name, gt), (_, pt))) in g.iter().zip(p.iter_mut()).enumerate() {
        if !filter(name) {
            continue;
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((w, &gv), mv), vv) in pt.data_mut().iter_mut().zip(gt.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = c.beta1 * *mv + (1.0 - c.beta1) * gv;
            *vv = c.beta2 * *vv + (1.0 - c.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *w -= c.lr * m_hat / (math::sqrt(v_hat) + c.eps);
        }
    }
    Ok(())
}

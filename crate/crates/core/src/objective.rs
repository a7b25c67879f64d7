//! SDR, the clipped-SDR training loss and SI-SDR evaluation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{math, Tensor};

pub const DEFAULT_BETA: f64 = 20.0;
pub const DEFAULT_EPS: f64 = 1e-8;
/// SI-SDR values are clamped to `[-SI_SDR_CAP, SI_SDR_CAP]` dB.
pub const SI_SDR_CAP: f64 = 100.0;

const DB: f64 = 10.0 / math::LN_10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub beta_clip: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta_clip: DEFAULT_BETA,
            eps: DEFAULT_EPS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_clip > 0.0 && self.beta_clip.is_finite()) {
            return Err(Error::config("beta_clip must be positive"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("loss eps must be positive"));
        }
        Ok(())
    }
}

fn check_pair(reference: &Tensor, estimate: &Tensor) -> Result<()> {
    estimate.same_shape(reference, "sdr operands")?;
    if reference.data().iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedSdr);
    }
    Ok(())
}

/// `10 log10((|s|^2 + eps) / (|s - y|^2 + eps))` in dB.
pub fn sdr(reference: &Tensor, estimate: &Tensor, eps: f64) -> Result<f64> {
    check_pair(reference, estimate)?;
    let err = reference.sub(estimate)?.norm_sq();
    Ok(DB * (math::ln(reference.norm_sq() + eps) - math::ln(err + eps)))
}

/// SDR and its gradient with respect to the estimate.
pub fn sdr_with_grad(reference: &Tensor, estimate: &Tensor, eps: f64) -> Result<(f64, Tensor)> {
    check_pair(reference, estimate)?;
    let diff = reference.sub(estimate)?;
    let err = diff.norm_sq() + eps;
    let value = DB * (math::ln(reference.norm_sq() + eps) - math::ln(err));
    Ok((value, diff.scale(2.0 * DB / err)))
}

/// `beta * tanh(v / beta)`.
pub fn clip(v: f64, beta: f64) -> f64 {
    beta * math::tanh(v / beta)
}

pub fn clip_derivative(v: f64, beta: f64) -> f64 {
    let t = math::tanh(v / beta);
    1.0 - t * t
}

/// Negated clipped-SDR objective:
/// `-(clip(SDR(s, s_hat)) + clip(SDR(n, x - s_hat))) / 2`.
pub fn sdr_loss(s_hat: &Tensor, s: &Tensor, x: &Tensor, n: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let residual = x.sub(s_hat)?;
    let a = sdr(s, s_hat, cfg.eps)?;
    let b = sdr(n, &residual, cfg.eps)?;
    Ok(-0.5 * (clip(a, cfg.beta_clip) + clip(b, cfg.beta_clip)))
}

/// [`sdr_loss`] and its gradient with respect to `s_hat`.
pub fn sdr_loss_with_grad(
    s_hat: &Tensor,
    s: &Tensor,
    x: &Tensor,
    n: &Tensor,
    cfg: &LossConfig,
) -> Result<(f64, Tensor)> {
    let residual = x.sub(s_hat)?;
    let (a, ga) = sdr_with_grad(s, s_hat, cfg.eps)?;
    let (b, gb) = sdr_with_grad(n, &residual, cfg.eps)?;
    let beta = cfg.beta_clip;
    let loss = -0.5 * (clip(a, beta) + clip(b, beta));
    let (ca, cb) = (-0.5 * clip_derivative(a, beta), 0.5 * clip_derivative(b, beta));
    let grad = ga.zip_map(&gb, |u, v| ca * u + cb * v)?;
    Ok((loss, grad))
}

/// Scale-invariant SDR in dB, clamped to `±SI_SDR_CAP`.
pub fn si_sdr(s: &Tensor, s_hat: &Tensor) -> Result<f64> {
    check_pair(s, s_hat)?;
    let gamma = s.dot(s_hat) / s.norm_sq();
    let target = s.scale(gamma);
    let num = target.norm_sq();
    let den = target.sub(s_hat)?.norm_sq();
    let v = if den == 0.0 {
        SI_SDR_CAP
    } else if num == 0.0 {
        -SI_SDR_CAP
    } else {
        DB * (math::ln(num) - math::ln(den))
    };
    Ok(v.clamp(-SI_SDR_CAP, SI_SDR_CAP))
}

/// `si_sdr(s, s_hat) - si_sdr(s, x)`.
pub fn si_sdr_improvement(s: &Tensor, s_hat: &Tensor, x: &Tensor) -> Result<f64> {
    Ok(si_sdr(s, s_hat)? - si_sdr(s, x)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceMetric {
    pub id: String,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub improvement: f64,
}

impl UtteranceMetric {
    pub fn evaluate(id: impl Into<String>, s: &Tensor, s_hat: &Tensor, x: &Tensor) -> Result<Self> {
        let si_sdr_in = si_sdr(s, x)?;
        let si_sdr_out = si_sdr(s, s_hat)?;
        Ok(UtteranceMetric {
            id: id.into(),
            si_sdr_in,
            si_sdr_out,
            improvement: si_sdr_out - si_sdr_in,
        })
    }
}

/// Per-utterance SI-SDR results; means are summed in row order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<UtteranceMetric>,
}

impl MetricReport {
    pub fn push(&mut self, row: UtteranceMetric) {
        self.rows.push(row);
    }

    fn mean(&self, f: impl Fn(&UtteranceMetric) -> f64) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_si_sdr_in(&self) -> f64 {
        self.mean(|r| r.si_sdr_in)
    }

    pub fn mean_si_sdr_out(&self) -> f64 {
        self.mean(|r| r.si_sdr_out)
    }

    pub fn mean_improvement(&self) -> f64 {
        self.mean(|r| r.improvement)
    }
}

//! Masks in the transform domain and the end-to-end enhancement pipelines.
//!
//! Lifting path: `s_hat = P^-1(M ⊙ P(x))`, with the estimator (if any) fed
//! `Φ = P(x)` directly. STFT path: `s_hat = istft(M ⊙ stft(x))`, with the
//! estimator fed the log-magnitude spectrogram.

mod estimator;

use alloc::vec::Vec;

pub use estimator::{EstimatorConfig, EstimatorTrace, MaskEstimatorNet};

use crate::error::{Error, Result};
use crate::irevnet::LiftingTransform;
use crate::numerics::{pad_to_multiple, Tensor};
use crate::objective::{sdr_loss_with_grad, LossConfig};
use crate::params::{join, Named, NamedMut, Parameterized};
use crate::stft::{istft, istft_adjoint, log_magnitude_feature, stft_forward, StftConfig, LOG_EPS};

pub const LIFTING_PREFIX: &str = "lifting";
pub const MASK_PREFIX: &str = "mask";

/// Fixed time-constant mask: ones on the speech channels, zeros elsewhere.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMaskSpec {
    pub n_channels: usize,
    pub speech_channels: Vec<usize>,
}

impl BinaryMaskSpec {
    /// First half of the channels carries speech.
    pub fn new(n_channels: usize) -> Result<Self> {
        if n_channels == 0 || n_channels % 2 != 0 {
            return Err(Error::OddChannels(n_channels));
        }
        Ok(BinaryMaskSpec {
            n_channels,
            speech_channels: (0..n_channels / 2).collect(),
        })
    }

    pub fn with_channels(n_channels: usize, speech_channels: Vec<usize>) -> Result<Self> {
        if n_channels == 0 || n_channels % 2 != 0 {
            return Err(Error::OddChannels(n_channels));
        }
        if speech_channels.iter().any(|&c| c >= n_channels) {
            return Err(Error::config("speech channel index out of range"));
        }
        Ok(BinaryMaskSpec {
            n_channels,
            speech_channels,
        })
    }

    /// The channels this mask zeroes.
    pub fn complement(&self) -> BinaryMaskSpec {
        BinaryMaskSpec {
            n_channels: self.n_channels,
            speech_channels: (0..self.n_channels)
                .filter(|c| !self.speech_channels.contains(c))
                .collect(),
        }
    }

    pub fn generate(&self, n_frames: usize) -> Tensor {
        let mut m = Tensor::zeros(&[self.n_channels, n_frames]);
        for &c in &self.speech_channels {
            m.row_mut(c).fill(1.0);
        }
        m
    }
}

pub fn apply_mask(feature: &Tensor, mask: &Tensor) -> Result<Tensor> {
    feature.mul(mask)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    Lifting(LiftingTransform),
    Stft(StftConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskSource {
    Binary(BinaryMaskSpec),
    Estimator(MaskEstimatorNet),
    /// All-ones mask; the pipeline reduces to `P^-1(P(x))`.
    Ones,
}

/// Transform plus mask source. When used as a gradient container (see
/// [`crate::params::zeros_like`]) only the parameter tensors matter.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancementPipeline {
    pub transform: Transform,
    pub mask: MaskSource,
}

enum MaskEval {
    Fixed(Tensor),
    Estimated(Tensor, EstimatorTrace),
}

impl MaskEval {
    fn mask(&self) -> &Tensor {
        match self {
            MaskEval::Fixed(m) | MaskEval::Estimated(m, _) => m,
        }
    }
}

impl EnhancementPipeline {
    pub fn new(transform: Transform, mask: MaskSource) -> Result<Self> {
        if let (Transform::Lifting(t), MaskSource::Binary(spec)) = (&transform, &mask) {
            let c = 2 * t.config.stage_channels(t.config.stages);
            if spec.n_channels != c {
                return Err(Error::shape("binary mask channels", &[c], &[spec.n_channels]));
            }
        }
        if let (Transform::Stft(cfg), MaskSource::Binary(spec)) = (&transform, &mask) {
            if spec.n_channels != cfg.bins() {
                return Err(Error::shape("binary mask channels", &[cfg.bins()], &[spec.n_channels]));
            }
        }
        Ok(EnhancementPipeline { transform, mask })
    }

    /// Input length handed to the transform for a signal of length `len`.
    pub fn padded_len(&self, len: usize) -> usize {
        match &self.transform {
            Transform::Lifting(t) => len.div_ceil(t.config.length_multiple()) * t.config.length_multiple(),
            Transform::Stft(_) => len,
        }
    }

    fn eval_mask(&self, feature: &Tensor, traced: bool) -> Result<MaskEval> {
        let frames = feature.dim(1);
        Ok(match &self.mask {
            MaskSource::Binary(spec) => {
                let m = spec.generate(frames);
                m.same_shape(feature, "mask vs feature")?;
                MaskEval::Fixed(m)
            }
            MaskSource::Ones => MaskEval::Fixed(Tensor::full(feature.shape(), 1.0)),
            MaskSource::Estimator(net) => {
                if traced {
                    let (m, t) = net.estimate_traced(feature)?;
                    MaskEval::Estimated(m, t)
                } else {
                    MaskEval::Fixed(net.estimate(feature)?)
                }
            }
        })
    }

    /// The mask the pipeline would apply to `x`.
    pub fn mask_for(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x)?;
        match &self.transform {
            Transform::Lifting(t) => {
                let xp = pad_to_multiple(x, t.config.length_multiple()).0;
                let phi = t.forward(&xp)?.phi;
                Ok(self.eval_mask(&phi, false)?.mask().clone())
            }
            Transform::Stft(cfg) => {
                let s = stft_forward(x, cfg)?;
                let psi = log_magnitude_feature(&s, LOG_EPS);
                Ok(self.eval_mask(&psi, false)?.mask().clone())
            }
        }
    }

    /// Elementwise magnitude of the transform of `x`: `|P(x)|` on the
    /// lifting path, `|stft(x)|` on the STFT path. Same shape as the mask.
    pub fn magnitude_for(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x)?;
        match &self.transform {
            Transform::Lifting(t) => {
                let xp = pad_to_multiple(x, t.config.length_multiple()).0;
                Ok(t.forward(&xp)?.phi.map(f64::abs))
            }
            Transform::Stft(cfg) => Ok(stft_forward(x, cfg)?.magnitude()),
        }
    }

    /// `(s_hat, x - s_hat)`, both of length `x.len()`.
    pub fn enhance(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        check_input(x)?;
        let s_hat = match &self.transform {
            Transform::Lifting(t) => {
                let xp = pad_to_multiple(x, t.config.length_multiple()).0;
                let phi = t.forward(&xp)?.phi;
                let m = self.eval_mask(&phi, false)?;
                let y = t.inverse(&apply_mask(&phi, m.mask())?)?;
                truncate(&y, x.len())
            }
            Transform::Stft(cfg) => {
                let s = stft_forward(x, cfg)?;
                let psi = log_magnitude_feature(&s, LOG_EPS);
                let m = self.eval_mask(&psi, false)?;
                istft(&s.masked(m.mask())?, cfg, x.len())?
            }
        };
        let residual = x.sub(&s_hat)?;
        Ok((s_hat, residual))
    }

    /// Loss for one training triple; parameter gradients are added into
    /// `grads`. Returns the loss and the enhanced signal.
    pub fn loss_and_grad(
        &self,
        x: &Tensor,
        s: &Tensor,
        n: &Tensor,
        loss: &LossConfig,
        grads: &mut EnhancementPipeline,
    ) -> Result<(f64, Tensor)> {
        check_input(x)?;
        let len = x.len();
        match &self.transform {
            Transform::Lifting(t) => {
                let gt = match &mut grads.transform {
                    Transform::Lifting(g) => g,
                    _ => return Err(Error::config("gradient structure differs from model")),
                };
                let xp = pad_to_multiple(x, t.config.length_multiple()).0;
                let (feat, tr_f) = t.forward_traced(&xp)?;
                let phi = feat.phi;
                let m = self.eval_mask(&phi, true)?;
                let (y, tr_i) = t.inverse_traced(&apply_mask(&phi, m.mask())?)?;
                let s_hat = truncate(&y, len);
                let (value, g_hat) = sdr_loss_with_grad(&s_hat, s, x, n, loss)?;
                let gy = pad_to_multiple(&g_hat, t.config.length_multiple()).0;
                let g_masked = t.backward_inverse(&tr_i, &gy, gt)?;
                let mut g_phi = g_masked.mul(m.mask())?;
                if let MaskEval::Estimated(_, trace) = &m {
                    let g_mask = g_masked.mul(&phi)?;
                    let (net, gnet) = self.estimator_pair(&mut grads.mask)?;
                    g_phi = g_phi.add(&net.backward(trace, &g_mask, gnet)?)?;
                }
                t.backward_forward(&tr_f, &g_phi, gt)?;
                Ok((value, s_hat))
            }
            Transform::Stft(cfg) => {
                let spec = stft_forward(x, cfg)?;
                let psi = log_magnitude_feature(&spec, LOG_EPS);
                let m = self.eval_mask(&psi, true)?;
                let s_hat = istft(&spec.masked(m.mask())?, cfg, len)?;
                let (value, g_hat) = sdr_loss_with_grad(&s_hat, s, x, n, loss)?;
                if let MaskEval::Estimated(_, trace) = &m {
                    let gs = istft_adjoint(&g_hat, cfg)?;
                    let g_mask = gs.re.mul(&spec.re)?.add(&gs.im.mul(&spec.im)?)?;
                    let (net, gnet) = self.estimator_pair(&mut grads.mask)?;
                    // the log-magnitude input carries no trainable upstream
                    net.backward(trace, &g_mask, gnet)?;
                }
                Ok((value, s_hat))
            }
        }
    }

    fn estimator_pair<'a>(&'a self, grads: &'a mut MaskSource) -> Result<(&'a MaskEstimatorNet, &'a mut MaskEstimatorNet)> {
        match (&self.mask, grads) {
            (MaskSource::Estimator(n), MaskSource::Estimator(g)) => Ok((n, g)),
            _ => Err(Error::config("gradient structure differs from model")),
        }
    }

    /// One power-iteration refresh for every spectrally normalized layer.
    pub fn refresh_spectral(&mut self, iters: usize) {
        if let Transform::Lifting(t) = &mut self.transform {
            t.refresh_spectral(iters);
        }
        if let MaskSource::Estimator(n) = &mut self.mask {
            n.refresh_spectral(iters);
        }
    }

    pub fn lifting(&self) -> Option<&LiftingTransform> {
        match &self.transform {
            Transform::Lifting(t) => Some(t),
            Transform::Stft(_) => None,
        }
    }
}

impl Parameterized for EnhancementPipeline {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        if let Transform::Lifting(t) = &self.transform {
            t.collect_params(&join(prefix, LIFTING_PREFIX), out);
        }
        if let MaskSource::Estimator(n) = &self.mask {
            n.collect_params(&join(prefix, MASK_PREFIX), out);
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        if let Transform::Lifting(t) = &mut self.transform {
            t.collect_params_mut(&join(prefix, LIFTING_PREFIX), out);
        }
        if let MaskSource::Estimator(n) = &mut self.mask {
            n.collect_params_mut(&join(prefix, MASK_PREFIX), out);
        }
    }

    fn collect_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        if let Transform::Lifting(t) = &self.transform {
            t.collect_buffers(&join(prefix, LIFTING_PREFIX), out);
        }
        if let MaskSource::Estimator(n) = &self.mask {
            n.collect_buffers(&join(prefix, MASK_PREFIX), out);
        }
    }

    fn collect_buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        if let Transform::Lifting(t) = &mut self.transform {
            t.collect_buffers_mut(&join(prefix, LIFTING_PREFIX), out);
        }
        if let MaskSource::Estimator(n) = &mut self.mask {
            n.collect_buffers_mut(&join(prefix, MASK_PREFIX), out);
        }
    }
}

fn check_input(x: &Tensor) -> Result<()> {
    if x.ndim() != 1 || x.is_empty() {
        return Err(Error::ZeroSize);
    }
    if !x.all_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

fn truncate(y: &Tensor, len: usize) -> Tensor {
    Tensor::from_slice(&y.data()[..len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irevnet::LiftingConfig;
    use crate::numerics::{seeded_fill_uniform, Rng};

    fn lifting(linear: bool, seed: u64) -> LiftingTransform {
        let cfg = LiftingConfig {
            stages: 3,
            linear,
            ..LiftingConfig::default()
        };
        LiftingTransform::new(cfg, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn binary_mask_examples() {
        let spec = BinaryMaskSpec::new(4).unwrap();
        assert_eq!(
            spec.generate(2),
            Tensor::from_rows(&[&[1., 1.], &[1., 1.], &[0., 0.], &[0., 0.]]).unwrap()
        );
        let sum = spec.generate(3).add(&spec.complement().generate(3)).unwrap();
        assert_eq!(sum, Tensor::full(&[4, 3], 1.0));
        assert_eq!(BinaryMaskSpec::new(5), Err(Error::OddChannels(5)));
    }

    #[test]
    fn apply_mask_example() {
        let f = Tensor::from_rows(&[&[2., 3.]]).unwrap();
        let m = Tensor::from_rows(&[&[0., 1.]]).unwrap();
        assert_eq!(apply_mask(&f, &m).unwrap(), Tensor::from_rows(&[&[0., 3.]]).unwrap());
        assert!(apply_mask(&f, &Tensor::zeros(&[2, 1])).is_err());
    }

    #[test]
    fn ones_mask_is_identity_on_both_paths() {
        let x = seeded_fill_uniform(&mut Rng::new(9), &[203], -1.0, 1.0).unwrap();
        for transform in [Transform::Lifting(lifting(false, 1)), Transform::Stft(StftConfig::default())] {
            let p = EnhancementPipeline::new(transform, MaskSource::Ones).unwrap();
            let (s_hat, r) = p.enhance(&x).unwrap();
            assert_eq!(s_hat.len(), 203);
            assert!(s_hat.max_abs_diff(&x) <= 1e-9);
            assert!(r.max_abs() <= 1e-9);
        }
    }

    #[test]
    fn linear_zero_mask_gives_zero() {
        let t = lifting(true, 2);
        let spec = BinaryMaskSpec::with_channels(32, Vec::new()).unwrap();
        let p = EnhancementPipeline::new(Transform::Lifting(t), MaskSource::Binary(spec)).unwrap();
        let x = seeded_fill_uniform(&mut Rng::new(3), &[64], -1.0, 1.0).unwrap();
        assert_eq!(p.enhance(&x).unwrap().0.max_abs(), 0.0);
    }

    #[test]
    fn length_preserved_and_nonfinite_rejected() {
        let p = EnhancementPipeline::new(
            Transform::Lifting(lifting(false, 4)),
            MaskSource::Binary(BinaryMaskSpec::new(32).unwrap()),
        )
        .unwrap();
        for len in [1, 7, 8, 65] {
            let x = seeded_fill_uniform(&mut Rng::new(len as u64), &[len], -1.0, 1.0).unwrap();
            assert_eq!(p.enhance(&x).unwrap().0.len(), len);
        }
        let bad = Tensor::from_slice(&[0.0, f64::NAN]);
        assert_eq!(p.enhance(&bad).unwrap_err(), Error::NonFiniteInput);
    }

    #[test]
    fn mismatched_binary_mask_rejected() {
        let r = EnhancementPipeline::new(
            Transform::Lifting(lifting(false, 4)),
            MaskSource::Binary(BinaryMaskSpec::new(8).unwrap()),
        );
        assert!(r.is_err());
    }
}

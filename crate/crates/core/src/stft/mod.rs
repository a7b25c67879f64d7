//! Short-time Fourier transform with canonical dual synthesis.
//!
//! Frames are centred: frame `m` starts at sample `m * hop - window_length / 2`
//! and the signal is zero-extended on both sides, giving
//! `M = floor(T / hop) + 1` frames. Synthesis overlap-adds `w * irfft(S)` and
//! divides by the summed squared window of the frames that actually cover
//! each sample. In the interior that is exactly `canonical_dual_window`; at
//! the edges fewer frames contribute and the same rule keeps reconstruction
//! exact.

mod fft;

use alloc::vec;
use alloc::vec::Vec;

pub use fft::FftPlan;

use crate::error::{Error, Result};
use crate::numerics::{math, Tensor};

pub const DEFAULT_WINDOW: usize = 512;
pub const DEFAULT_HOP: usize = 128;
pub const DEFAULT_DFT: usize = 512;
pub const LOG_EPS: f64 = 1e-8;

/// Periodic Hann window `0.5 (1 - cos(2 pi t / n))`.
pub fn hann_window(n: usize) -> Tensor {
    assert!(n >= 2, "Hann window needs n >= 2");
    let w = (0..n)
        .map(|t| 0.5 * (1.0 - math::cos(2.0 * math::PI * t as f64 / n as f64)))
        .collect();
    Tensor::from_vec(w)
}

/// `sum_k w[r + k hop]^2` for each residue `r < hop`.
fn squared_sum_by_residue(w: &[f64], hop: usize) -> Vec<f64> {
    let mut acc = vec![0.0; hop];
    for (t, &v) in w.iter().enumerate() {
        acc[t % hop] += v * v;
    }
    acc
}

/// `d[t] = w[t] / sum_k w^2[t - k hop]`.
pub fn canonical_dual_window(w: &Tensor, hop: usize) -> Result<Tensor> {
    if w.ndim() != 1 || w.is_empty() {
        return Err(Error::ZeroSize);
    }
    if hop == 0 {
        return Err(Error::NotInvertible);
    }
    let denom = squared_sum_by_residue(w.data(), hop);
    if denom.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::NotInvertible);
    }
    Ok(Tensor::from_vec(
        w.data().iter().enumerate().map(|(t, &v)| v / denom[t % hop]).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StftConfig {
    window_length: usize,
    hop: usize,
    dft_length: usize,
    window: Tensor,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig::hann(DEFAULT_WINDOW, DEFAULT_HOP, DEFAULT_DFT).expect("default STFT config is valid")
    }
}

impl StftConfig {
    pub fn new(window: Tensor, hop: usize, dft_length: usize) -> Result<Self> {
        let window_length = window.len();
        if window.ndim() != 1 || window_length == 0 {
            return Err(Error::ZeroSize);
        }
        if hop == 0 || window_length % hop != 0 {
            return Err(Error::config("window_length must be a positive multiple of hop"));
        }
        if dft_length < window_length {
            return Err(Error::config("dft_length must be at least window_length"));
        }
        if !window.all_finite() {
            return Err(Error::NonFiniteInput);
        }
        canonical_dual_window(&window, hop)?;
        Ok(StftConfig {
            window_length,
            hop,
            dft_length,
            window,
        })
    }

    pub fn hann(window_length: usize, hop: usize, dft_length: usize) -> Result<Self> {
        if window_length < 2 {
            return Err(Error::config("window_length must be at least 2"));
        }
        StftConfig::new(hann_window(window_length), hop, dft_length)
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn dft_length(&self) -> usize {
        self.dft_length
    }

    pub fn window(&self) -> &Tensor {
        &self.window
    }

    pub fn bins(&self) -> usize {
        self.dft_length / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    fn frame_start(&self, m: usize) -> isize {
        (m * self.hop) as isize - (self.window_length / 2) as isize
    }

    /// Range of window taps `t` with `start + t` inside `[0, len)`.
    fn taps(&self, m: usize, len: usize) -> (isize, usize, usize) {
        let start = self.frame_start(m);
        let lo = (-start).max(0) as usize;
        let hi = ((len as isize - start).max(0) as usize).min(self.window_length);
        (start, lo, hi.max(lo))
    }

    /// Summed squared window of the frames covering each output sample.
    fn envelope(&self, len: usize) -> Result<Vec<f64>> {
        let w = self.window.data();
        let mut env = vec![0.0; len];
        for m in 0..self.frames(len) {
            let (start, lo, hi) = self.taps(m, len);
            for t in lo..hi {
                env[(start + t as isize) as usize] += w[t] * w[t];
            }
        }
        if env.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::NotInvertible);
        }
        Ok(env)
    }
}

/// One-sided complex spectrogram, `[F, M]` real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub re: Tensor,
    pub im: Tensor,
}

impl Spectrogram {
    pub fn zeros(bins: usize, frames: usize) -> Self {
        Spectrogram {
            re: Tensor::zeros(&[bins, frames]),
            im: Tensor::zeros(&[bins, frames]),
        }
    }

    pub fn bins(&self) -> usize {
        self.re.dim(0)
    }

    pub fn frames(&self) -> usize {
        self.re.dim(1)
    }

    pub fn magnitude(&self) -> Tensor {
        self.re.zip_map(&self.im, math::hypot).expect("parts share shape")
    }

    pub fn add(&self, other: &Spectrogram) -> Result<Spectrogram> {
        Ok(Spectrogram {
            re: self.re.add(&other.re)?,
            im: self.im.add(&other.im)?,
        })
    }

    /// Multiplies both parts by a real `[F, M]` mask.
    pub fn masked(&self, mask: &Tensor) -> Result<Spectrogram> {
        Ok(Spectrogram {
            re: self.re.mul(mask)?,
            im: self.im.mul(mask)?,
        })
    }

    fn check(&self, cfg: &StftConfig, frames: usize) -> Result<()> {
        let want = [cfg.bins(), frames];
        self.re.expect_shape("spectrogram real part", &want)?;
        self.im.expect_shape("spectrogram imaginary part", &want)
    }
}

pub fn stft_forward(x: &Tensor, cfg: &StftConfig) -> Result<Spectrogram> {
    if x.ndim() != 1 || x.is_empty() {
        return Err(Error::ZeroSize);
    }
    let len = x.len();
    let (f, m_count) = (cfg.bins(), cfg.frames(len));
    let plan = FftPlan::new(cfg.dft_length);
    let w = cfg.window.data();
    let mut out = Spectrogram::zeros(f, m_count);
    let mut frame = vec![0.0; cfg.dft_length];
    let (mut col_re, mut col_im) = (vec![0.0; f], vec![0.0; f]);
    for m in 0..m_count {
        frame.fill(0.0);
        let (start, lo, hi) = cfg.taps(m, len);
        for t in lo..hi {
            frame[t] = w[t] * x.data()[(start + t as isize) as usize];
        }
        plan.rfft(&frame, &mut col_re, &mut col_im);
        for k in 0..f {
            out.re.data_mut()[k * m_count + m] = col_re[k];
            out.im.data_mut()[k * m_count + m] = col_im[k];
        }
    }
    Ok(out)
}

/// Synthesis with the canonical dual; output has `out_length` samples.
pub fn istft(s: &Spectrogram, cfg: &StftConfig, out_length: usize) -> Result<Tensor> {
    if out_length == 0 {
        return Err(Error::ZeroSize);
    }
    let m_count = cfg.frames(out_length);
    s.check(cfg, m_count)?;
    let env = cfg.envelope(out_length)?;
    let plan = FftPlan::new(cfg.dft_length);
    let (f, w) = (cfg.bins(), cfg.window.data());
    let mut y = vec![0.0; out_length];
    let mut frame = vec![0.0; cfg.dft_length];
    let (mut col_re, mut col_im) = (vec![0.0; f], vec![0.0; f]);
    for m in 0..m_count {
        for k in 0..f {
            col_re[k] = s.re.data()[k * m_count + m];
            col_im[k] = s.im.data()[k * m_count + m];
        }
        plan.irfft(&col_re, &col_im, &mut frame);
        let (start, lo, hi) = cfg.taps(m, out_length);
        for t in lo..hi {
            y[(start + t as isize) as usize] += w[t] * frame[t];
        }
    }
    for (v, e) in y.iter_mut().zip(&env) {
        *v /= e;
    }
    Ok(Tensor::from_vec(y))
}

/// Adjoint of [`istft`] for a fixed output length: pulls a gradient on the
/// signal back to the real and imaginary spectrogram parts.
pub fn istft_adjoint(grad: &Tensor, cfg: &StftConfig) -> Result<Spectrogram> {
    let len = grad.len();
    if grad.ndim() != 1 || len == 0 {
        return Err(Error::ZeroSize);
    }
    let env = cfg.envelope(len)?;
    let scaled: Vec<f64> = grad.data().iter().zip(&env).map(|(g, e)| g / e).collect();
    let m_count = cfg.frames(len);
    let plan = FftPlan::new(cfg.dft_length);
    let (f, w) = (cfg.bins(), cfg.window.data());
    let mut out = Spectrogram::zeros(f, m_count);
    let mut frame = vec![0.0; cfg.dft_length];
    let (mut col_re, mut col_im) = (vec![0.0; f], vec![0.0; f]);
    for m in 0..m_count {
        frame.fill(0.0);
        let (start, lo, hi) = cfg.taps(m, len);
        for t in lo..hi {
            frame[t] = w[t] * scaled[(start + t as isize) as usize];
        }
        plan.irfft_adjoint(&frame, &mut col_re, &mut col_im);
        for k in 0..f {
            out.re.data_mut()[k * m_count + m] = col_re[k];
            out.im.data_mut()[k * m_count + m] = col_im[k];
        }
    }
    Ok(out)
}

/// `ln(max(|S|, eps))`.
pub fn log_magnitude_feature(s: &Spectrogram, eps: f64) -> Tensor {
    assert!(eps > 0.0, "log floor must be positive");
    s.magnitude().map(|m| math::ln(m.max(eps)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_fill_uniform, Rng};

    #[test]
    fn hann_values() {
        let w = hann_window(512);
        assert_eq!(w.data()[0], 0.0);
        assert!((w.data()[256] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hann_quarter_shift_squares_constant() {
        let w = hann_window(512);
        let sums = squared_sum_by_residue(w.data(), 128);
        for s in &sums {
            assert!((s - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_examples() {
        let rect = Tensor::full(&[8], 1.0);
        assert_eq!(canonical_dual_window(&rect, 8).unwrap(), rect);
        let w = hann_window(512);
        let d = canonical_dual_window(&w, 128).unwrap();
        let d3 = canonical_dual_window(&w.scale(3.0), 128).unwrap();
        assert!(d3.max_abs_diff(&d.scale(1.0 / 3.0)) < 1e-15);
        assert_eq!(canonical_dual_window(&Tensor::zeros(&[4]), 2), Err(Error::NotInvertible));
        // Hann with hop = window_length misses the residue of w[0] = 0
        assert_eq!(canonical_dual_window(&w, 512), Err(Error::NotInvertible));
    }

    #[test]
    fn dual_identity() {
        let w = hann_window(512);
        let d = canonical_dual_window(&w, 128).unwrap();
        let mut acc = vec![0.0; 128];
        for t in 0..512 {
            acc[t % 128] += w.data()[t] * d.data()[t];
        }
        for a in acc {
            assert!((a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_count() {
        let cfg = StftConfig::default();
        let s = stft_forward(&Tensor::zeros(&[512]), &cfg).unwrap();
        assert_eq!((s.bins(), s.frames()), (257, 5));
        assert_eq!(s.re.max_abs() + s.im.max_abs(), 0.0);
    }

    #[test]
    fn dc_concentrates_in_bin_zero() {
        let cfg = StftConfig::default();
        let s = stft_forward(&Tensor::full(&[2048], 1.0), &cfg).unwrap();
        let mag = s.magnitude();
        let m = 8;
        let dc = mag.data()[m];
        assert!((dc - 256.0).abs() < 1e-9);
        for k in 2..257 {
            assert!(mag.data()[k * s.frames() + m] < 1e-9);
        }
    }

    #[test]
    fn round_trip_lengths() {
        let cfg = StftConfig::default();
        let mut rng = Rng::new(11);
        for t in [1, 129, 512, 2048] {
            let x = seeded_fill_uniform(&mut rng, &[t], -1.0, 1.0).unwrap();
            let y = istft(&stft_forward(&x, &cfg).unwrap(), &cfg, t).unwrap();
            assert!(y.max_abs_diff(&x) <= 1e-10, "T={t}");
        }
    }

    #[test]
    fn adjoint_identity() {
        let cfg = StftConfig::hann(16, 4, 16).unwrap();
        let mut rng = Rng::new(12);
        let t = 37;
        let m = cfg.frames(t);
        let s = Spectrogram {
            re: seeded_fill_uniform(&mut rng, &[9, m], -1.0, 1.0).unwrap(),
            im: seeded_fill_uniform(&mut rng, &[9, m], -1.0, 1.0).unwrap(),
        };
        let g = seeded_fill_uniform(&mut rng, &[t], -1.0, 1.0).unwrap();
        let lhs = istft(&s, &cfg, t).unwrap().dot(&g);
        let a = istft_adjoint(&g, &cfg).unwrap();
        let rhs = s.re.dot(&a.re) + s.im.dot(&a.im);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn log_magnitude_examples() {
        let e = math::exp(1.0);
        let s = Spectrogram {
            re: Tensor::from_rows(&[&[1.0, 0.0, 0.0]]).unwrap(),
            im: Tensor::from_rows(&[&[0.0, -1.0, e]]).unwrap(),
        };
        let psi = log_magnitude_feature(&s, LOG_EPS);
        assert!(psi.data()[0].abs() < 1e-15 && psi.data()[1].abs() < 1e-15);
        assert!((psi.data()[2] - 1.0).abs() < 1e-12);
        let z = log_magnitude_feature(&Spectrogram::zeros(2, 2), LOG_EPS);
        assert!(z.data().iter().all(|&v| v == math::ln(LOG_EPS)));
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::hann(512, 100, 512).is_err());
        assert!(StftConfig::hann(512, 128, 256).is_err());
        assert!(StftConfig::hann(512, 128, 1024).is_ok());
    }
}

//! Training triples, the synthetic speech-plus-noise generator, and batching.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{math, Rng, Tensor};

pub const SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_CROP: usize = 16_384;

/// Generated signals are rounded to multiples of `2^-QUANT_BITS`, so `s + n`
/// and `x - s` are exact in binary64.
const QUANT_BITS: i32 = 40;
const PEAK: f64 = 0.9;

/// Clean speech `s`, noise `n` and their mixture `x = s + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureTriple {
    pub s: Tensor,
    pub n: Tensor,
    pub x: Tensor,
    pub snr_db: f64,
}

impl MixtureTriple {
    /// Builds a triple from a clean and a noisy recording, `n = x - s`.
    pub fn from_clean_noisy(s: Tensor, x: Tensor) -> Result<Self> {
        x.same_shape(&s, "clean/noisy pair")?;
        if s.ndim() != 1 || s.is_empty() {
            return Err(Error::ZeroSize);
        }
        if !s.all_finite() || !x.all_finite() {
            return Err(Error::NonFiniteInput);
        }
        let n = x.sub(&s)?;
        let snr_db = 10.0 * math::log10(s.norm_sq() / n.norm_sq());
        Ok(MixtureTriple { s, n, x, snr_db })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Samples `start..start + len`, zero-padded past the end.
    pub fn segment(&self, start: usize, len: usize) -> MixtureTriple {
        let cut = |t: &Tensor| {
            let d = t.data();
            let end = (start + len).min(d.len());
            let mut v = Vec::with_capacity(len);
            if start < end {
                v.extend_from_slice(&d[start..end]);
            }
            v.resize(len, 0.0);
            Tensor::from_vec(v)
        };
        MixtureTriple {
            s: cut(&self.s),
            n: cut(&self.n),
            x: cut(&self.x),
            snr_db: self.snr_db,
        }
    }
}

fn quantize(v: f64) -> f64 {
    let q = math::powi(2.0, QUANT_BITS);
    math::round(v * q) / q
}

/// Harmonic tone complex with a wandering pitch and a syllable-rate
/// envelope, mixed with one-pole filtered noise at `snr_db`.
pub fn synth_mixture(rng: &mut Rng, duration_s: f64, snr_db: f64, sample_rate: u32) -> Result<MixtureTriple> {
    if !(duration_s > 0.0) || sample_rate == 0 || !snr_db.is_finite() {
        return Err(Error::config("duration, sample rate and SNR must be positive and finite"));
    }
    let len = math::round(duration_s * sample_rate as f64) as usize;
    if len == 0 {
        return Err(Error::ZeroSize);
    }
    let sr = sample_rate as f64;
    let two_pi = 2.0 * math::PI;

    let f0 = rng.uniform_range(100.0, 220.0);
    let vib_rate = rng.uniform_range(0.5, 3.0);
    let vib_depth = rng.uniform_range(0.05, 0.2);
    let vib_phase = rng.uniform_range(0.0, two_pi);
    let syl_rate = rng.uniform_range(2.0, 5.0);
    let syl_phase = rng.uniform_range(0.0, two_pi);
    let n_harm = ((0.25 * sr / (f0 * (1.0 + vib_depth))) as usize).clamp(1, 12);
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.uniform_range(0.0, two_pi)).collect();
    let amps: Vec<f64> = (0..n_harm)
        .map(|k| rng.uniform_range(0.5, 1.0) / (k + 1) as f64)
        .collect();

    let fade = (0.01 * sr).max(1.0);
    let mut s = Vec::with_capacity(len);
    let mut theta = 0.0;
    for t in 0..len {
        let time = t as f64 / sr;
        let f = f0 * (1.0 + vib_depth * math::sin(two_pi * vib_rate * time + vib_phase));
        theta += two_pi * f / sr;
        let syl = 0.55 + 0.45 * math::sin(two_pi * syl_rate * time + syl_phase);
        let edge = (t as f64 / fade).min((len - 1 - t) as f64 / fade).min(1.0);
        let mut v = 0.0;
        for (k, (&a, &p)) in amps.iter().zip(&phases).enumerate() {
            v += a * math::sin((k + 1) as f64 * theta + p);
        }
        s.push(v * syl * syl * edge.max(0.0));
    }

    let coef = rng.uniform_range(-0.8, 0.3);
    let mut n = Vec::with_capacity(len);
    let mut prev = 0.0;
    for _ in 0..len {
        prev = rng.normal() + coef * prev;
        n.push(prev);
    }

    let (es, en) = (math::dot(&s, &s), math::dot(&n, &n));
    if !(es > 0.0 && en > 0.0) {
        return Err(Error::ZeroSize);
    }
    let gain = math::sqrt(es / (en * math::db_to_power(snr_db)));
    n.iter_mut().for_each(|v| *v *= gain);
    let peak = s
        .iter()
        .zip(&n)
        .map(|(a, b)| (a + b).abs())
        .fold(0.0, f64::max);
    let c = PEAK / peak;
    let s = Tensor::from_vec(s.into_iter().map(|v| quantize(v * c)).collect());
    let n = Tensor::from_vec(n.into_iter().map(|v| quantize(v * c)).collect());
    let x = s.add(&n)?;
    Ok(MixtureTriple { s, n, x, snr_db })
}

/// Seeded shuffle of `0..n_items` cut into batches; the last may be short.
pub fn batch_indices(n_items: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if n_items == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    let order = rng.permutation(n_items);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// One epoch of batches. With `crop`, every item is cut to exactly that
/// length: a seeded random window when longer, zero padding when shorter.
pub fn batch_iter(
    dataset: &[MixtureTriple],
    batch_size: usize,
    crop: Option<usize>,
    rng: &mut Rng,
) -> Result<Vec<Vec<MixtureTriple>>> {
    let batches = batch_indices(dataset.len(), batch_size, rng)?;
    let mut out = Vec::with_capacity(batches.len());
    for b in batches {
        let mut items = Vec::with_capacity(b.len());
        for i in b {
            let item = &dataset[i];
            items.push(match crop {
                Some(c) if c > 0 => {
                    let slack = item.len().saturating_sub(c);
                    let start = if slack > 0 { rng.below(slack + 1) } else { 0 };
                    item.segment(start, c)
                }
                _ => item.clone(),
            });
        }
        out.push(items);
    }
    Ok(out)
}

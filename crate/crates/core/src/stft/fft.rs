//! Minimal FFT: iterative radix-2 for powers of two, direct DFT otherwise.

use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::math;

#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let cos = (0..n).map(|k| math::cos(2.0 * math::PI * k as f64 / n as f64)).collect();
        let sin = (0..n).map(|k| math::sin(2.0 * math::PI * k as f64 / n as f64)).collect();
        let bitrev = if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                .collect()
        } else {
            Vec::new()
        };
        FftPlan { n, cos, sin, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward transform `X_k = sum_t x_t e^{-2 pi i k t / n}`,
    /// in place.
    pub fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        debug_assert!(re.len() == self.n && im.len() == self.n);
        if self.n.is_power_of_two() {
            self.radix2(re, im);
        } else {
            self.direct(re, im);
        }
    }

    fn radix2(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * step], -self.sin[k * step]);
                    let (p, q) = (start + k, start + k + half);
                    let tr = re[q] * wr - im[q] * wi;
                    let ti = re[q] * wi + im[q] * wr;
                    re[q] = re[p] - tr;
                    im[q] = im[p] - ti;
                    re[p] += tr;
                    im[p] += ti;
                }
            }
            size *= 2;
        }
    }

    fn direct(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        let mut or = vec![0.0; n];
        let mut oi = vec![0.0; n];
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for t in 0..n {
                let idx = (k * t) % n;
                let (c, s) = (self.cos[idx], self.sin[idx]);
                sr += re[t] * c + im[t] * s;
                si += im[t] * c - re[t] * s;
            }
            or[k] = sr;
            oi[k] = si;
        }
        re.copy_from_slice(&or);
        im.copy_from_slice(&oi);
    }

    /// Number of one-sided bins, `n / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// One-sided spectrum of a real frame of length `n`.
    pub fn rfft(&self, x: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
        let mut re = x.to_vec();
        let mut im = vec![0.0; self.n];
        self.forward(&mut re, &mut im);
        let f = self.bins();
        out_re.copy_from_slice(&re[..f]);
        out_im.copy_from_slice(&im[..f]);
    }

    /// Real inverse of a one-sided spectrum, normalized by `1/n`. The
    /// imaginary parts of the DC and (for even `n`) Nyquist bins are ignored.
    pub fn irfft(&self, re_in: &[f64], im_in: &[f64], out: &mut [f64]) {
        let n = self.n;
        let f = self.bins();
        // inverse via conjugation: x = conj(FFT(conj(X))) / n
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 0..f {
            re[k] = re_in[k];
            im[k] = -im_in[k];
        }
        im[0] = 0.0;
        if n % 2 == 0 {
            im[n / 2] = 0.0;
        }
        for k in f..n {
            re[k] = re_in[n - k];
            im[k] = im_in[n - k];
        }
        self.forward(&mut re, &mut im);
        let scale = 1.0 / n as f64;
        for (o, r) in out.iter_mut().zip(&re) {
            *o = r * scale;
        }
    }

    /// Adjoint of [`irfft`](Self::irfft): gradient with respect to the
    /// one-sided spectrum given a gradient on the time-domain output.
    pub fn irfft_adjoint(&self, grad: &[f64], g_re: &mut [f64], g_im: &mut [f64]) {
        let n = self.n;
        let f = self.bins();
        let mut re = grad.to_vec();
        let mut im = vec![0.0; n];
        self.forward(&mut re, &mut im);
        let inv = 1.0 / n as f64;
        for k in 0..f {
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            let c = if edge { inv } else { 2.0 * inv };
            g_re[k] = c * re[k];
            g_im[k] = if edge { 0.0 } else { c * im[k] };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn naive(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 0..n {
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * math::PI * (k * t) as f64 / n as f64;
                re[k] += v * math::cos(a);
                im[k] += v * math::sin(a);
            }
        }
        (re, im)
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = Rng::new(1);
        for n in [1, 2, 8, 12, 64, 15] {
            let x: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let (wr, wi) = naive(&x);
            let mut re = x.clone();
            let mut im = vec![0.0; n];
            FftPlan::new(n).forward(&mut re, &mut im);
            for k in 0..n {
                assert!((re[k] - wr[k]).abs() < 1e-10 && (im[k] - wi[k]).abs() < 1e-10, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn irfft_inverts_rfft() {
        let mut rng = Rng::new(2);
        for n in [8, 9, 512] {
            let p = FftPlan::new(n);
            let x: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let mut re = vec![0.0; p.bins()];
            let mut im = vec![0.0; p.bins()];
            p.rfft(&x, &mut re, &mut im);
            let mut y = vec![0.0; n];
            p.irfft(&re, &im, &mut y);
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn irfft_adjoint_identity() {
        // <irfft(X), g> == <X, irfft^T(g)>
        let mut rng = Rng::new(3);
        for n in [8, 7] {
            let p = FftPlan::new(n);
            let f = p.bins();
            let xr: Vec<f64> = (0..f).map(|_| rng.normal()).collect();
            let xi: Vec<f64> = (0..f).map(|_| rng.normal()).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let mut y = vec![0.0; n];
            p.irfft(&xr, &xi, &mut y);
            let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
            let mut gr = vec![0.0; f];
            let mut gi = vec![0.0; f];
            p.irfft_adjoint(&g, &mut gr, &mut gi);
            let rhs: f64 = (0..f).map(|k| xr[k] * gr[k] + xi[k] * gi[k]).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}

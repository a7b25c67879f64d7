use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{math, Rng, Tensor};
use crate::params::{join, Named, NamedMut};

/// Singular values at or below this are treated as zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Persistent power-iteration state for one weight tensor.
///
/// `u` is a unit vector in the output space (length `C_out`); `sigma` holds
/// the divisor applied on the most recent refresh.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u: Tensor,
    pub sigma: Tensor,
}

impl SpectralState {
    pub fn new(rows: usize, rng: &mut Rng) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
        let n = math::sqrt(u.iter().map(|v| v * v).sum::<f64>());
        if n > 0.0 {
            u.iter_mut().for_each(|v| *v /= n);
        } else {
            u = vec![0.0; rows];
            u[0] = 1.0;
        }
        SpectralState {
            u: Tensor::from_vec(u),
            sigma: Tensor::from_slice(&[1.0]),
        }
    }

    #[inline]
    pub fn divisor(&self) -> f64 {
        self.sigma.data()[0]
    }

    /// Runs `iters` power iterations against `w` and stores the new divisor.
    pub fn refresh(&mut self, w: &Tensor, iters: usize) -> f64 {
        let sigma = power_iteration(w, &mut self.u, iters);
        let d = if sigma <= SIGMA_FLOOR { 1.0 } else { sigma };
        self.sigma.data_mut()[0] = d;
        d
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Named<'a>>) {
        out.push((join(prefix, "sn_u"), &self.u));
        out.push((join(prefix, "sn_sigma"), &self.sigma));
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedMut<'a>>) {
        out.push((join(prefix, "sn_u"), &mut self.u));
        out.push((join(prefix, "sn_sigma"), &mut self.sigma));
    }
}

/// Power-iteration estimate of the largest singular value of `w` viewed as
/// a `[shape[0], rest]` matrix. `u` is updated in place and stays unit norm.
fn power_iteration(w: &Tensor, u: &mut Tensor, iters: usize) -> f64 {
    let rows = w.dim(0);
    let cols = w.len() / rows;
    let m = w.data();
    let mut v = vec![0.0; cols];
    let mut wv = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        // v = W^T u / |W^T u|
        v.iter_mut().for_each(|x| *x = 0.0);
        for (r, &ur) in u.data().iter().enumerate() {
            for (vc, &wrc) in v.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
                *vc += wrc * ur;
            }
        }
        let vn = math::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if vn <= f64::MIN_POSITIVE {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= vn);
        // u = W v / |W v|
        for (r, out) in wv.iter_mut().enumerate() {
            *out = m[r * cols..(r + 1) * cols]
                .iter()
                .zip(&v)
                .map(|(a, b)| a * b)
                .sum();
        }
        let un = math::sqrt(wv.iter().map(|x| x * x).sum::<f64>());
        if un <= f64::MIN_POSITIVE {
            return 0.0;
        }
        for (ui, &x) in u.data_mut().iter_mut().zip(&wv) {
            *ui = x / un;
        }
        // u^T W v with the refreshed u equals |W v|.
        sigma = un;
    }
    sigma
}

/// Returns `w / sigma` where `sigma` is the power-iteration estimate of the
/// largest singular value, advancing `state` in place. Weights whose
/// estimate falls at or below [`SIGMA_FLOOR`] are returned unchanged.
pub fn spectral_normalize_weights(w: &Tensor, state: &mut Tensor, iters: usize) -> Tensor {
    let sigma = power_iteration(w, state, iters);
    if sigma <= SIGMA_FLOOR {
        w.clone()
    } else {
        w.scale(1.0 / sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Tensor {
        let mut u = Tensor::full(&[n], 1.0);
        let s = 1.0 / math::sqrt(n as f64);
        u.data_mut().iter_mut().for_each(|x| *x = s);
        u
    }

    #[test]
    fn diagonal_matrix() {
        let w = Tensor::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]).unwrap();
        let mut u = unit(2);
        let out = spectral_normalize_weights(&w, &mut u, 200);
        let want = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 0.5]]).unwrap();
        assert!(out.max_abs_diff(&want) < 1e-6);
        assert!((u.norm_sq() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_unchanged() {
        let w = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]).unwrap();
        let mut u = unit(3);
        let out = spectral_normalize_weights(&w, &mut u, 1);
        assert!(out.max_abs_diff(&w) < 1e-12);
    }

    #[test]
    fn zero_weights_unchanged() {
        let w = Tensor::zeros(&[3, 4]);
        let mut u = unit(3);
        let before = u.clone();
        let out = spectral_normalize_weights(&w, &mut u, 5);
        assert_eq!(out, w);
        assert_eq!(u, before);
    }

    #[test]
    fn state_divisor_floor() {
        let mut st = SpectralState::new(3, &mut Rng::new(1));
        assert_eq!(st.refresh(&Tensor::zeros(&[3, 2]), 1), 1.0);
    }
}

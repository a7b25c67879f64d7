#![allow(dead_code)]

use liftbank_core::layers::Layer;
use liftbank_core::numerics::{finite_difference_gradient, relative_error, seeded_fill_uniform, DEFAULT_FD_STEP};
use liftbank_core::params::{flatten, unflatten, zeros_like};
use liftbank_core::{Parameterized, Rng, Tensor};

pub const GRAD_TOL: f64 = 1e-4;

/// Coarser step for composite networks. Elements whose gradient sits many
/// orders below the largest one are dominated by roundoff at the default
/// step, so composites take the better of the two estimates per element.
pub const COARSE_FD_STEP: f64 = 1e-3;

pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    seeded_fill_uniform(rng, shape, lo, hi).unwrap()
}

/// Replaces every trainable value with a fresh uniform draw.
pub fn randomize<T: Parameterized>(model: &mut T, rng: &mut Rng, bound: f64) {
    for (_, p) in model.params_mut() {
        for v in p.data_mut() {
            *v = rng.uniform_range(-bound, bound);
        }
    }
}

/// Worst relative error between analytic and finite-difference gradients of
/// `f(theta, x)` with respect to both the flattened parameters and `x`.
pub fn check_scalar<T, F, G>(model: &T, x: &Tensor, objective: F, analytic: G) -> f64
where
    T: Parameterized + Clone,
    F: Fn(&T, &Tensor) -> f64,
    G: Fn(&T, &Tensor, &mut T) -> Option<Tensor>,
{
    check_scalar_steps(model, x, objective, analytic, &[DEFAULT_FD_STEP])
}

/// As [`check_scalar`], keeping for each element the best match over `steps`.
pub fn check_scalar_steps<T, F, G>(model: &T, x: &Tensor, objective: F, analytic: G, steps: &[f64]) -> f64
where
    T: Parameterized + Clone,
    F: Fn(&T, &Tensor) -> f64,
    G: Fn(&T, &Tensor, &mut T) -> Option<Tensor>,
{
    let mut grads = zeros_like(model);
    let gx = analytic(model, x, &mut grads);
    let mut worst = 0.0f64;
    if let Some(gx) = gx {
        let fds: Vec<Tensor> = steps
            .iter()
            .map(|&h| finite_difference_gradient(|xp| objective(model, xp), x, h).unwrap())
            .collect();
        worst = worst.max(best_match(&gx, &fds));
    }
    let theta = Tensor::from_vec(flatten(model));
    if !theta.is_empty() {
        let mut probe = model.clone();
        let fds: Vec<Tensor> = steps
            .iter()
            .map(|&h| {
                finite_difference_gradient(
                    |t| {
                        unflatten(&mut probe, t.data()).unwrap();
                        objective(&probe, x)
                    },
                    &theta,
                    h,
                )
                .unwrap()
            })
            .collect();
        worst = worst.max(best_match(&Tensor::from_vec(flatten(&grads)), &fds));
    }
    worst
}

fn best_match(analytic: &Tensor, fds: &[Tensor]) -> f64 {
    assert!(fds.iter().all(|f| f.shape() == analytic.shape()));
    analytic
        .data()
        .iter()
        .enumerate()
        .map(|(i, &a)| fds.iter().map(|f| relative_error(a, f.data()[i])).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Gradient check of a layer under the objective `sum(c * layer(x))`.
pub fn check_layer<L: Layer>(layer: &L, x: &Tensor, rng: &mut Rng) -> f64 {
    let y = layer.forward(x).unwrap();
    let c = uniform(rng, y.shape(), -1.0, 1.0);
    check_scalar(
        layer,
        x,
        |l, xp| l.forward(xp).unwrap().dot(&c),
        |l, xp, g| Some(l.backward(xp, &c, g).unwrap()),
    )
}

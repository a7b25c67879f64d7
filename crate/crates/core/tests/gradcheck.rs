mod common;

use common::{check_layer, check_scalar, check_scalar_steps, randomize, uniform, COARSE_FD_STEP, GRAD_TOL};
use liftbank_core::numerics::DEFAULT_FD_STEP;

const COMPOSITE: [f64; 2] = [DEFAULT_FD_STEP, COARSE_FD_STEP];
use liftbank_core::irevnet::{Block, BlockSpec, LiftingConfig, LiftingTransform};
use liftbank_core::layers::{Activation, ActivationKind, Conv1d, Conv2d, Deconv2d, Geometry, InstanceNorm, NormKind};
use liftbank_core::masking::{BinaryMaskSpec, EnhancementPipeline, EstimatorConfig, MaskEstimatorNet, MaskSource, Transform};
use liftbank_core::objective::{sdr_loss, sdr_loss_with_grad, LossConfig};
use liftbank_core::stft::StftConfig;
use liftbank_core::{Rng, Tensor};

const INSTANCES: u64 = 50;

fn run(name: &str, mut one: impl FnMut(&mut Rng) -> f64) {
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = Rng::new(1000 + i);
        let e = one(&mut rng);
        assert!(e <= GRAD_TOL, "{name}: instance {i} rel. err {e:e}");
        worst = worst.max(e);
    }
    println!("{name}: worst rel. err {worst:.3e} over {INSTANCES} instances");
}

fn pick(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

#[test]
fn conv1d() {
    run("conv1d", |rng| {
        let (ci, co) = (pick(rng, 1, 4), pick(rng, 1, 4));
        let k = 2 * pick(rng, 0, 2) + 1;
        let len = pick(rng, 1, 12);
        let bias = rng.below(2) == 0;
        let spectral = rng.below(2) == 0;
        let conv = Conv1d::new(ci, co, k, bias, spectral, rng).unwrap();
        let x = uniform(rng, &[ci, len], -1.0, 1.0);
        check_layer(&conv, &x, rng)
    });
}

#[test]
fn conv2d() {
    run("conv2d", |rng| {
        let (ci, co) = (pick(rng, 1, 3), pick(rng, 1, 3));
        let g = Geometry::new(
            (pick(rng, 1, 4), pick(rng, 1, 4)),
            (pick(rng, 1, 2), pick(rng, 1, 2)),
            (pick(rng, 0, 1), pick(rng, 0, 1)),
        );
        let (h, w) = (pick(rng, 4, 7), pick(rng, 4, 7));
        let conv = Conv2d::new(ci, co, g, rng.below(2) == 0, rng.below(2) == 0, rng).unwrap();
        let x = uniform(rng, &[ci, h, w], -1.0, 1.0);
        check_layer(&conv, &x, rng)
    });
}

#[test]
fn conv2d_on_six_by_six() {
    let mut rng = Rng::new(6);
    let conv = Conv2d::new(1, 2, Geometry::new((3, 3), (1, 1), (1, 1)), true, false, &mut rng).unwrap();
    let x = uniform(&mut rng, &[1, 6, 6], -1.0, 1.0);
    assert!(check_layer(&conv, &x, &mut rng) <= GRAD_TOL);
}

#[test]
fn deconv2d() {
    run("deconv2d", |rng| {
        let (ci, co) = (pick(rng, 1, 3), pick(rng, 1, 3));
        let g = Geometry::new(
            (pick(rng, 2, 4), pick(rng, 2, 4)),
            (pick(rng, 1, 2), pick(rng, 1, 2)),
            (pick(rng, 0, 1), pick(rng, 0, 1)),
        );
        let (h, w) = (pick(rng, 2, 5), pick(rng, 2, 5));
        let d = Deconv2d::new(ci, co, g, rng.below(2) == 0, rng.below(2) == 0, rng).unwrap();
        let x = uniform(rng, &[ci, h, w], -1.0, 1.0);
        check_layer(&d, &x, rng)
    });
}

#[test]
fn instance_norm() {
    run("instance_norm", |rng| {
        let c = pick(rng, 1, 4);
        let mut n = InstanceNorm::new(c, rng.below(3) != 0);
        randomize(&mut n, rng, 1.5);
        let shape = if rng.below(2) == 0 { vec![c, pick(rng, 2, 9)] } else { vec![c, pick(rng, 2, 4), pick(rng, 2, 4)] };
        let x = uniform(rng, &shape, -2.0, 2.0);
        check_layer(&n, &x, rng)
    });
}

/// Inputs kept away from the leaky ReLU kink, where the derivative jumps.
fn off_kink(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.uniform_range(0.01, 3.0);
            if rng.below(2) == 0 { m } else { -m }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

#[test]
fn activations() {
    for kind in [ActivationKind::LeakyRelu(0.2), ActivationKind::Sigmoid, ActivationKind::Identity] {
        run(&format!("{kind:?}"), |rng| {
            let shape = [pick(rng, 1, 4), pick(rng, 1, 8)];
            let x = off_kink(rng, &shape);
            check_layer(&Activation(kind), &x, rng)
        });
    }
}

#[test]
fn lifting_block() {
    run("lifting block", |rng| {
        let spec = BlockSpec {
            depth: pick(rng, 1, 3),
            hidden_mult: pick(rng, 1, 2),
            spectral_norm: rng.below(2) == 0,
            ..BlockSpec::default()
        };
        let c = pick(rng, 1, 4);
        let block = Block::new(c, &spec, rng.below(4) == 0, rng).unwrap();
        let len = pick(rng, 2, 10);
        let x = uniform(rng, &[c, len], -1.0, 1.0);
        let y = block.forward(&x).unwrap();
        let w = uniform(rng, y.shape(), -1.0, 1.0);
        check_scalar(
            &block,
            &x,
            |b, xp| b.forward(xp).unwrap().dot(&w),
            |b, xp, g| Some(b.backward(xp, &w, g).unwrap()),
        )
    });
}

fn small_lifting(rng: &mut Rng, stages: usize, linear: bool) -> LiftingTransform {
    let cfg = LiftingConfig {
        stages,
        base_channels: pick(rng, 1, 3),
        linear,
        ..LiftingConfig::default()
    };
    LiftingTransform::new(cfg, rng).unwrap()
}

#[test]
fn lifting_forward_and_inverse() {
    run("lifting forward", |rng| {
        let (stages, linear) = (pick(rng, 1, 3), rng.below(3) == 0);
        let t = small_lifting(rng, stages, linear);
        let len = t.config.length_multiple() * pick(rng, 1, 3);
        let x = uniform(rng, &[len], -1.0, 1.0);
        let phi = t.forward(&x).unwrap().phi;
        let w = uniform(rng, phi.shape(), -1.0, 1.0);
        check_scalar_steps(
            &t,
            &x,
            |t, xp| t.forward(xp).unwrap().phi.dot(&w),
            |t, xp, g| {
                let (_, tr) = t.forward_traced(xp).unwrap();
                Some(t.backward_forward(&tr, &w, g).unwrap())
            },
            &COMPOSITE,
        )
    });
    run("lifting inverse", |rng| {
        let (stages, linear) = (pick(rng, 1, 3), rng.below(3) == 0);
        let t = small_lifting(rng, stages, linear);
        let len = t.config.length_multiple() * pick(rng, 1, 3);
        let phi = uniform(rng, &t.config.feature_shape(len), -1.0, 1.0);
        let w = uniform(rng, &[len], -1.0, 1.0);
        check_scalar_steps(
            &t,
            &phi,
            |t, p| t.inverse(p).unwrap().dot(&w),
            |t, p, g| {
                let (_, tr) = t.inverse_traced(p).unwrap();
                Some(t.backward_inverse(&tr, &w, g).unwrap())
            },
            &COMPOSITE,
        )
    });
}

fn tiny_estimator(rng: &mut Rng, norm: NormKind) -> MaskEstimatorNet {
    let cfg = EstimatorConfig {
        stages: pick(rng, 1, 2),
        base_channels: 2,
        norm,
        ..EstimatorConfig::default()
    };
    let mut net = MaskEstimatorNet::new(cfg, rng).unwrap();
    randomize(&mut net, rng, 0.8);
    net
}

#[test]
fn mask_estimator() {
    for norm in [NormKind::Spectral, NormKind::Instance, NormKind::None] {
        run(&format!("estimator {norm:?}"), |rng| {
            let net = tiny_estimator(rng, norm);
            let shape = [pick(rng, 3, 9), pick(rng, 3, 9)];
            let f = uniform(rng, &shape, -1.0, 1.0);
            let w = uniform(rng, f.shape(), -1.0, 1.0);
            check_scalar_steps(
                &net,
                &f,
                |n, fp| n.estimate(fp).unwrap().dot(&w),
                |n, fp, g| {
                    let (_, tr) = n.estimate_traced(fp).unwrap();
                    Some(n.backward(&tr, &w, g).unwrap())
                },
                &COMPOSITE,
            )
        });
    }
}

#[test]
fn sdr_loss_gradient() {
    run("sdr_loss", |rng| {
        let s = uniform(rng, &[64], -1.0, 1.0);
        let n = uniform(rng, &[64], -0.5, 0.5);
        let x = s.add(&n).unwrap();
        let s_hat = uniform(rng, &[64], -1.0, 1.0);
        let cfg = LossConfig::default();
        let (_, g) = sdr_loss_with_grad(&s_hat, &s, &x, &n, &cfg).unwrap();
        let fd = liftbank_core::numerics::finite_difference_gradient(
            |y| sdr_loss(y, &s, &x, &n, &cfg).unwrap(),
            &s_hat,
            liftbank_core::numerics::DEFAULT_FD_STEP,
        )
        .unwrap();
        liftbank_core::numerics::max_relative_error(&g, &fd)
    });
}

fn pipeline_check(p: &EnhancementPipeline, rng: &mut Rng, len: usize, steps: &[f64]) -> f64 {
    let s = uniform(rng, &[len], -1.0, 1.0);
    let n = uniform(rng, &[len], -0.5, 0.5);
    let x = s.add(&n).unwrap();
    let cfg = LossConfig::default();
    check_scalar_steps(
        p,
        &x,
        |p, _| {
            let (s_hat, _) = p.enhance(&x).unwrap();
            sdr_loss(&s_hat, &s, &x, &n, &cfg).unwrap()
        },
        |p, _, g| {
            p.loss_and_grad(&x, &s, &n, &cfg, g).unwrap();
            None
        },
        steps,
    )
}

#[test]
fn pipeline_lifting_binary_mask() {
    run("pipeline J=2 T=32 binary", |rng| {
        let t = LiftingTransform::new(LiftingConfig { stages: 2, ..LiftingConfig::default() }, rng).unwrap();
        let spec = BinaryMaskSpec::new(16).unwrap();
        let p = EnhancementPipeline::new(Transform::Lifting(t), MaskSource::Binary(spec)).unwrap();
        pipeline_check(&p, rng, 32, &[DEFAULT_FD_STEP])
    });
}

#[test]
fn pipeline_lifting_estimator() {
    run("pipeline lifting + estimator", |rng| {
        let t = LiftingTransform::new(LiftingConfig { stages: 2, base_channels: 1, ..LiftingConfig::default() }, rng).unwrap();
        let net = tiny_estimator(rng, NormKind::None);
        let p = EnhancementPipeline::new(Transform::Lifting(t), MaskSource::Estimator(net)).unwrap();
        let len = 16 + 4 * rng.below(3);
        pipeline_check(&p, rng, len, &COMPOSITE)
    });
}

#[test]
fn pipeline_stft_estimator() {
    run("pipeline stft + estimator", |rng| {
        let cfg = StftConfig::hann(8, 2, 8).unwrap();
        let net = tiny_estimator(rng, NormKind::Instance);
        let p = EnhancementPipeline::new(Transform::Stft(cfg), MaskSource::Estimator(net)).unwrap();
        let len = pick(rng, 9, 20);
        pipeline_check(&p, rng, len, &COMPOSITE)
    });
}

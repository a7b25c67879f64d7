//! End-to-end acceptance suite. Every criterion runs in order and prints one
//! PASS/FAIL line; the test fails afterwards if any criterion did.
//!
//! Run with `cargo test -p liftbank --test acceptance -- --nocapture`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use liftbank::commands::{self, EvalOptions, ModelSource, LAST_CHECKPOINT, TRAINING_LOG};
use liftbank::config::RunConfig;
use liftbank::exec::PoolExecutor;
use liftbank::manifest::{write_manifest, ManifestEntry};
use liftbank::wav::{write_wav, WavClip};
use liftbank::{checkpoint, CliError};
use liftbank_core::data::synth_mixture;
use liftbank_core::irevnet::{Block, BlockSpec, LiftingConfig, LiftingTransform};
use liftbank_core::layers::{
    Activation, ActivationKind, Conv1d, Conv2d, Deconv2d, Geometry, InstanceNorm, Layer,
};
use liftbank_core::masking::{BinaryMaskSpec, EnhancementPipeline, MaskSource, Transform};
use liftbank_core::numerics::{
    finite_difference_gradient, max_relative_error, seeded_fill_uniform, DEFAULT_FD_STEP,
};
use liftbank_core::objective::{sdr_loss, si_sdr, LossConfig};
use liftbank_core::optim::{evaluate_improvement, evaluate_loss};
use liftbank_core::params::{flatten, unflatten, zeros_like};
use liftbank_core::stft::{istft, stft_forward, StftConfig};
use liftbank_core::{Parameterized, Rng, Tensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cli(e: CliError) -> String {
    e.message().to_string()
}

fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    seeded_fill_uniform(rng, shape, lo, hi).unwrap()
}

fn perfect_reconstruction() -> Outcome {
    const DRAWS: u64 = 100;
    let mut worst = 0.0f64;
    for linear in [false, true] {
        for stages in [2, 6] {
            for draw in 0..DRAWS {
                let mut rng = Rng::new(draw);
                let cfg = LiftingConfig {
                    stages,
                    linear,
                    ..LiftingConfig::default()
                };
                let t = LiftingTransform::new(cfg, &mut rng).unwrap();
                for len in [128, 16384] {
                    let x = uniform(&mut rng, &[len], -1.0, 1.0);
                    let e = t
                        .inverse(&t.forward(&x).unwrap().phi)
                        .unwrap()
                        .max_abs_diff(&x);
                    worst = worst.max(e);
                    ensure(e <= 1e-9, || {
                        format!("linear={linear} J={stages} T={len} draw {draw}: error {e:e}")
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "{} round trips, max error {worst:.2e}",
        2 * 2 * 2 * DRAWS
    ))
}

fn shape_law() -> Outcome {
    let t = LiftingTransform::new(LiftingConfig::default(), &mut Rng::new(0)).unwrap();
    let x = uniform(&mut Rng::new(1), &[6400], -1.0, 1.0);
    let phi = t.forward(&x).unwrap().phi;
    ensure(phi.shape() == [256, 100], || {
        format!("shape {:?}", phi.shape())
    })?;
    ensure(phi.len() == 4 * 6400, || format!("{} elements", phi.len()))?;
    Ok(format!(
        "T=6400 -> {:?}, {} elements",
        phi.shape(),
        phi.len()
    ))
}

fn stft_reconstruction() -> Outcome {
    let cfg = StftConfig::default();
    let mut rng = Rng::new(3);
    let mut worst = 0.0f64;
    for len in [129, 512, 2048, 16000] {
        let x = uniform(&mut rng, &[len], -1.0, 1.0);
        let e = istft(&stft_forward(&x, &cfg).unwrap(), &cfg, len)
            .unwrap()
            .max_abs_diff(&x);
        worst = worst.max(e);
        ensure(e <= 1e-10, || format!("T={len}: error {e:e}"))?;
    }
    Ok(format!("max error {worst:.2e}"))
}

/// Relative error of `sum(c * f(x))` gradients, with respect to the input
/// and every parameter, against central differences.
fn grad_error<T, F, B>(model: &T, x: &Tensor, rng: &mut Rng, f: F, back: B) -> f64
where
    T: Parameterized + Clone,
    F: Fn(&T, &Tensor) -> Tensor,
    B: Fn(&T, &Tensor, &Tensor, &mut T) -> Tensor,
{
    let c = uniform(rng, f(model, x).shape(), -1.0, 1.0);
    let mut grads = zeros_like(model);
    let gx = back(model, x, &c, &mut grads);
    let fx = finite_difference_gradient(|xp| f(model, xp).dot(&c), x, DEFAULT_FD_STEP).unwrap();
    let mut worst = max_relative_error(&gx, &fx);
    let theta = Tensor::from_vec(flatten(model));
    if !theta.is_empty() {
        let mut probe = model.clone();
        let ft = finite_difference_gradient(
            |t| {
                unflatten(&mut probe, t.data()).unwrap();
                f(&probe, x).dot(&c)
            },
            &theta,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        worst = worst.max(max_relative_error(&Tensor::from_vec(flatten(&grads)), &ft));
    }
    worst
}

fn layer_error<L: Layer>(layer: &L, x: &Tensor, rng: &mut Rng) -> f64 {
    grad_error(
        layer,
        x,
        rng,
        |l, x| l.forward(x).unwrap(),
        |l, x, c, g| l.backward(x, c, g).unwrap(),
    )
}

/// Signed magnitudes in [0.01, 3], away from the leaky ReLU kink.
fn off_kink(rng: &mut Rng, shape: &[usize]) -> Tensor {
    uniform(rng, shape, 0.01, 3.0)
        .zip_map(&uniform(rng, shape, -1.0, 1.0), |m, s| m.copysign(s))
        .unwrap()
}

fn gradients() -> Outcome {
    const TOL: f64 = 1e-4;
    const INSTANCES: u64 = 10;
    let mut worst = 0.0f64;
    let mut record = |name: &str, e: f64| -> Result<(), String> {
        worst = worst.max(e);
        ensure(e <= TOL, || format!("{name}: rel. err {e:e}"))
    };
    for i in 0..INSTANCES {
        let rng = &mut Rng::new(500 + i);
        let spectral = i % 2 == 0;
        let conv = Conv1d::new(3, 2, 3, !spectral, spectral, rng).unwrap();
        let e = layer_error(&conv, &uniform(rng, &[3, 9], -1.0, 1.0), rng);
        record("conv1d", e)?;

        let g = Geometry::new((3, 3), (2, 1), (1, 1));
        let conv = Conv2d::new(2, 3, g, true, spectral, rng).unwrap();
        let e = layer_error(&conv, &uniform(rng, &[2, 6, 6], -1.0, 1.0), rng);
        record("conv2d", e)?;

        let g = Geometry::new((4, 3), (2, 1), (1, 1));
        let deconv = Deconv2d::new(3, 2, g, true, spectral, rng).unwrap();
        let e = layer_error(&deconv, &uniform(rng, &[3, 4, 5], -1.0, 1.0), rng);
        record("deconv2d", e)?;

        let mut norm = InstanceNorm::new(3, true);
        for (_, p) in norm.params_mut() {
            for v in p.data_mut() {
                *v = rng.uniform_range(-1.5, 1.5);
            }
        }
        let e = layer_error(&norm, &uniform(rng, &[3, 4, 5], -2.0, 2.0), rng);
        record("instance norm", e)?;

        for kind in [ActivationKind::LeakyRelu(0.2), ActivationKind::Sigmoid] {
            let x = off_kink(rng, &[3, 8]);
            record("activation", layer_error(&Activation(kind), &x, rng))?;
        }

        let spec = BlockSpec {
            spectral_norm: spectral,
            ..BlockSpec::default()
        };
        let block = Block::new(2, &spec, false, rng).unwrap();
        let x = uniform(rng, &[2, 8], -1.0, 1.0);
        let e = grad_error(
            &block,
            &x,
            rng,
            |b, x| b.forward(x).unwrap(),
            |b, x, c, g| b.backward(x, c, g).unwrap(),
        );
        record("lifting block", e)?;

        // full pipeline: J=2 lifting, fixed binary mask, T=32, SDR loss
        let t = LiftingTransform::new(
            LiftingConfig {
                stages: 2,
                ..LiftingConfig::default()
            },
            rng,
        )
        .unwrap();
        let mask = BinaryMaskSpec::new(16).unwrap();
        let p = EnhancementPipeline::new(Transform::Lifting(t), MaskSource::Binary(mask)).unwrap();
        let s = uniform(rng, &[32], -1.0, 1.0);
        let n = uniform(rng, &[32], -0.5, 0.5);
        let x = s.add(&n).unwrap();
        let loss = LossConfig::default();
        let mut grads = zeros_like(&p);
        p.loss_and_grad(&x, &s, &n, &loss, &mut grads).unwrap();
        let theta = Tensor::from_vec(flatten(&p));
        let mut probe = p.clone();
        let fd = finite_difference_gradient(
            |th| {
                unflatten(&mut probe, th.data()).unwrap();
                sdr_loss(&probe.enhance(&x).unwrap().0, &s, &x, &n, &loss).unwrap()
            },
            &theta,
            DEFAULT_FD_STEP,
        )
        .unwrap();
        record(
            "pipeline",
            max_relative_error(&Tensor::from_vec(flatten(&grads)), &fd),
        )?;
    }
    Ok(format!(
        "worst rel. err {worst:.2e} at h={DEFAULT_FD_STEP:e}"
    ))
}

fn si_sdr_algebra() -> Outcome {
    let mut rng = Rng::new(7);
    let mut worst = 0.0f64;
    for pair in 0..1000 {
        let len = 2 + rng.below(500);
        let s = uniform(&mut rng, &[len], -1.0, 1.0);
        let s_hat = uniform(&mut rng, &[len], -1.0, 1.0);
        let c = rng.uniform_range(1e-3, 1e3) * if rng.below(2) == 0 { 1.0 } else { -1.0 };
        let d = (si_sdr(&s, &s_hat).unwrap() - si_sdr(&s, &s_hat.scale(c)).unwrap()).abs();
        worst = worst.max(d);
        ensure(d <= 1e-9, || format!("pair {pair}, scale {c}: {d:e} dB"))?;
    }
    let hand = si_sdr(
        &Tensor::from_slice(&[1.0, 0.0]),
        &Tensor::from_slice(&[1.0, 1.0]),
    )
    .unwrap();
    ensure(hand == 0.0, || {
        format!("s=[1,0], s_hat=[1,1] gives {hand} dB")
    })?;
    Ok(format!(
        "max scale deviation {worst:.2e} dB over 1000 pairs, hand case {hand} dB"
    ))
}

fn linear_additivity() -> Outcome {
    let mut rng = Rng::new(11);
    let mut worst = 0.0f64;
    for draw in 0..20 {
        let cfg = LiftingConfig {
            linear: true,
            ..LiftingConfig::default()
        };
        let t = LiftingTransform::new(cfg, &mut rng).unwrap();
        let x = uniform(&mut rng, &[cfg.length_multiple() * 50], -1.0, 1.0);
        let phi = t.forward(&x).unwrap().phi;
        let m = uniform(&mut rng, phi.shape(), 0.0, 1.0);
        let a = t.inverse(&phi.mul(&m).unwrap()).unwrap();
        let b = t.inverse(&phi.mul(&m.map(|v| 1.0 - v)).unwrap()).unwrap();
        let e = a.add(&b).unwrap().max_abs_diff(&x);
        worst = worst.max(e);
        ensure(e <= 1e-9, || {
            format!("draw {draw}, random mask: error {e:e}")
        })?;

        let spec = BinaryMaskSpec::new(phi.dim(0)).unwrap();
        let p = EnhancementPipeline::new(
            Transform::Lifting(t.clone()),
            MaskSource::Binary(spec.clone()),
        )
        .unwrap();
        let q =
            EnhancementPipeline::new(Transform::Lifting(t), MaskSource::Binary(spec.complement()))
                .unwrap();
        let e = p
            .enhance(&x)
            .unwrap()
            .0
            .add(&q.enhance(&x).unwrap().0)
            .unwrap()
            .max_abs_diff(&x);
        worst = worst.max(e);
        ensure(e <= 1e-9, || {
            format!("draw {draw}, binary mask: error {e:e}")
        })?;
    }
    Ok(format!("max error {worst:.2e}"))
}

const DESK_CONFIG: &str = "\
seed = 2024
transform = lifting
mask = binary
data.synthetic_count = 200
data.duration_s = 1.0
data.snr_min_db = 0
data.snr_max_db = 10
train.batch_size = 8
train.crop = 4096
train.epochs = 1000
train.max_steps = 200
train.lr = 1e-3
train.validation_fraction = 0
";

fn desk_run(dir: &Path) -> Result<(RunConfig, commands::TrainSummary), String> {
    let mut cfg = RunConfig::parse(DESK_CONFIG).map_err(cli)?;
    cfg.output_dir = dir.to_path_buf();
    let summary = commands::train_with(&cfg).map_err(cli)?;
    Ok((cfg, summary))
}

fn desk_training(dir: &Path) -> Outcome {
    let started = Instant::now();
    let (cfg, summary) = desk_run(dir)?;
    let (_, trained) = checkpoint::load(&dir.join(LAST_CHECKPOINT)).map_err(cli)?;
    let exec = PoolExecutor::from_env();
    let train = commands::synthetic_dataset(&cfg, cfg.synthetic.count, 0).map_err(cli)?;
    let held_out = commands::synthetic_dataset(&cfg, 40, 1).map_err(cli)?;
    let final_loss =
        evaluate_loss(&trained, &train, &cfg.loss_config(), &exec).map_err(|e| e.to_string())?;
    let imp = evaluate_improvement(&trained, &held_out, &exec).map_err(|e| e.to_string())?;
    let detail = format!(
        "{} steps, training loss {:.4} -> {final_loss:.4}, held-out SI-SDR imp. {imp:.2} dB, {:.0} s",
        summary.steps,
        summary.initial_loss,
        started.elapsed().as_secs_f64()
    );
    ensure(summary.steps <= 2000, || {
        format!("{detail}: too many steps")
    })?;
    ensure(final_loss < summary.initial_loss, || {
        format!("{detail}: loss did not decrease")
    })?;
    ensure(imp > 0.0, || format!("{detail}: no improvement"))?;
    Ok(detail)
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    if !first.join(LAST_CHECKPOINT).exists() {
        desk_run(first)?;
    }
    desk_run(second)?;
    let files = [commands::BEST_CHECKPOINT, LAST_CHECKPOINT, TRAINING_LOG];
    for f in files {
        let (a, b) = (
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(second.join(f)).unwrap(),
        );
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    Ok(format!(
        "{} identical across two seeded runs",
        files.join(", ")
    ))
}

fn identity_metrics() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(13);
    let mut entries = Vec::new();
    for i in 0..6 {
        let snr = rng.uniform_range(-5.0, 15.0);
        let m = synth_mixture(&mut rng, 0.5 + 0.13 * i as f64, snr, 16000).unwrap();
        let peak =
            m.x.data()
                .iter()
                .chain(m.s.data())
                .fold(0.0f64, |a, v| a.max(v.abs()));
        let (clean, noisy) = (format!("clean{i}.wav"), format!("noisy{i}.wav"));
        for (name, t) in [(&clean, &m.s), (&noisy, &m.x)] {
            let samples = t.scale(0.9 / peak);
            write_wav(
                &WavClip {
                    samples,
                    sample_rate: 16000,
                },
                &dir.path().join(name),
            )
            .unwrap();
        }
        entries.push(ManifestEntry {
            clean: clean.into(),
            noisy: noisy.into(),
        });
    }
    let manifest = dir.path().join("pairs.tsv");
    write_manifest(&manifest, &entries).unwrap();
    let source = ModelSource {
        ones_mask: true,
        ..ModelSource::default()
    };
    let out = dir.path().join("metrics.csv");
    let summary = commands::eval(&source, &manifest, &out, &EvalOptions::default()).map_err(cli)?;
    ensure(summary.skipped.is_empty(), || {
        format!("skipped {:?}", summary.skipped)
    })?;
    let rows = &summary.report.rows;
    ensure(rows.len() == entries.len(), || {
        format!("{} rows", rows.len())
    })?;
    let worst = rows
        .iter()
        .map(|r| r.improvement.abs())
        .fold(0.0f64, f64::max);
    ensure(worst <= 1e-6, || format!("improvement off by {worst:e} dB"))?;
    Ok(format!(
        "{} utterances, mean imp. {:.2} dB, max |imp.| {worst:.2e} dB",
        rows.len(),
        summary.report.mean_improvement()
    ))
}

#[test]
fn acceptance() {
    let runs = tempfile::tempdir().unwrap();
    let (first, second) = (runs.path().join("a"), runs.path().join("b"));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("perfect reconstruction", Box::new(perfect_reconstruction)),
        ("shape law", Box::new(shape_law)),
        ("stft reconstruction", Box::new(stft_reconstruction)),
        ("gradient correctness", Box::new(gradients)),
        ("si-sdr algebra", Box::new(si_sdr_algebra)),
        ("linear mask additivity", Box::new(linear_additivity)),
        ("desk-scale training", Box::new(|| desk_training(&first))),
        ("determinism", Box::new(|| determinism(&first, &second))),
        ("identity metrics", Box::new(identity_metrics)),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                println!("FAIL {} {name}: {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}

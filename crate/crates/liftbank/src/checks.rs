//! Property suites behind `liftbank check`.
//!
//! Each suite reports its worst-case error against a fixed tolerance. With
//! `corrupt` set the suite deliberately breaks the system under test (a
//! perturbed inverse-side parameter, a perturbed spectrogram bin, a perturbed
//! analytic gradient) and must then fail; this is the negative control.

use liftbank_core::irevnet::{LiftingConfig, LiftingTransform};
use liftbank_core::masking::{BinaryMaskSpec, EnhancementPipeline, MaskSource, Transform};
use liftbank_core::numerics::{
    finite_difference_gradient, max_relative_error, seeded_fill_uniform, DEFAULT_FD_STEP,
};
use liftbank_core::objective::{sdr_loss, LossConfig};
use liftbank_core::params::{flatten, unflatten, zeros_like};
use liftbank_core::stft::{istft, stft_forward, StftConfig};
use liftbank_core::{Parameterized, Rng, Tensor};

use crate::CliError;

pub const PR_TOL: f64 = 1e-9;
pub const STFT_PR_TOL: f64 = 1e-10;
pub const GRAD_TOL: f64 = 1e-4;

/// Lengths always covered by the STFT suite, including non-multiples of
/// the hop.
pub const STFT_LENGTHS: [usize; 4] = [129, 512, 2048, 16000];

/// Size of the deliberate perturbation in corrupted runs.
const CORRUPTION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    Pr,
    StftPr,
    Gradcheck,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Pr => "pr",
            CheckKind::StftPr => "stft-pr",
            CheckKind::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub kind: CheckKind,
    pub trials: usize,
    pub worst: f64,
    /// Trial index of the worst error.
    pub worst_trial: usize,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} over {} trials, max error {:.3e} (trial {}, {}), tolerance {:.0e}",
            self.kind.name(),
            if self.passed() { "pass" } else { "FAIL" },
            self.trials,
            self.worst,
            self.worst_trial,
            self.detail,
            self.tolerance,
        )
    }

    pub fn into_result(self) -> Result<CheckReport, CliError> {
        if self.passed() {
            Ok(self)
        } else {
            Err(CliError::Failure(self.summary()))
        }
    }
}

fn track(worst: &mut (f64, usize, String), e: f64, trial: usize, detail: impl FnOnce() -> String) {
    // NaN counts as the worst possible outcome
    if e.is_nan() || e > worst.0 || trial == 0 {
        *worst = (if e.is_nan() { f64::INFINITY } else { e }, trial, detail());
    }
}

fn perturb_first_param(t: &mut LiftingTransform) {
    if let Some((_, p)) = t.params_mut().into_iter().find(|(_, p)| !p.is_empty()) {
        p.data_mut()[0] += CORRUPTION;
    }
}

/// Round trip of the lifting transform. `fixed` pins the parameters (a
/// checkpoint's transform); otherwise every trial draws fresh parameters
/// for `cfg`. Lengths are random multiples of the transform's block size.
pub fn lifting_pr(
    cfg: &LiftingConfig,
    fixed: Option<&LiftingTransform>,
    trials: usize,
    seed: u64,
    corrupt: bool,
) -> Result<CheckReport, CliError> {
    let mut rng = Rng::new(seed);
    let mut worst = (0.0, 0, String::new());
    for trial in 0..trials {
        let t = match fixed {
            Some(t) => t.clone(),
            None => LiftingTransform::new(*cfg, &mut rng)?,
        };
        let len = t.config.length_multiple() * (1 + rng.below(4));
        let x = seeded_fill_uniform(&mut rng, &[len], -1.0, 1.0)?;
        let phi = t.forward(&x)?.phi;
        let mut inv = t.clone();
        if corrupt {
            perturb_first_param(&mut inv);
        }
        let e = inv.inverse(&phi)?.max_abs_diff(&x);
        track(&mut worst, e, trial, || format!("T={len}"));
    }
    Ok(CheckReport {
        kind: CheckKind::Pr,
        trials,
        worst: worst.0,
        worst_trial: worst.1,
        tolerance: PR_TOL,
        detail: worst.2,
    })
}

/// STFT round trip over [`STFT_LENGTHS`] followed by random lengths.
pub fn stft_pr(
    cfg: &StftConfig,
    trials: usize,
    seed: u64,
    corrupt: bool,
) -> Result<CheckReport, CliError> {
    let mut rng = Rng::new(seed);
    let mut worst = (0.0, 0, String::new());
    let trials = trials.max(STFT_LENGTHS.len());
    for trial in 0..trials {
        let len = STFT_LENGTHS
            .get(trial)
            .copied()
            .unwrap_or_else(|| 1 + rng.below(20000));
        let x = seeded_fill_uniform(&mut rng, &[len], -1.0, 1.0)?;
        let mut s = stft_forward(&x, cfg)?;
        if corrupt {
            s.re.data_mut()[1] += CORRUPTION;
        }
        let e = istft(&s, cfg, len)?.max_abs_diff(&x);
        track(&mut worst, e, trial, || format!("T={len}"));
    }
    Ok(CheckReport {
        kind: CheckKind::StftPr,
        trials,
        worst: worst.0,
        worst_trial: worst.1,
        tolerance: STFT_PR_TOL,
        detail: worst.2,
    })
}

/// Length of the end-to-end gradient check signal.
pub const GRADCHECK_LEN: usize = 32;
/// Depth of the end-to-end gradient check transform.
pub const GRADCHECK_STAGES: usize = 2;

/// Central-difference check of the full pipeline gradient (transform, fixed
/// binary mask, inverse, SDR loss) with respect to every parameter.
pub fn pipeline_gradcheck(
    cfg: &LiftingConfig,
    loss: &LossConfig,
    trials: usize,
    seed: u64,
    corrupt: bool,
) -> Result<CheckReport, CliError> {
    let cfg = LiftingConfig {
        stages: GRADCHECK_STAGES,
        ..*cfg
    };
    let mut rng = Rng::new(seed);
    let mut worst = (0.0, 0, String::new());
    for trial in 0..trials {
        let t = LiftingTransform::new(cfg, &mut rng)?;
        let spec = BinaryMaskSpec::new(2 * cfg.stage_channels(cfg.stages))?;
        let p = EnhancementPipeline::new(Transform::Lifting(t), MaskSource::Binary(spec))?;
        let s = seeded_fill_uniform(&mut rng, &[GRADCHECK_LEN], -1.0, 1.0)?;
        let n = seeded_fill_uniform(&mut rng, &[GRADCHECK_LEN], -0.5, 0.5)?;
        let x = s.add(&n)?;

        let mut grads = zeros_like(&p);
        p.loss_and_grad(&x, &s, &n, loss, &mut grads)?;
        let mut analytic = Tensor::from_vec(flatten(&grads));
        if corrupt {
            analytic.data_mut()[0] += CORRUPTION * (1.0 + analytic.data()[0].abs());
        }

        let theta = Tensor::from_vec(flatten(&p));
        let mut probe = p.clone();
        let mut failure = None;
        let fd = finite_difference_gradient(
            |th| {
                unflatten(&mut probe, th.data()).expect("same layout");
                match probe
                    .enhance(&x)
                    .and_then(|(s_hat, _)| sdr_loss(&s_hat, &s, &x, &n, loss))
                {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            },
            &theta,
            DEFAULT_FD_STEP,
        )?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        let e = max_relative_error(&analytic, &fd);
        track(&mut worst, e, trial, || {
            format!("{} parameters", theta.len())
        });
    }
    Ok(CheckReport {
        kind: CheckKind::Gradcheck,
        trials,
        worst: worst.0,
        worst_trial: worst.1,
        tolerance: GRAD_TOL,
        detail: worst.2,
    })
}

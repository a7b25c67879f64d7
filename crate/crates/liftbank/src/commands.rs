//! Subcommand implementations. Each returns a summary on success or a
//! [`CliError`] carrying the exit code.

use std::path::{Path, PathBuf};

use liftbank_core::data::{synth_mixture, MixtureTriple};
use liftbank_core::masking::{EnhancementPipeline, MaskSource, Transform};
use liftbank_core::objective::{MetricReport, UtteranceMetric};
use liftbank_core::optim::{train as run_training, EpochRecord, Executor};
use liftbank_core::Tensor;
use log::{info, warn};

use crate::checks::{self, CheckKind, CheckReport};
use crate::config::RunConfig;
use crate::exec::PoolExecutor;
use crate::manifest::{read_manifest, ManifestEntry};
use crate::wav::{read_wav, write_wav, WavClip};
use crate::{checkpoint, report, CliError};

pub const BEST_CHECKPOINT: &str = "best.lfbk";
pub const LAST_CHECKPOINT: &str = "last.lfbk";
pub const TRAINING_LOG: &str = "train_log.csv";
pub const RESOLVED_CONFIG: &str = "config.txt";

fn load_pair(e: &ManifestEntry) -> Result<(WavClip, WavClip), CliError> {
    Ok((read_wav(&e.clean)?, read_wav(&e.noisy)?))
}

/// Training data: the manifest's pairs, or a seeded synthetic corpus.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<MixtureTriple>, CliError> {
    match &cfg.manifest {
        Some(m) => {
            let mut out = Vec::new();
            for e in read_manifest(m)? {
                let (s, x) = load_pair(&e)?;
                if s.sample_rate != x.sample_rate {
                    return Err(CliError::Usage(format!("{}: sample rates differ", e.id())));
                }
                out.push(MixtureTriple::from_clean_noisy(s.samples, x.samples)?);
            }
            Ok(out)
        }
        None => synthetic_dataset(cfg, cfg.synthetic.count, 0),
    }
}

/// `count` synthetic mixtures. `stream` separates disjoint corpora drawn
/// from the same seed, such as training and held-out sets.
pub fn synthetic_dataset(
    cfg: &RunConfig,
    count: usize,
    stream: u64,
) -> Result<Vec<MixtureTriple>, CliError> {
    let syn = &cfg.synthetic;
    let mut rng = cfg.data_rng().fork(stream);
    (0..count)
        .map(|_| {
            let snr = rng.uniform_range(syn.snr_min_db, syn.snr_max_db);
            Ok(synth_mixture(
                &mut rng,
                syn.duration_s,
                snr,
                cfg.sample_rate,
            )?)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub initial_loss: f64,
    pub best_epoch: usize,
    pub best: PathBuf,
    pub last: PathBuf,
    pub log: PathBuf,
}

/// Trains from a config file, writing checkpoints, the log and the resolved
/// config into the configured output directory.
pub fn train(config: &Path) -> Result<TrainSummary, CliError> {
    let cfg = RunConfig::from_file(config)?;
    train_with(&cfg)
}

pub fn train_with(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let data = load_dataset(cfg)?;
    let exec = PoolExecutor::from_env();
    let mut pipeline = cfg.build_pipeline()?;
    let tc = cfg.train_config();
    let initial_loss = liftbank_core::optim::evaluate_loss(&pipeline, &data, &tc.loss, &exec)?;
    info!(
        "training on {} utterances with {} threads, initial loss {initial_loss:.4}",
        data.len(),
        exec.threads()
    );
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    let out = run_training(&mut pipeline, &data, &tc, &exec, |r, _| {
        info!(
            "epoch {} step {}: train {:.4} val {:.4} val SI-SDR imp. {:.2} dB",
            r.epoch, r.steps, r.train_loss, r.val_loss, r.val_si_sdr_imp
        );
    })?;
    let dir = &cfg.output_dir;
    let (best, last, log) = (
        dir.join(BEST_CHECKPOINT),
        dir.join(LAST_CHECKPOINT),
        dir.join(TRAINING_LOG),
    );
    checkpoint::save(&best, cfg, &out.best)?;
    checkpoint::save(&last, cfg, &pipeline)?;
    report::write_training_log(&log, &out.history)?;
    std::fs::write(dir.join(RESOLVED_CONFIG), cfg.to_text())?;
    Ok(TrainSummary {
        steps: out.step_losses.len(),
        history: out.history,
        initial_loss,
        best_epoch: out.best_epoch,
        best,
        last,
        log,
    })
}

/// Where the enhancement model comes from.
#[derive(Clone, Debug, Default)]
pub struct ModelSource {
    pub checkpoint: Option<PathBuf>,
    pub config: Option<PathBuf>,
    /// Replace the mask with all ones (identity debugging path).
    pub ones_mask: bool,
}

impl ModelSource {
    /// A checkpoint wins; a config alone gives a freshly initialized model;
    /// neither gives the defaults. With both, their model settings must agree.
    pub fn resolve(&self) -> Result<(RunConfig, EnhancementPipeline), CliError> {
        let from_config = self
            .config
            .as_deref()
            .map(RunConfig::from_file)
            .transpose()?;
        let (cfg, mut pipeline) = match (&self.checkpoint, from_config) {
            (Some(ck), cfg) => {
                let (stored, p) = checkpoint::load(ck)?;
                if let Some(c) = &cfg {
                    if c.model_text() != stored.model_text() {
                        return Err(CliError::Usage(format!(
                            "config does not match checkpoint {}:\n{}",
                            ck.display(),
                            config_diff(&stored.model_text(), &c.model_text())
                        )));
                    }
                }
                (cfg.unwrap_or(stored), p)
            }
            (None, Some(c)) => {
                let p = c.build_pipeline()?;
                (c, p)
            }
            (None, None) => {
                let c = RunConfig::default();
                let p = c.build_pipeline()?;
                (c, p)
            }
        };
        if self.ones_mask {
            pipeline.mask = MaskSource::Ones;
        }
        Ok((cfg, pipeline))
    }
}

fn config_diff(stored: &str, given: &str) -> String {
    stored
        .lines()
        .zip(given.lines())
        .filter(|(a, b)| a != b)
        .map(|(a, b)| format!("  checkpoint: {a}\n  config:     {b}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn enhance(source: &ModelSource, input: &Path, output: &Path) -> Result<usize, CliError> {
    let (_, pipeline) = source.resolve()?;
    let clip = read_wav(input)?;
    let (s_hat, _) = pipeline.enhance(&clip.samples)?;
    write_wav(
        &WavClip {
            samples: s_hat,
            sample_rate: clip.sample_rate,
        },
        output,
    )?;
    Ok(clip.samples.len())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckOptions {
    pub trials: Option<usize>,
    pub corrupt: bool,
}

pub fn check(
    kind: CheckKind,
    source: &ModelSource,
    opts: CheckOptions,
) -> Result<CheckReport, CliError> {
    let (cfg, pipeline) = source.resolve()?;
    let seed = cfg.seed;
    let report = match kind {
        CheckKind::Pr => match &pipeline.transform {
            Transform::Lifting(t) => {
                let fixed = source.checkpoint.is_some().then_some(t);
                checks::lifting_pr(
                    &cfg.lifting,
                    fixed,
                    opts.trials.unwrap_or(100),
                    seed,
                    opts.corrupt,
                )?
            }
            Transform::Stft(st) => {
                checks::stft_pr(st, opts.trials.unwrap_or(100), seed, opts.corrupt)?
            }
        },
        CheckKind::StftPr => checks::stft_pr(
            &cfg.stft_config()?,
            opts.trials.unwrap_or(20),
            seed,
            opts.corrupt,
        )?,
        // always the lifting pipeline with the fixed binary mask
        CheckKind::Gradcheck => checks::pipeline_gradcheck(
            &cfg.lifting,
            &cfg.loss_config(),
            opts.trials.unwrap_or(5),
            seed,
            opts.corrupt,
        )?,
    };
    report.into_result()
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Score the clean reference itself instead of the enhanced signal.
    pub oracle: bool,
    /// Directory for per-utterance magnitude and mask CSVs.
    pub export_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub report: MetricReport,
    /// Ids of pairs whose members differ in length.
    pub skipped: Vec<String>,
}

struct Scored {
    metric: UtteranceMetric,
    export: Option<(Tensor, Tensor, Tensor)>,
}

pub fn eval(
    source: &ModelSource,
    manifest: &Path,
    out_csv: &Path,
    opts: &EvalOptions,
) -> Result<EvalSummary, CliError> {
    let (_, pipeline) = source.resolve()?;
    let entries = read_manifest(manifest)?;
    let exec = PoolExecutor::from_env();
    let want_export = opts.export_dir.is_some();
    let results = exec.map(&entries, |e| -> Result<Option<Scored>, CliError> {
        let (s, x) = load_pair(e)?;
        if s.samples.len() != x.samples.len() {
            warn!(
                "{}: clean has {} samples, noisy has {}; skipped",
                e.id(),
                s.samples.len(),
                x.samples.len()
            );
            return Ok(None);
        }
        let (s, x) = (s.samples, x.samples);
        let s_hat = if opts.oracle {
            s.clone()
        } else {
            pipeline.enhance(&x)?.0
        };
        let metric = UtteranceMetric::evaluate(e.id(), &s, &s_hat, &x)?;
        let export = if want_export {
            let mag = pipeline.magnitude_for(&x)?;
            let mask = pipeline.mask_for(&x)?;
            let masked = mag.mul(&mask)?;
            Some((mag, mask, masked))
        } else {
            None
        };
        Ok(Some(Scored { metric, export }))
    });

    let mut rep = MetricReport::default();
    let mut skipped = Vec::new();
    let mut exports = Vec::new();
    for (e, r) in entries.iter().zip(results) {
        match r? {
            Some(sc) => {
                if let Some(ex) = sc.export {
                    exports.push((sc.metric.id.clone(), ex));
                }
                rep.push(sc.metric);
            }
            None => skipped.push(e.id()),
        }
    }
    report::write_metrics(out_csv, &rep)?;
    if let Some(dir) = &opts.export_dir {
        std::fs::create_dir_all(dir)?;
        for (id, (mag, mask, masked)) in exports {
            report::write_matrix(&dir.join(format!("{id}_mixture.csv")), &mag)?;
            report::write_matrix(&dir.join(format!("{id}_mask.csv")), &mask)?;
            report::write_matrix(&dir.join(format!("{id}_enhanced.csv")), &masked)?;
        }
    }
    Ok(EvalSummary {
        report: rep,
        skipped,
    })
}

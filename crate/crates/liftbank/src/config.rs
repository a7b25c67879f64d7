//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, unknown
//! keys are rejected, and the whole file is validated before any work starts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use liftbank_core::irevnet::{BlockSpec, LiftingConfig, LiftingTransform};
use liftbank_core::layers::NormKind;
use liftbank_core::masking::{
    BinaryMaskSpec, EnhancementPipeline, EstimatorConfig, MaskEstimatorNet, MaskSource, Transform,
};
use liftbank_core::objective::LossConfig;
use liftbank_core::optim::{AdamConfig, TrainConfig, Trainable};
use liftbank_core::stft::StftConfig;
use liftbank_core::Rng;

use crate::CliError;

/// RNG stream used for parameter initialization.
const INIT_STREAM: u64 = 0x1417;
/// RNG stream used for synthetic data.
const DATA_STREAM: u64 = 0xda7a;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Lifting,
    Stft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Binary,
    Estimator,
    Ones,
}

/// Synthetic corpus settings, used when no manifest is given.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticData {
    pub count: usize,
    pub duration_s: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub transform: TransformKind,
    pub mask: MaskKind,
    pub lifting: LiftingConfig,
    pub stft: (usize, usize, usize),
    pub estimator: EstimatorConfig,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticData,
    pub sample_rate: u32,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            transform: TransformKind::Lifting,
            mask: MaskKind::Binary,
            lifting: LiftingConfig::default(),
            stft: (512, 128, 512),
            estimator: EstimatorConfig::default(),
            train: TrainConfig::default(),
            manifest: None,
            synthetic: SyntheticData {
                count: 20,
                duration_s: 1.0,
                snr_min_db: 0.0,
                snr_max_db: 10.0,
            },
            sample_rate: liftbank_core::data::SAMPLE_RATE,
            output_dir: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "invalid boolean {value:?} for {key}"
        ))),
    }
}

/// `none` or `0` disables an optional count.
fn parse_opt(key: &str, value: &str) -> Result<Option<usize>, CliError> {
    if value == "none" {
        return Ok(None);
    }
    let v: usize = parse(key, value)?;
    Ok((v > 0).then_some(v))
}

fn norm_name(n: NormKind) -> &'static str {
    match n {
        NormKind::Spectral => "spectral",
        NormKind::Instance => "instance",
        NormKind::None => "none",
    }
}

fn trainable_name(t: Trainable) -> &'static str {
    match t {
        Trainable::Transform => "transform",
        Trainable::Mask => "mask",
        Trainable::Both => "both",
        Trainable::Frozen => "frozen",
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative paths are taken from the config file's directory
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                cfg.manifest = Some(base.join(m));
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), no + 1).is_some() {
                return Err(CliError::Usage(format!(
                    "line {}: duplicate key {key}",
                    no + 1
                )));
            }
            cfg.set(key, value)
                .map_err(|e| CliError::Usage(format!("line {}: {}", no + 1, e.message())))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let block = &mut self.lifting.block;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "transform" => {
                self.transform = match v {
                    "lifting" => TransformKind::Lifting,
                    "stft" => TransformKind::Stft,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "transform must be lifting or stft, got {v:?}"
                        )))
                    }
                }
            }
            "mask" => {
                self.mask = match v {
                    "binary" => MaskKind::Binary,
                    "estimator" => MaskKind::Estimator,
                    "ones" => MaskKind::Ones,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "mask must be binary, estimator or ones, got {v:?}"
                        )))
                    }
                }
            }
            "lifting.stages" => self.lifting.stages = parse(key, v)?,
            "lifting.base_channels" => self.lifting.base_channels = parse(key, v)?,
            "lifting.linear" => self.lifting.linear = parse_bool(key, v)?,
            "lifting.kernel" => block.kernel = parse(key, v)?,
            "lifting.depth" => block.depth = parse(key, v)?,
            "lifting.hidden_mult" => block.hidden_mult = parse(key, v)?,
            "lifting.spectral_norm" => block.spectral_norm = parse_bool(key, v)?,
            "lifting.slope" => block.slope = parse(key, v)?,
            "stft.window" => self.stft.0 = parse(key, v)?,
            "stft.hop" => self.stft.1 = parse(key, v)?,
            "stft.dft" => self.stft.2 = parse(key, v)?,
            "estimator.stages" => self.estimator.stages = parse(key, v)?,
            "estimator.base_channels" => self.estimator.base_channels = parse(key, v)?,
            "estimator.slope" => self.estimator.slope = parse(key, v)?,
            "estimator.norm" => {
                self.estimator.norm = match v {
                    "spectral" => NormKind::Spectral,
                    "instance" => NormKind::Instance,
                    "none" => NormKind::None,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "estimator.norm must be spectral, instance or none, got {v:?}"
                        )))
                    }
                }
            }
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.max_steps" => self.train.max_steps = parse_opt(key, v)?,
            "train.crop" => self.train.crop = parse_opt(key, v)?,
            "train.validation_fraction" => self.train.validation_fraction = parse(key, v)?,
            "train.spectral_iters" => self.train.spectral_iters = parse(key, v)?,
            "train.lr" => self.train.adam.lr = parse(key, v)?,
            "train.beta1" => self.train.adam.beta1 = parse(key, v)?,
            "train.beta2" => self.train.adam.beta2 = parse(key, v)?,
            "train.adam_eps" => self.train.adam.eps = parse(key, v)?,
            "train.trainable" => {
                self.train.trainable = match v {
                    "transform" => Trainable::Transform,
                    "mask" => Trainable::Mask,
                    "both" => Trainable::Both,
                    "frozen" => Trainable::Frozen,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "train.trainable must be transform, mask, both or frozen, got {v:?}"
                        )))
                    }
                }
            }
            "loss.beta" => self.train.loss.beta_clip = parse(key, v)?,
            "loss.eps" => self.train.loss.eps = parse(key, v)?,
            "data.manifest" => self.manifest = Some(PathBuf::from(v)),
            "data.synthetic_count" => self.synthetic.count = parse(key, v)?,
            "data.duration_s" => self.synthetic.duration_s = parse(key, v)?,
            "data.snr_min_db" => self.synthetic.snr_min_db = parse(key, v)?,
            "data.snr_max_db" => self.synthetic.snr_max_db = parse(key, v)?,
            "data.sample_rate" => self.sample_rate = parse(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(CliError::Usage(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.lifting.validate()?;
        self.estimator.validate()?;
        self.stft_config()?;
        let mut train = self.train;
        train.seed = self.seed;
        train.validate()?;
        let s = &self.synthetic;
        if self.manifest.is_none() && s.count == 0 {
            return Err(CliError::Usage(
                "data.synthetic_count must be positive without a manifest".into(),
            ));
        }
        if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
            return Err(CliError::Usage("data.duration_s must be positive".into()));
        }
        if !(s.snr_min_db <= s.snr_max_db && s.snr_min_db.is_finite() && s.snr_max_db.is_finite()) {
            return Err(CliError::Usage(
                "data.snr_min_db must not exceed data.snr_max_db".into(),
            ));
        }
        if self.sample_rate == 0 {
            return Err(CliError::Usage("data.sample_rate must be positive".into()));
        }
        if self.transform == TransformKind::Stft && self.mask == MaskKind::Binary {
            return Err(CliError::Usage(
                "the binary mask is defined on lifting channels only".into(),
            ));
        }
        Ok(())
    }

    pub fn stft_config(&self) -> Result<StftConfig, CliError> {
        let (w, h, n) = self.stft;
        Ok(StftConfig::hann(w, h, n)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        self.train.loss
    }

    pub fn adam_config(&self) -> AdamConfig {
        self.train.adam
    }

    pub fn data_rng(&self) -> Rng {
        Rng::new(self.seed).fork(DATA_STREAM)
    }

    /// Freshly initialized pipeline; deterministic in the seed.
    pub fn build_pipeline(&self) -> Result<EnhancementPipeline, CliError> {
        let mut rng = Rng::new(self.seed).fork(INIT_STREAM);
        let transform = match self.transform {
            TransformKind::Lifting => {
                Transform::Lifting(LiftingTransform::new(self.lifting, &mut rng)?)
            }
            TransformKind::Stft => Transform::Stft(self.stft_config()?),
        };
        let mask = match self.mask {
            MaskKind::Binary => {
                let c = 2 * self.lifting.stage_channels(self.lifting.stages);
                MaskSource::Binary(BinaryMaskSpec::new(c)?)
            }
            MaskKind::Estimator => {
                MaskSource::Estimator(MaskEstimatorNet::new(self.estimator, &mut rng)?)
            }
            MaskKind::Ones => MaskSource::Ones,
        };
        Ok(EnhancementPipeline::new(transform, mask)?)
    }

    /// Canonical text of every setting that shapes the model. Stored in
    /// checkpoints and compared on load.
    pub fn model_text(&self) -> String {
        let b: &BlockSpec = &self.lifting.block;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv(
            "transform",
            match self.transform {
                TransformKind::Lifting => "lifting",
                TransformKind::Stft => "stft",
            }
            .into(),
        );
        kv(
            "mask",
            match self.mask {
                MaskKind::Binary => "binary",
                MaskKind::Estimator => "estimator",
                MaskKind::Ones => "ones",
            }
            .into(),
        );
        kv("lifting.stages", self.lifting.stages.to_string());
        kv(
            "lifting.base_channels",
            self.lifting.base_channels.to_string(),
        );
        kv("lifting.linear", self.lifting.linear.to_string());
        kv("lifting.kernel", b.kernel.to_string());
        kv("lifting.depth", b.depth.to_string());
        kv("lifting.hidden_mult", b.hidden_mult.to_string());
        kv("lifting.spectral_norm", b.spectral_norm.to_string());
        kv("lifting.slope", b.slope.to_string());
        kv("stft.window", self.stft.0.to_string());
        kv("stft.hop", self.stft.1.to_string());
        kv("stft.dft", self.stft.2.to_string());
        kv("estimator.stages", self.estimator.stages.to_string());
        kv(
            "estimator.base_channels",
            self.estimator.base_channels.to_string(),
        );
        kv("estimator.norm", norm_name(self.estimator.norm).into());
        kv("estimator.slope", self.estimator.slope.to_string());
        s
    }

    /// Every setting, in the syntax [`RunConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |v| v.to_string());
        let mut s = self.model_text();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.max_steps", opt(t.max_steps));
        kv("train.crop", opt(t.crop));
        kv(
            "train.validation_fraction",
            t.validation_fraction.to_string(),
        );
        kv("train.spectral_iters", t.spectral_iters.to_string());
        kv("train.lr", t.adam.lr.to_string());
        kv("train.beta1", t.adam.beta1.to_string());
        kv("train.beta2", t.adam.beta2.to_string());
        kv("train.adam_eps", t.adam.eps.to_string());
        kv("train.trainable", trainable_name(t.trainable).into());
        kv("loss.beta", t.loss.beta_clip.to_string());
        kv("loss.eps", t.loss.eps.to_string());
        if let Some(m) = &self.manifest {
            kv("data.manifest", m.display().to_string());
        }
        kv("data.synthetic_count", self.synthetic.count.to_string());
        kv("data.duration_s", self.synthetic.duration_s.to_string());
        kv("data.snr_min_db", self.synthetic.snr_min_db.to_string());
        kv("data.snr_max_db", self.synthetic.snr_max_db.to_string());
        kv("data.sample_rate", self.sample_rate.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = RunConfig::parse("# nothing here\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn text_round_trip() {
        let src = "seed = 7\ntransform = stft\nmask = estimator\nestimator.norm = instance\ntrain.max_steps = 5\ntrain.crop = none\n";
        let cfg = RunConfig::parse(src).unwrap();
        assert_eq!(cfg.train.crop, None);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let e = RunConfig::parse("lifting.stagez = 3").unwrap_err();
        assert!(e.message().contains("unknown key"));
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed").is_err());
    }

    #[test]
    fn values_validated() {
        for bad in [
            "lifting.stages = 0",
            "train.lr = -1",
            "train.batch_size = 0",
            "stft.hop = 100",
            "data.snr_min_db = 5\ndata.snr_max_db = 0",
            "transform = stft",
            "lifting.linear = maybe",
        ] {
            assert_eq!(RunConfig::parse(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn pipeline_is_seeded() {
        let a = RunConfig::parse("seed = 3\nlifting.stages = 2").unwrap();
        assert_eq!(a.build_pipeline().unwrap(), a.build_pipeline().unwrap());
        let b = RunConfig::parse("seed = 4\nlifting.stages = 2").unwrap();
        assert_ne!(a.build_pipeline().unwrap(), b.build_pipeline().unwrap());
    }
}

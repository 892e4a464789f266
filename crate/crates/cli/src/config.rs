//! TOML run configuration.
//!
//! ```toml
//! [model]
//! channels = 64
//! seq_len = 16
//! reduction_ratio = 2
//! mode = "moca"            # moca | nonlocal_only | nssm_only
//!
//! [model.hafi]
//! enabled = true
//! frames_per_group = 3
//!
//! [model.regressor]
//! n_iter = 3
//!
//! [train]
//! lr = 5e-5
//! epochs = 5
//!
//! [train.loss]
//! w_adv = 1.0
//!
//! [data]
//! n_train = 500
//! seed = 0
//! ```
//!
//! Every key is optional and falls back to the defaults below. Unknown keys
//! are rejected. Sequence length, channels, joints and vertices come from
//! `[model]` and are shared with the synthetic data.

use std::path::{Path, PathBuf};

use motion_attn::hafi::HafiConfig;
use motion_attn::losses::LossWeights;
use motion_attn::model::ModelConfig;
use motion_attn::moca::MocaMode;
use motion_attn::synth::SynthConfig;
use motion_attn::train::{Plateau, TrainConfig};
use serde::Deserialize;

pub const SEED_ENV: &str = "MOTION_ATTN_SEED";

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub channels: usize,
    pub seq_len: usize,
    pub reduction_ratio: usize,
    pub mode: String,
    pub detach_nssm: bool,
    pub joints: usize,
    pub vertices: usize,
    pub disc_hidden: [usize; 2],
    pub hafi: HafiSection,
    pub regressor: RegressorSection,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HafiSection {
    pub enabled: bool,
    pub frames_per_group: usize,
    pub resize_dim: usize,
    pub hidden: [usize; 2],
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RegressorSection {
    pub n_iter: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub disc_lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub lr_factor: f64,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub eval_chunk: usize,
    pub loss: LossSection,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub w_params: f64,
    pub w_3d: f64,
    pub w_2d: f64,
    pub w_adv: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    /// Ground-truth sequences fed to the discriminator as real motion.
    pub n_motion: usize,
    pub n_harmonics: usize,
    pub amplitude: f64,
    pub continuity_bound: f64,
    pub noise: f64,
    pub fps: f64,
    pub body_seed: u64,
    pub encoder_seed: u64,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            channels: m.channels,
            seq_len: m.seq_len,
            reduction_ratio: m.reduction,
            mode: "moca".into(),
            detach_nssm: m.detach_nssm,
            joints: m.joints,
            vertices: m.vertices,
            disc_hidden: m.disc_hidden,
            hafi: HafiSection::default(),
            regressor: RegressorSection::default(),
        }
    }
}

impl Default for HafiSection {
    fn default() -> Self {
        let h = ModelConfig::default().hafi.expect("default model refines with HAFI");
        HafiSection {
            enabled: true,
            frames_per_group: h.frames_per_group,
            resize_dim: h.resize_dim,
            hidden: h.hidden,
        }
    }
}

impl Default for RegressorSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        RegressorSection {
            n_iter: m.n_iter,
            hidden: m.regressor_hidden,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            disc_lr: t.disc_lr,
            batch: t.batch,
            epochs: t.epochs,
            patience: t.plateau.patience,
            lr_factor: t.plateau.factor,
            seed: t.seed,
            clip_norm: t.clip_norm,
            eval_chunk: t.eval_chunk,
            loss: LossSection::default(),
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossSection {
            w_params: w.w_params,
            w_3d: w.w_3d,
            w_2d: w.w_2d,
            w_adv: w.w_adv,
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        DataSection {
            seed: 0,
            n_train: 500,
            n_val: 100,
            n_motion: 200,
            n_harmonics: s.n_harmonics,
            amplitude: s.amplitude,
            continuity_bound: s.continuity_bound,
            noise: s.noise,
            fps: s.fps,
            body_seed: s.body_seed,
            encoder_seed: s.encoder_seed,
            train_path: None,
            val_path: None,
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    /// The file could not be read.
    Read(String),
    /// The file was read but is malformed or violates a model invariant.
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(m) | ConfigError::Invalid(m) => f.write_str(m),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Relative data paths are resolved against the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train_path, &mut cfg.data.val_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks every section against the module invariants.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: motion_attn::Error| ConfigError::Invalid(e.to_string());
        self.model_config()?.validate().map_err(invalid)?;
        self.train_config().validate().map_err(invalid)?;
        self.synth_config().validate().map_err(invalid)?;
        Ok(())
    }

    pub fn mode(&self) -> Result<MocaMode, ConfigError> {
        self.model.mode.parse().map_err(ConfigError::Invalid)
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        let m = &self.model;
        Ok(ModelConfig {
            channels: m.channels,
            seq_len: m.seq_len,
            reduction: m.reduction_ratio,
            mode: self.mode()?,
            detach_nssm: m.detach_nssm,
            hafi: m.hafi.enabled.then_some(HafiConfig {
                frames_per_group: m.hafi.frames_per_group,
                resize_dim: m.hafi.resize_dim,
                hidden: m.hafi.hidden,
            }),
            n_iter: m.regressor.n_iter,
            regressor_hidden: m.regressor.hidden,
            disc_hidden: m.disc_hidden,
            joints: m.joints,
            vertices: m.vertices,
            body_seed: self.data.body_seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            disc_lr: t.disc_lr,
            batch: t.batch,
            epochs: t.epochs,
            plateau: Plateau {
                patience: t.patience,
                factor: t.lr_factor,
            },
            loss: LossWeights {
                w_params: t.loss.w_params,
                w_3d: t.loss.w_3d,
                w_2d: t.loss.w_2d,
                w_adv: t.loss.w_adv,
            },
            seed: t.seed,
            clip_norm: t.clip_norm,
            eval_chunk: t.eval_chunk,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let d = &self.data;
        SynthConfig {
            seq_len: self.model.seq_len,
            joints: self.model.joints,
            vertices: self.model.vertices,
            n_harmonics: d.n_harmonics,
            amplitude: d.amplitude,
            continuity_bound: d.continuity_bound,
            channels: self.model.channels,
            noise: d.noise,
            fps: d.fps,
            body_seed: d.body_seed,
            encoder_seed: d.encoder_seed,
        }
    }

    /// Overrides the training and data seeds.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.data.seed = seed;
    }
}

/// Seed precedence: flag, then `MOTION_ATTN_SEED`, then the config.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>) -> Result<Option<u64>, ConfigError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV} must be an unsigned integer, got `{s}`"))),
    }
}

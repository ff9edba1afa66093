//! Run configuration and its precedence rules.
//!
//! Values are resolved per field: command-line flags override the config
//! file, which overrides the preset (the `sd-paper` preset unless another is
//! named). The `FAD_SEED` environment variable replaces the preset's seed.
//!
//! The config file is TOML with the same layout as [`RunConfig`], every
//! field optional. Unless `schedule.total_steps` is given, the schedule is
//! stretched onto `steps`.

use std::path::{Path, PathBuf};

use fad_core::augment::{Sampling, VariantMode};
use fad_core::caption::{TokenizationMode, TokenizerKind};
use fad_core::policy::{PolicyError, PolicyParams, ScheduleConfig, ScheduleError, ScheduleShape};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEED_ENV: &str = "FAD_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("{SEED_ENV}={0:?} is not an unsigned 64-bit integer")]
    SeedEnv(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("uniform dropout probability must lie in [0, 1], got {0}")]
    Uniform(f64),
    #[error("steps must be positive")]
    ZeroSteps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 1500 steps, p in [0.35, 1.0], factor 0.1 -> 0.8 after 10% warmup.
    #[default]
    SdPaper,
    /// Factor 0 before warmup, exponential, 1 from the last step on.
    Literal,
}

impl Preset {
    pub fn config(self) -> RunConfig {
        let base = RunConfig {
            tokenization: TokenizationMode::tag(),
            triggers: Vec::new(),
            policy: PolicyParams::default(),
            schedule: ScheduleConfig::sd_paper(),
            mode: VariantMode::Sfad,
            steps: 1500,
            seed: 0,
            sampling: Sampling::Cycle,
            per_type: false,
            captions: None,
        };
        match self {
            Preset::SdPaper => base,
            Preset::Literal => {
                let mut schedule = ScheduleConfig::from_ratios(ScheduleShape::Exponential, 1500, 0.1, 1.0, 0.0, 1.0);
                schedule.unnormalized = true;
                RunConfig { schedule, ..base }
            }
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tokenization: TokenizationMode,
    pub triggers: Vec<String>,
    pub policy: PolicyParams,
    pub schedule: ScheduleConfig,
    pub mode: VariantMode,
    /// Training steps to emit.
    pub steps: u64,
    #[serde(with = "seed_repr")]
    pub seed: u64,
    pub sampling: Sampling,
    pub per_type: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Preset::default().config()
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy.validate()?;
        self.schedule.validate()?;
        if let VariantMode::Uniform(p) = self.mode {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Uniform(p));
            }
        }
        if self.steps == 0 {
            return Err(ConfigError::ZeroSteps);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable in TOML")
    }
}

// TOML integers are signed 64-bit, so larger seeds are written as strings.
mod seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Int(u64),
        Str(String),
    }

    impl Repr {
        pub(super) fn value<E: serde::de::Error>(self) -> Result<u64, E> {
            match self {
                Repr::Int(v) => Ok(v),
                Repr::Str(s) => s.parse().map_err(E::custom),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        Repr::deserialize(d)?.value()
    }

    pub mod option {
        use super::Repr;
        use serde::{Deserialize, Deserializer};

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(Repr::value).transpose()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialTokenization {
    pub kind: Option<TokenizerKind>,
    pub lowercase: Option<bool>,
    pub trim: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialPolicy {
    pub p_min: Option<f64>,
    pub p_max: Option<f64>,
    pub center: Option<f64>,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialSchedule {
    pub shape: Option<ScheduleShape>,
    pub beta: Option<f64>,
    pub warmup_end: Option<u64>,
    pub full_step: Option<u64>,
    pub total_steps: Option<u64>,
    /// Places `warmup_end` at this fraction of `total_steps`.
    pub warmup_ratio: Option<f64>,
    /// Places `full_step` at this fraction of `total_steps`.
    pub full_ratio: Option<f64>,
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub unnormalized: Option<bool>,
}

/// A config layer in which every field may be absent.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub preset: Option<Preset>,
    #[serde(default)]
    pub tokenization: PartialTokenization,
    pub triggers: Option<Vec<String>>,
    #[serde(default)]
    pub policy: PartialPolicy,
    #[serde(default)]
    pub schedule: PartialSchedule,
    pub mode: Option<VariantMode>,
    pub steps: Option<u64>,
    #[serde(default, with = "seed_repr::option")]
    pub seed: Option<u64>,
    pub sampling: Option<Sampling>,
    pub per_type: Option<bool>,
    pub captions: Option<PathBuf>,
}

macro_rules! overlay_fields {
    ($low:expr, $high:expr, [$($f:ident),* $(,)?]) => {
        $( if $high.$f.is_some() { $low.$f = $high.$f.clone(); } )*
    };
}

impl PartialConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), source: Box::new(e) })
    }

    /// `self` with every field set in `higher` replaced by `higher`'s value.
    pub fn overlay(mut self, higher: &PartialConfig) -> Self {
        overlay_fields!(self, higher, [preset, triggers, mode, steps, seed, sampling, per_type, captions]);
        overlay_fields!(self.tokenization, higher.tokenization, [kind, lowercase, trim]);
        overlay_fields!(self.policy, higher.policy, [p_min, p_max, center, slope]);
        overlay_fields!(
            self.schedule,
            higher.schedule,
            [shape, beta, warmup_end, full_step, total_steps, warmup_ratio, full_ratio, start, end, unnormalized]
        );
        self
    }

    /// Applies this layer on top of its preset. `env_seed` replaces the
    /// preset's seed when the layer does not set one.
    pub fn resolve(&self, env_seed: Option<u64>) -> Result<RunConfig, ConfigError> {
        let mut cfg = self.preset.unwrap_or_default().config();
        if let Some(seed) = env_seed {
            cfg.seed = seed;
        }
        let t = &self.tokenization;
        cfg.tokenization.kind = t.kind.unwrap_or(cfg.tokenization.kind);
        cfg.tokenization.lowercase = t.lowercase.unwrap_or(cfg.tokenization.lowercase);
        cfg.tokenization.trim = t.trim.unwrap_or(cfg.tokenization.trim);
        if let Some(triggers) = &self.triggers {
            cfg.triggers = triggers.clone();
        }
        let p = &self.policy;
        cfg.policy.p_min = p.p_min.unwrap_or(cfg.policy.p_min);
        cfg.policy.p_max = p.p_max.unwrap_or(cfg.policy.p_max);
        cfg.policy.center = p.center.unwrap_or(cfg.policy.center);
        cfg.policy.slope = p.slope.unwrap_or(cfg.policy.slope);
        cfg.mode = self.mode.unwrap_or(cfg.mode);
        cfg.steps = self.steps.unwrap_or(cfg.steps);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.sampling = self.sampling.unwrap_or(cfg.sampling);
        cfg.per_type = self.per_type.unwrap_or(cfg.per_type);
        if self.captions.is_some() {
            cfg.captions = self.captions.clone();
        }

        let s = &self.schedule;
        let mut sched = cfg.schedule;
        sched.shape = s.shape.unwrap_or(sched.shape);
        sched.beta = s.beta.unwrap_or(sched.beta);
        sched.start = s.start.unwrap_or(sched.start);
        sched.end = s.end.unwrap_or(sched.end);
        sched.unnormalized = s.unnormalized.unwrap_or(sched.unnormalized);
        let total = s.total_steps.unwrap_or(cfg.steps);
        if total != sched.total_steps {
            sched = sched.rescaled(total);
        }
        if s.warmup_ratio.is_some() || s.full_ratio.is_some() {
            let t = sched.total_steps.max(1) as f64;
            let placed = ScheduleConfig::from_ratios(
                sched.shape,
                sched.total_steps,
                s.warmup_ratio.unwrap_or(sched.warmup_end as f64 / t),
                s.full_ratio.unwrap_or(sched.full_step as f64 / t),
                sched.start,
                sched.end,
            );
            sched.warmup_end = placed.warmup_end;
            sched.full_step = placed.full_step;
        }
        sched.warmup_end = s.warmup_end.unwrap_or(sched.warmup_end);
        sched.full_step = s.full_step.unwrap_or(sched.full_step);
        cfg.schedule = sched;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads `FAD_SEED`, if set.
pub fn env_seed() -> Result<Option<u64>, ConfigError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| ConfigError::SeedEnv(v)),
        Err(_) => Ok(None),
    }
}

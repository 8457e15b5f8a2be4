//! Flat `key=value` experiment configuration.
//!
//! Every key mirrors a typed field; unknown keys are errors. Omitted keys
//! keep their defaults, `#` starts a comment, blank lines are ignored.

use std::path::PathBuf;
use std::str::FromStr;

use idea_core::controller::{ControllerConfig, Variant};
use idea_core::stream::{Schedule, StreamConfig};

use crate::{HarnessError, Result};

/// Reference stack shape and initialization.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub layers: usize,
    /// Seed for parameter initialization; independent of the run seed so
    /// asset libraries stay compatible across runs.
    pub seed: u64,
    /// Context-channel initialization gain (see `InitGains`).
    pub ctx_gain: f64,
    /// Instruction-channel initialization gain.
    pub instr_gain: f64,
    /// Scoring-head initialization gain.
    pub head_gain: f64,
}

/// Shape of the synthetic domain family.
#[derive(Debug, Clone)]
pub struct DomainFamilyConfig {
    /// Seed for domain generation; independent of the run seed so different
    /// runs sample observations from the same domains.
    pub domain_seed: u64,
    /// Within-domain feature scale shared by every domain.
    pub base_scale: f64,
    /// Magnitude of mean-style shifts.
    pub mean_magnitude: f64,
    /// Multiplicative spread of scale-style shifts (applied as base_scale
    /// times spread^(+/-1) per coordinate).
    pub scale_spread: f64,
    /// Intra-episode drift applied by every shifted domain.
    pub drift_rate: f64,
    /// Per-episode wobble of each domain's mean shift within the basis span,
    /// as a fraction of the basis coefficients.
    pub episode_wobble: f64,
}

/// Full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub controller: ControllerConfig<f64>,
    pub stream: StreamConfig,
    pub model: ModelConfig,
    pub family: DomainFamilyConfig,
    /// Source observations pooled into the anchor.
    pub anchor_samples: usize,
    pub variant: Variant,
    pub seed: u64,
    pub repetitions: usize,
    pub out_dir: Option<PathBuf>,
    pub assets_in: Option<PathBuf>,
    pub assets_out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let feature_dim = 8;
        ExperimentConfig {
            controller: ControllerConfig::default_with_dim(feature_dim)
                .expect("stock controller config"),
            stream: StreamConfig {
                num_domains: 6,
                schedule: Schedule::Cyclic,
                episodes_per_domain: 2,
                steps_per_episode: 8,
                num_candidates: 4,
                feature_dim,
                source_domain_index: 0,
            },
            model: ModelConfig {
                layers: 3,
                seed: 42,
                ctx_gain: 2.0,
                instr_gain: 0.05,
                head_gain: 3.0,
            },
            family: DomainFamilyConfig {
                domain_seed: 7,
                base_scale: 0.25,
                mean_magnitude: 0.8,
                scale_spread: 1.6,
                drift_rate: 0.02,
                episode_wobble: 0.5,
            },
            anchor_samples: 128,
            variant: Variant::Idea,
            seed: 1,
            repetitions: 1,
            out_dir: None,
            assets_in: None,
            assets_out: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| HarnessError::Config(format!("key '{key}': cannot parse value '{value}'")))
}

fn parse_schedule(value: &str) -> Result<Schedule> {
    if value == "cyclic" {
        return Ok(Schedule::Cyclic);
    }
    if let Some(seed) = value.strip_prefix("random-recurrent:") {
        let seed = seed.parse::<u64>().map_err(|_| {
            HarnessError::Config(format!(
                "key 'stream.schedule': bad seed in '{value}' (expected random-recurrent:<u64>)"
            ))
        })?;
        return Ok(Schedule::RandomRecurrent { seed });
    }
    Err(HarnessError::Config(format!(
        "key 'stream.schedule': '{value}' is not cyclic or random-recurrent:<seed>"
    )))
}

impl ExperimentConfig {
    /// Parse a config document on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Config(format!(
                    "line {}: expected key=value, got '{raw}'",
                    lineno + 1
                )));
            };
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "controller.tau" => self.controller.tau = parse_num(key, value)?,
            "controller.lambda" => self.controller.lambda = parse_num(key, value)?,
            "controller.beta" => self.controller.beta = parse_num(key, value)?,
            "controller.capacity" => self.controller.capacity = parse_num(key, value)?,
            "controller.prompt_len" => self.controller.prompt_len = parse_num(key, value)?,
            "controller.opt.steps" => self.controller.opt.steps = parse_num(key, value)?,
            "controller.opt.learning_rate" => {
                self.controller.opt.learning_rate = parse_num(key, value)?
            }
            "controller.opt.beta1" => self.controller.opt.beta1 = parse_num(key, value)?,
            "controller.opt.beta2" => self.controller.opt.beta2 = parse_num(key, value)?,
            "controller.opt.adam_eps" => self.controller.opt.adam_eps = parse_num(key, value)?,
            "controller.opt.weight_decay" => {
                self.controller.opt.weight_decay = parse_num(key, value)?
            }
            "controller.stats.epsilon" => self.controller.stats.epsilon = parse_num(key, value)?,
            "model.layers" => self.model.layers = parse_num(key, value)?,
            "model.seed" => self.model.seed = parse_num(key, value)?,
            "model.ctx_gain" => self.model.ctx_gain = parse_num(key, value)?,
            "model.instr_gain" => self.model.instr_gain = parse_num(key, value)?,
            "model.head_gain" => self.model.head_gain = parse_num(key, value)?,
            "stream.num_domains" => self.stream.num_domains = parse_num(key, value)?,
            "stream.schedule" => self.stream.schedule = parse_schedule(value)?,
            "stream.episodes_per_domain" => {
                self.stream.episodes_per_domain = parse_num(key, value)?
            }
            "stream.steps_per_episode" => self.stream.steps_per_episode = parse_num(key, value)?,
            "stream.num_candidates" => self.stream.num_candidates = parse_num(key, value)?,
            "stream.feature_dim" => self.stream.feature_dim = parse_num(key, value)?,
            "stream.source_domain_index" => {
                self.stream.source_domain_index = parse_num(key, value)?
            }
            "stream.domain_seed" => self.family.domain_seed = parse_num(key, value)?,
            "stream.base_scale" => self.family.base_scale = parse_num(key, value)?,
            "stream.mean_magnitude" => self.family.mean_magnitude = parse_num(key, value)?,
            "stream.scale_spread" => self.family.scale_spread = parse_num(key, value)?,
            "stream.drift_rate" => self.family.drift_rate = parse_num(key, value)?,
            "stream.episode_wobble" => self.family.episode_wobble = parse_num(key, value)?,
            "stream.anchor_samples" => self.anchor_samples = parse_num(key, value)?,
            "variant" => {
                self.variant = Variant::from_str(value)
                    .map_err(|e| HarnessError::Config(format!("key 'variant': {e}")))?
            }
            "seed" => self.seed = parse_num(key, value)?,
            "repetitions" => self.repetitions = parse_num(key, value)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            unknown => {
                return Err(HarnessError::Config(format!("unknown key '{unknown}'")));
            }
        }
        Ok(())
    }

    /// Cross-field fixups and validation.
    fn finish(&mut self) -> Result<()> {
        // The stats config mirrors the stream's feature dimension.
        self.controller.stats.feature_dim = self.stream.feature_dim;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.controller
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.stream
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.repetitions == 0 {
            return Err(HarnessError::Config("repetitions must be >= 1".into()));
        }
        if self.model.layers == 0 {
            return Err(HarnessError::Config("model.layers must be >= 1".into()));
        }
        if self.anchor_samples < 2 {
            return Err(HarnessError::Config(
                "stream.anchor_samples must be >= 2".into(),
            ));
        }
        if !(self.family.base_scale > 0.0) {
            return Err(HarnessError::Config(
                "stream.base_scale must be positive".into(),
            ));
        }
        if !(self.family.scale_spread > 0.0) {
            return Err(HarnessError::Config(
                "stream.scale_spread must be positive".into(),
            ));
        }
        if self.family.mean_magnitude < 0.0 || self.family.drift_rate < 0.0 {
            return Err(HarnessError::Config(
                "stream.mean_magnitude and stream.drift_rate must be nonnegative".into(),
            ));
        }
        if self.family.episode_wobble < 0.0 {
            return Err(HarnessError::Config(
                "stream.episode_wobble must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

//! Training configuration as a flat TOML table.

use std::path::Path;

use audible_core::losses::LossWeights;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Four stride-2 conv blocks, 8/16/32/64 channels.
    Toy,
    /// Stem plus three stages with 64/256/512/1024 channels, stride 16 overall.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSource {
    /// Exact flow from the generating scene (synthetic datasets only).
    Analytic,
    /// Flow files stored next to the frames.
    File,
    /// Horn-Schunck estimate computed from the frames.
    Classical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Optional stopping criterion in passes over the training videos; the
    /// first of `iterations` and `epochs` to be reached ends training.
    pub epochs: Option<usize>,
    pub clip_len: usize,
    pub input_size: usize,
    pub encoder: EncoderKind,
    /// Width `d` of the attention projections.
    pub model_dim: usize,
    /// Channels of the 3-D fusion convolution and width of the temporal encoder.
    pub fusion_width: usize,
    pub transformer_layers: usize,
    pub transformer_heads: usize,
    pub lambda_action: f64,
    pub lambda_cont: f64,
    pub lambda_temp: f64,
    pub lambda_ce: f64,
    pub lambda_focal: f64,
    pub alpha: f64,
    pub gamma_focal: f64,
    pub soft_label_sigma: f64,
    pub soft_label_radius: usize,
    pub rng_seed: u64,
    pub flow_backend: FlowSource,
    pub match_window: usize,
    pub decode_threshold: f64,
    pub min_separation: usize,
    /// Sliding-window step at inference; defaults to `clip_len`.
    pub window_step: Option<usize>,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            learning_rate: 5e-6,
            batch_size: 4,
            iterations: 20_000,
            epochs: None,
            clip_len: 64,
            input_size: 112,
            encoder: EncoderKind::Toy,
            model_dim: 256,
            fusion_width: 256,
            transformer_layers: 2,
            transformer_heads: 4,
            lambda_action: w.action,
            lambda_cont: w.cont,
            lambda_temp: w.temp,
            lambda_ce: w.ce,
            lambda_focal: w.focal,
            alpha: w.alpha,
            gamma_focal: w.gamma,
            soft_label_sigma: 1.0,
            soft_label_radius: 2,
            rng_seed: 0,
            flow_backend: FlowSource::Analytic,
            match_window: audible_core::metrics::DEFAULT_MATCH_WINDOW,
            decode_threshold: 0.5,
            min_separation: 2,
            window_step: None,
            checkpoint_every: 500,
            log_every: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// Named starting points for a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Toy,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Preset::Full),
            "toy" => Ok(Preset::Toy),
            _ => Err(format!("unknown config preset `{s}` (expected full or toy)")),
        }
    }
}

impl TrainConfig {
    /// Desk-scale settings: shorter clips, smaller frames and model, larger
    /// learning rate.
    pub fn toy() -> Self {
        Self {
            clip_len: 32,
            input_size: 56,
            learning_rate: 1e-4,
            model_dim: 32,
            fusion_width: 64,
            ..Self::default()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => Self::default(),
            Preset::Toy => Self::toy(),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            action: self.lambda_action,
            cont: self.lambda_cont,
            temp: self.lambda_temp,
            ce: self.lambda_ce,
            focal: self.lambda_focal,
            alpha: self.alpha,
            gamma: self.gamma_focal,
        }
    }

    pub fn window_step(&self) -> usize {
        self.window_step.unwrap_or(self.clip_len)
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            encoder: self.encoder,
            input_size: self.input_size,
            clip_len: self.clip_len,
            model_dim: self.model_dim,
            fusion_width: self.fusion_width,
            transformer_layers: self.transformer_layers,
            transformer_heads: self.transformer_heads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.iterations == 0 || self.epochs == Some(0) {
            return bad("batch_size, iterations and epochs must be positive");
        }
        if self.clip_len < 3 {
            return bad("clip_len must be at least 3");
        }
        if self.input_size < 16 {
            return bad("input_size must be at least 16");
        }
        if self.model_dim == 0 || self.fusion_width == 0 || self.transformer_layers == 0 {
            return bad("model sizes must be positive");
        }
        if self.transformer_heads == 0 || self.fusion_width % self.transformer_heads != 0 {
            return bad("fusion_width must be a multiple of transformer_heads");
        }
        if !(self.soft_label_sigma > 0.0) {
            return bad("soft_label_sigma must be positive");
        }
        if !(0.0..=1.0).contains(&self.decode_threshold) {
            return bad("decode_threshold must lie in [0, 1]");
        }
        if self.window_step() == 0 || self.window_step() > self.clip_len {
            return bad("window_step must lie in [1, clip_len]");
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return bad("checkpoint_every and log_every must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam coefficients out of range");
        }
        self.loss_weights().validate().map_err(|e| NnError::Config(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| NnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file whose keys override `base`.
    pub fn load_over(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NnError::io(path, e))?;
        let overrides: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| NnError::Config(format!("{}: {e}", path.display())))?;
        base.merged(overrides, &path.display().to_string())
    }

    /// Applies `key=value` assignments. Values use TOML syntax; a value that
    /// does not parse is taken as a bare string, so `flow_backend=file` works.
    pub fn with_assignments(&self, assignments: &[String]) -> Result<Self> {
        let mut overrides = toml::Table::new();
        for a in assignments {
            let (key, value) = a
                .split_once('=')
                .ok_or_else(|| NnError::Config(format!("`{a}` is not key=value")))?;
            let (key, value) = (key.trim(), value.trim());
            let parsed: toml::Table = format!("{key} = {value}")
                .parse()
                .or_else(|_| format!("{key} = {}", toml::Value::String(value.into())).parse())
                .map_err(|e: toml::de::Error| NnError::Config(format!("`{a}`: {e}")))?;
            overrides.extend(parsed);
        }
        self.merged(overrides, "command line")
    }

    fn merged(&self, overrides: toml::Table, origin: &str) -> Result<Self> {
        let mut merged = toml::Table::try_from(self).map_err(|e| NnError::Config(e.to_string()))?;
        merged.extend(overrides);
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| NnError::Config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// The subset of the configuration that fixes parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub encoder: EncoderKind,
    pub input_size: usize,
    pub clip_len: usize,
    pub model_dim: usize,
    pub fusion_width: usize,
    pub transformer_layers: usize,
    pub transformer_heads: usize,
}

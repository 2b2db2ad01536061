use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::conditioning::{ActivityConfig, Polarity};
use crate::diffusion::{DEFAULT_GAMMA, DEFAULT_KEEP, DEFAULT_LENGTH, DEFAULT_STEPS, MAX_STEPS};
use crate::fusion::DEFAULT_ALPHA;
use crate::simdevice::DEFAULT_RATE_HZ;
use crate::sonify::DEFAULT_HOP;

use super::broadcast::DEFAULT_BACKLOG_LIMIT;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {message}")]
    BadValue { key: String, message: String },
    #[error("could not read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Runtime settings. Every field maps to one `key=value` config entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Seconds between conditioning-window snapshots.
    pub sensor_read_period_s: f64,
    /// Expected seconds per generation; runs over twice this skip a cycle.
    pub generation_budget_s: f64,
    /// Pads each generation to at least this many seconds.
    pub simulated_latency_s: Option<f64>,
    pub steps: usize,
    pub gamma: f64,
    pub keep: usize,
    pub length: usize,
    pub hop: usize,
    pub activity: ActivityConfig,
    pub fusion_alpha: f64,
    pub device_rate_hz: f64,
    pub tcp_port: u16,
    pub ws_port: u16,
    pub telemetry_hz: f64,
    pub backlog_limit_bytes: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sensor_read_period_s: 1.0,
            generation_budget_s: 1.05,
            simulated_latency_s: None,
            steps: DEFAULT_STEPS,
            gamma: DEFAULT_GAMMA,
            keep: DEFAULT_KEEP,
            length: DEFAULT_LENGTH,
            hop: DEFAULT_HOP,
            activity: ActivityConfig::default(),
            fusion_alpha: DEFAULT_ALPHA,
            device_rate_hz: DEFAULT_RATE_HZ,
            tcp_port: 7000,
            ws_port: 7001,
            telemetry_hz: 10.0,
            backlog_limit_bytes: DEFAULT_BACKLOG_LIMIT,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue { key: key.into(), message: e.to_string() })
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_str(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "pipeline.sensor_read_period_s" => self.sensor_read_period_s = parse(key, value)?,
            "pipeline.generation_budget_s" => self.generation_budget_s = parse(key, value)?,
            "pipeline.simulated_latency_s" => {
                self.simulated_latency_s =
                    if value.is_empty() || value == "none" { None } else { Some(parse(key, value)?) }
            }
            "diffusion.steps" => self.steps = parse(key, value)?,
            "diffusion.gamma" => self.gamma = parse(key, value)?,
            "diffusion.keep" => self.keep = parse(key, value)?,
            "diffusion.length" => self.length = parse(key, value)?,
            "render.hop" => self.hop = parse(key, value)?,
            "activity.window_frames" => self.activity.window_frames = parse(key, value)?,
            "activity.weights" => {
                self.activity.weights = ActivityConfig::parse_weights(value)
                    .map_err(|e| ConfigError::BadValue { key: key.into(), message: e.to_string() })?
            }
            "activity.normalizer" => self.activity.normalizer = parse(key, value)?,
            "activity.polarity" => self.activity.polarity = parse::<Polarity>(key, value)?,
            "fusion.alpha" => self.fusion_alpha = parse(key, value)?,
            "device.rate_hz" => self.device_rate_hz = parse(key, value)?,
            "net.tcp_port" => self.tcp_port = parse(key, value)?,
            "net.ws_port" => self.ws_port = parse(key, value)?,
            "net.telemetry_hz" => self.telemetry_hz = parse(key, value)?,
            "net.backlog_limit_bytes" => self.backlog_limit_bytes = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: &str| Err(ConfigError::BadValue { key: key.into(), message: message.into() });
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sensor_read_period_s) {
            return bad("pipeline.sensor_read_period_s", "must be positive");
        }
        if !positive(self.generation_budget_s) {
            return bad("pipeline.generation_budget_s", "must be positive");
        }
        if let Some(l) = self.simulated_latency_s {
            if !(l.is_finite() && l >= 0.0) {
                return bad("pipeline.simulated_latency_s", "must be non-negative");
            }
        }
        if !(1..=MAX_STEPS).contains(&self.steps) {
            return bad("diffusion.steps", "must be in 1..=1000");
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return bad("diffusion.gamma", "must be finite and non-negative");
        }
        if self.length < 2 || self.keep >= self.length {
            return bad("diffusion.keep", "must be shorter than diffusion.length");
        }
        if self.hop == 0 {
            return bad("render.hop", "must be positive");
        }
        if let Err(e) = self.activity.validate() {
            return bad("activity", &e.to_string());
        }
        if !(0.0..=1.0).contains(&self.fusion_alpha) {
            return bad("fusion.alpha", "must be in [0, 1]");
        }
        if !(1.0..=200.0).contains(&self.device_rate_hz) {
            return bad("device.rate_hz", "must be in 1..=200");
        }
        if !positive(self.telemetry_hz) {
            return bad("net.telemetry_hz", "must be positive");
        }
        Ok(())
    }
}

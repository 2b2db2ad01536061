//! Activity score and diffusion condition from a moving window of frames.
//!
//! The score is `(1/R) * Σ w_i σ_i` over the 16 channels of
//! [`CHANNELS`], with each σ_i the population standard deviation of the
//! unit-normalized channel over the window, clamped to `[0, 1]`.
//!
//! Arithmetic order is part of the contract so independent recomputations
//! agree bit for bit. Per channel, every sample is offset by the window's
//! first sample; a sequential sum of offsets divided by `n` gives the mean
//! offset, a second sequential pass sums squared deviations from it, then
//! divide by `n` and take `sqrt`. The score is a sequential weighted sum
//! over channels in order, divided by `R`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::wire::{SensorFrame, JOY_FULL_SCALE, MAG_UT_PER_LSB};

pub const NUM_CHANNELS: usize = 16;

/// Fixed channel order.
pub const CHANNELS: [&str; NUM_CHANNELS] =
    ["ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz", "jx", "jy", "b1", "b2", "b3", "b4", "enc"];

pub const ACCEL_FULL_SCALE_G: f64 = 8.0;
pub const GYRO_FULL_SCALE_DPS: f64 = 2000.0;
pub const MAG_FULL_SCALE_UT: f64 = 4900.0;
pub const ENCODER_FULL_SCALE: f64 = 127.0;

pub const DEFAULT_WINDOW_FRAMES: usize = 60;
pub const DEFAULT_NORMALIZER: f64 = 6.0;
pub const DEFAULT_WEIGHTS: [f64; NUM_CHANNELS] =
    [1.0, 1.0, 1.0, 0.2, 0.2, 0.2, 0.05, 0.05, 0.05, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditioningError {
    #[error("window has {got} frames, need {need}")]
    WindowTooShort { got: usize, need: usize },
    #[error("invalid activity config: {0}")]
    InvalidConfig(String),
}

/// How activity maps to the condition value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    /// `c = activity`
    Direct,
    /// `c = 1 - activity`: calm input asks for energetic output.
    #[default]
    Inverse,
}

impl FromStr for Polarity {
    type Err = ConditioningError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Polarity::Direct),
            "inverse" => Ok(Polarity::Inverse),
            other => Err(ConditioningError::InvalidConfig(format!("unknown polarity {other:?}"))),
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Direct => "direct",
            Polarity::Inverse => "inverse",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityConfig {
    pub window_frames: usize,
    pub weights: [f64; NUM_CHANNELS],
    pub normalizer: f64,
    pub polarity: Polarity,
}

impl Default for ActivityConfig {
    fn default() -> Self {
        ActivityConfig {
            window_frames: DEFAULT_WINDOW_FRAMES,
            weights: DEFAULT_WEIGHTS,
            normalizer: DEFAULT_NORMALIZER,
            polarity: Polarity::Inverse,
        }
    }
}

impl ActivityConfig {
    pub fn validate(&self) -> Result<(), ConditioningError> {
        let bad = |m: &str| Err(ConditioningError::InvalidConfig(m.to_string()));
        if self.window_frames < 2 {
            return bad("window_frames must be at least 2");
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and non-negative");
        }
        if !self.weights.iter().any(|w| *w > 0.0) {
            return bad("at least one weight must be positive");
        }
        if !(self.normalizer.is_finite() && self.normalizer > 0.0) {
            return bad("normalizer must be positive");
        }
        Ok(())
    }

    /// Parses 16 comma-separated weights.
    pub fn parse_weights(s: &str) -> Result<[f64; NUM_CHANNELS], ConditioningError> {
        let parsed: Result<Vec<f64>, _> = s.split(',').map(|w| w.trim().parse::<f64>()).collect();
        let parsed = parsed.map_err(|e| ConditioningError::InvalidConfig(format!("weights: {e}")))?;
        parsed
            .try_into()
            .map_err(|v: Vec<f64>| ConditioningError::InvalidConfig(format!("expected 16 weights, got {}", v.len())))
    }
}

/// Channel values of one frame scaled to unit ranges, in [`CHANNELS`] order.
pub fn normalize_frame(frame: &SensorFrame) -> [f64; NUM_CHANNELS] {
    let a = frame.accel_g();
    let g = frame.gyro_dps();
    let m = frame.mag.map(|v| f64::from(v) * MAG_UT_PER_LSB);
    let bit = |i: u8| if frame.button(i) { 1.0 } else { 0.0 };
    [
        a[0] / ACCEL_FULL_SCALE_G,
        a[1] / ACCEL_FULL_SCALE_G,
        a[2] / ACCEL_FULL_SCALE_G,
        g[0] / GYRO_FULL_SCALE_DPS,
        g[1] / GYRO_FULL_SCALE_DPS,
        g[2] / GYRO_FULL_SCALE_DPS,
        m[0] / MAG_FULL_SCALE_UT,
        m[1] / MAG_FULL_SCALE_UT,
        m[2] / MAG_FULL_SCALE_UT,
        f64::from(frame.joy[0]) / JOY_FULL_SCALE,
        f64::from(frame.joy[1]) / JOY_FULL_SCALE,
        bit(1),
        bit(2),
        bit(3),
        bit(4),
        f64::from(frame.encoder_delta) / ENCODER_FULL_SCALE,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub sigma: [f64; NUM_CHANNELS],
}

/// Population standard deviation of `values`, two-pass on values offset by
/// the first sample so a constant series gives exactly zero.
pub fn population_std(values: &[f64]) -> f64 {
    let Some(&origin) = values.first() else { return 0.0 };
    let n = values.len() as f64;
    let mean = values.iter().fold(0.0, |acc, v| acc + (v - origin)) / n;
    let ss = values.iter().fold(0.0, |acc, v| {
        let d = (v - origin) - mean;
        acc + d * d
    });
    (ss / n).sqrt()
}

/// Per-channel σ over the last `window_frames` frames of `window`.
pub fn channel_std(window: &[SensorFrame], config: &ActivityConfig) -> Result<ChannelStats, ConditioningError> {
    let need = config.window_frames.max(2);
    if window.len() < need {
        return Err(ConditioningError::WindowTooShort { got: window.len(), need });
    }
    let rows: Vec<[f64; NUM_CHANNELS]> = window[window.len() - need..].iter().map(normalize_frame).collect();
    let mut sigma = [0.0; NUM_CHANNELS];
    let mut column = vec![0.0; rows.len()];
    for (ch, s) in sigma.iter_mut().enumerate() {
        for (slot, row) in column.iter_mut().zip(&rows) {
            *slot = row[ch];
        }
        *s = population_std(&column);
    }
    Ok(ChannelStats { sigma })
}

/// `(1/R) Σ w_i σ_i`, clamped to `[0, 1]`.
pub fn activity_score(stats: &ChannelStats, config: &ActivityConfig) -> f64 {
    let weighted = stats.sigma.iter().zip(&config.weights).fold(0.0, |acc, (s, w)| acc + w * s);
    clamp_unit(weighted / config.normalizer)
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Diffusion conditioning value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Condition(f64);

impl Condition {
    /// Clamps into `[0, 1]`; NaN maps to 0.
    pub fn new(value: f64) -> Self {
        Condition(clamp_unit(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn rms_condition(activity: f64, config: &ActivityConfig) -> Condition {
    let a = clamp_unit(activity);
    match config.polarity {
        Polarity::Direct => Condition::new(a),
        Polarity::Inverse => Condition::new(1.0 - a),
    }
}

/// Activity and condition from a window, in one call.
pub fn condition_from_window(
    window: &[SensorFrame],
    config: &ActivityConfig,
) -> Result<(f64, Condition), ConditioningError> {
    let activity = activity_score(&channel_std(window, config)?, config);
    Ok((activity, rms_condition(activity, config)))
}

/// Fixed-capacity ring of the most recent frames.
#[derive(Debug, Clone)]
pub struct FrameWindow {
    capacity: usize,
    frames: VecDeque<SensorFrame>,
}

impl FrameWindow {
    pub fn new(capacity: usize) -> Self {
        FrameWindow { capacity: capacity.max(1), frames: VecDeque::with_capacity(capacity.max(1)) }
    }

    pub fn push(&mut self, frame: SensorFrame) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.capacity
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn snapshot(&self) -> Vec<SensorFrame> {
        self.frames.iter().copied().collect()
    }
}

//! Audio rendering of latents and the control-voltage stream.
//!
//! The renderer is a small additive synth driven frame by frame:
//!
//! - `z₁` sets pitch: `220·2^z₁` Hz, clamped to 55..=880 Hz
//! - `z₂` sets brightness: harmonic `k` of 1..=8 has weight `k^-softplus(z₂)`
//! - `z₃` sets amplitude: `sigmoid(z₃)`
//! - `z₄` sets stereo width and noise: `sigmoid(z₄)`
//!
//! Parameters glide linearly across each hop and the output passes through
//! a soft limiter that stays linear up to 0.8.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::conditioning::Condition;
use crate::diffusion::{Latent, LatentSequence};
use crate::fusion::Attitude;
use crate::wire::SensorFrame;

pub const SAMPLE_RATE: u32 = 44_100;
pub const DEFAULT_HOP: usize = 2048;
pub const HARMONICS: usize = 8;
const MIN_FREQ_HZ: f64 = 55.0;
const MAX_FREQ_HZ: f64 = 880.0;
const BASE_FREQ_HZ: f64 = 220.0;
/// Noise fraction at full width.
const MAX_NOISE_MIX: f64 = 0.3;
const LIMITER_KNEE: f64 = 0.8;
const NOISE_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum SonifyError {
    #[error("no latents to render")]
    EmptyLatents,
    #[error("audio buffer is empty")]
    EmptyBuffer,
    #[error("hop must be positive")]
    InvalidHop,
    #[error("malformed CSV line: {0}")]
    MalformedCsv(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

/// Interleaved stereo samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    /// Sample frames per channel.
    pub fn frames(&self) -> usize {
        self.samples.len() / 2
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / f64::from(self.sample_rate)
    }

    pub fn left(&self) -> impl Iterator<Item = f32> + '_ {
        self.samples.iter().step_by(2).copied()
    }

    pub fn right(&self) -> impl Iterator<Item = f32> + '_ {
        self.samples.iter().skip(1).step_by(2).copied()
    }

    /// Writes 16-bit stereo PCM.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<(), SonifyError> {
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample((f64::from(s).clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Linear below the knee, then eases toward ±1.
pub fn soft_limit(x: f64) -> f64 {
    let a = x.abs();
    if a <= LIMITER_KNEE {
        x
    } else {
        let head = 1.0 - LIMITER_KNEE;
        (LIMITER_KNEE + head * ((a - LIMITER_KNEE) / head).tanh()).copysign(x)
    }
}

/// Synth parameters of one latent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Voice {
    freq_hz: f64,
    weights: [f64; HARMONICS],
    amp: f64,
    width: f64,
}

impl Voice {
    fn from_latent(z: &Latent) -> Voice {
        let [z1, z2, z3, z4] = z.map(f64::from);
        let rolloff = softplus(z2);
        let mut weights: [f64; HARMONICS] = std::array::from_fn(|k| ((k + 1) as f64).powf(-rolloff));
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Voice {
            freq_hz: (BASE_FREQ_HZ * z1.exp2()).clamp(MIN_FREQ_HZ, MAX_FREQ_HZ),
            weights,
            amp: sigmoid(z3),
            width: sigmoid(z4),
        }
    }

    fn lerp(&self, other: &Voice, t: f64) -> Voice {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        Voice {
            freq_hz: mix(self.freq_hz, other.freq_hz),
            weights: std::array::from_fn(|k| mix(self.weights[k], other.weights[k])),
            amp: mix(self.amp, other.amp),
            width: mix(self.width, other.width),
        }
    }
}

/// Peak-normalized harmonic sum at phase `phase`.
fn harmonic_sum(weights: &[f64; HARMONICS], phase: f64) -> f64 {
    let (s1, c1) = phase.sin_cos();
    let (mut s, mut c) = (s1, c1);
    let mut acc = 0.0;
    for w in weights {
        acc += w * s;
        (s, c) = (s * c1 + c * s1, c * c1 - s * s1);
    }
    acc
}

/// xorshift64* uniform noise in [-1, 1).
struct Noise(u64);

impl Noise {
    fn next(&mut self) -> f64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        let bits = self.0.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11;
        bits as f64 / (1u64 << 52) as f64 - 1.0
    }
}

/// Renders `latents.len() * hop` stereo sample frames at 44.1 kHz.
pub fn render_latents(latents: &LatentSequence, hop: usize) -> Result<AudioBuffer, SonifyError> {
    if latents.frames().is_empty() {
        return Err(SonifyError::EmptyLatents);
    }
    if hop == 0 {
        return Err(SonifyError::InvalidHop);
    }
    let voices: Vec<Voice> = latents.frames().iter().map(Voice::from_latent).collect();
    let mut samples = Vec::with_capacity(voices.len() * hop * 2);
    let mut phase = 0.0f64;
    let mut noise = Noise(NOISE_SEED);
    let dt = 1.0 / f64::from(SAMPLE_RATE);
    for (i, v) in voices.iter().enumerate() {
        let next = voices.get(i + 1).unwrap_or(v);
        for j in 0..hop {
            let p = v.lerp(next, j as f64 / hop as f64);
            let mix = MAX_NOISE_MIX * p.width;
            let left = harmonic_sum(&p.weights, phase);
            let right = harmonic_sum(&p.weights, phase + p.width * FRAC_PI_2);
            let l = p.amp * ((1.0 - mix) * left + mix * noise.next());
            let r = p.amp * ((1.0 - mix) * right + mix * noise.next());
            samples.push(soft_limit(l) as f32);
            samples.push(soft_limit(r) as f32);
            phase = (phase + 2.0 * PI * p.freq_hz * dt) % (2.0 * PI);
        }
    }
    Ok(AudioBuffer { samples, sample_rate: SAMPLE_RATE })
}

/// Root mean square over both channels.
pub fn audio_rms(buffer: &AudioBuffer) -> Result<f64, SonifyError> {
    if buffer.samples.is_empty() {
        return Err(SonifyError::EmptyBuffer);
    }
    let ss: f64 = buffer.samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
    Ok((ss / buffer.samples.len() as f64).sqrt())
}

pub const BIPOLAR_V: f64 = 5.0;
pub const UNIPOLAR_V: f64 = 10.0;
pub const GATE_V: f64 = 10.0;
pub const ENCODER_STEPS: i64 = 16;

/// One line of the control-voltage stream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlFrame {
    pub seq: u32,
    pub pitch_v: f64,
    pub roll_v: f64,
    pub joy_x_v: f64,
    pub joy_y_v: f64,
    pub gates: [f64; 4],
    pub encoder_step_v: f64,
    pub activity_v: f64,
    pub condition_v: f64,
}

pub const CSV_FIELDS: usize = 12;

fn angle_volts(radians: f64) -> f64 {
    (radians.to_degrees() / 90.0 * BIPOLAR_V).clamp(-BIPOLAR_V, BIPOLAR_V)
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Maps fused state onto voltages. `encoder_position` is the running sum of
/// encoder deltas; its value mod 16 selects the staircase step.
pub fn control_frame(
    attitude: &Attitude,
    frame: &SensorFrame,
    encoder_position: i64,
    activity: f64,
    condition: Condition,
) -> ControlFrame {
    let joy = frame.joy_unit();
    let step = encoder_position.rem_euclid(ENCODER_STEPS);
    ControlFrame {
        seq: u32::from(frame.seq),
        pitch_v: angle_volts(finite_or_zero(attitude.pitch)),
        roll_v: angle_volts(finite_or_zero(attitude.roll)),
        joy_x_v: joy[0] * BIPOLAR_V,
        joy_y_v: joy[1] * BIPOLAR_V,
        gates: std::array::from_fn(|i| if frame.button(i as u8 + 1) { GATE_V } else { 0.0 }),
        encoder_step_v: step as f64 / (ENCODER_STEPS - 1) as f64 * UNIPOLAR_V,
        activity_v: finite_or_zero(activity).clamp(0.0, 1.0) * UNIPOLAR_V,
        condition_v: condition.value() * UNIPOLAR_V,
    }
}

/// Tracks the encoder position across frames.
#[derive(Debug, Clone, Default)]
pub struct ControlMapper {
    encoder_position: i64,
}

impl ControlMapper {
    pub fn encoder_position(&self) -> i64 {
        self.encoder_position
    }

    pub fn map(
        &mut self,
        attitude: &Attitude,
        frame: &SensorFrame,
        activity: f64,
        condition: Condition,
    ) -> ControlFrame {
        self.encoder_position += i64::from(frame.encoder_delta);
        control_frame(attitude, frame, self.encoder_position, activity, condition)
    }
}

fn push_field(line: &mut String, v: f64) {
    let v = if v == 0.0 || format!("{v:.4}") == "-0.0000" { 0.0 } else { v };
    let _ = write!(line, ",{v:.4}");
}

/// `seq` then eleven voltages with four fractional digits, `\n`-terminated.
pub fn serialize_csv(cf: &ControlFrame) -> String {
    let mut line = String::with_capacity(96);
    let _ = write!(line, "{}", cf.seq);
    for v in [cf.pitch_v, cf.roll_v, cf.joy_x_v, cf.joy_y_v].into_iter().chain(cf.gates).chain([
        cf.encoder_step_v,
        cf.activity_v,
        cf.condition_v,
    ]) {
        push_field(&mut line, v);
    }
    line.push('\n');
    line
}

impl FromStr for ControlFrame {
    type Err = SonifyError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || SonifyError::MalformedCsv(line.trim_end().to_string());
        let fields: Vec<&str> = line.trim_end_matches('\n').split(',').collect();
        if fields.len() != CSV_FIELDS {
            return Err(bad());
        }
        let seq = fields[0].parse().map_err(|_| bad())?;
        let mut v = [0.0f64; CSV_FIELDS - 1];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad())?;
            if !slot.is_finite() {
                return Err(bad());
            }
        }
        Ok(ControlFrame {
            seq,
            pitch_v: v[0],
            roll_v: v[1],
            joy_x_v: v[2],
            joy_y_v: v[3],
            gates: [v[4], v[5], v[6], v[7]],
            encoder_step_v: v[8],
            activity_v: v[9],
            condition_v: v[10],
        })
    }
}

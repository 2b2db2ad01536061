//! Virtual MindCube.
//!
//! Frames are a pure function of `(scenario, seed, frame_index, rate)`:
//! each frame draws its noise from a ChaCha stream selected by the frame
//! index, so any frame can be regenerated without replaying its
//! predecessors. Panel events layer overrides on top of the scenario.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{SensorFrame, ACCEL_LSB_PER_G, GYRO_LSB_PER_DPS, JOY_FULL_SCALE};

pub const DEFAULT_RATE_HZ: f64 = 20.0;

pub const IDLE_ACCEL_NOISE_G: f64 = 0.002;
pub const BURST_ACCEL_NOISE_G: f64 = 0.15;
const BURST_GYRO_NOISE_DPS: f64 = 120.0;
const BURST_JOY: f64 = 0.8;
const BURST_ENCODER_SPAN: i8 = 24;
/// Seconds of idle followed by the same number of seconds of burst.
pub const BURST_HALF_PERIOD_S: f64 = 2.0;
pub const TILT_AMPLITUDE_DEG: f64 = 80.0;
pub const TILT_FREQ_HZ: f64 = 0.1;
const CIRCLE_RADIUS: f64 = 0.9;
const CIRCLE_FREQ_HZ: f64 = 0.5;
/// Static magnetic field reading, raw LSB (30 µT, 0, -45 µT).
const MAG_RAW: [i16; 3] = [200, 0, -300];
/// `run_realtime` wakes this early and spins to the deadline. Timer wakeups
/// from an idle core can land several milliseconds late.
const SPIN_MARGIN: Duration = Duration::from_millis(3);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid panel event: {0}")]
    InvalidEvent(String),
    #[error("stream rate {0} Hz outside 1..=200")]
    InvalidRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Idle,
    FidgetBurst,
    TiltSweep,
    JoystickCircle,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] =
        [ScenarioKind::Idle, ScenarioKind::FidgetBurst, ScenarioKind::TiltSweep, ScenarioKind::JoystickCircle];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Idle => "idle",
            ScenarioKind::FidgetBurst => "fidget-burst",
            ScenarioKind::TiltSweep => "tilt-sweep",
            ScenarioKind::JoystickCircle => "joystick-circle",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| SimError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// `None` streams forever.
    pub duration_s: Option<f64>,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Scenario { kind, seed, duration_s: None }
    }

    pub fn parse(name: &str, seed: u64) -> Result<Self, SimError> {
        Ok(Self::new(name.parse()?, seed))
    }

    pub fn with_duration(mut self, seconds: f64) -> Self {
        self.duration_s = Some(seconds);
        self
    }

    /// Whether `t` seconds falls inside a fidget-burst high-activity half.
    pub fn in_burst(t: f64) -> bool {
        (t / BURST_HALF_PERIOD_S).floor() as i64 % 2 == 1
    }

    /// Scenario output before quantization at frame `index` of a `rate_hz` stream.
    pub fn sample(&self, index: u64, rate_hz: f64) -> RawSample {
        let dt = 1.0 / rate_hz;
        let t = index as f64 * dt;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let idle_noise = Normal::new(0.0, IDLE_ACCEL_NOISE_G).unwrap();
        let mut noise = [0.0; 3];
        let mut s = RawSample {
            orientation: Orientation::LEVEL,
            accel_noise: [0.0; 3],
            gyro_dps: [0.0; 3],
            joy: [0.0; 2],
            buttons: 0,
            encoder_delta: 0,
        };
        match self.kind {
            ScenarioKind::Idle | ScenarioKind::JoystickCircle => {
                noise.iter_mut().for_each(|n| *n = idle_noise.sample(&mut rng));
                if self.kind == ScenarioKind::JoystickCircle {
                    let phase = 2.0 * PI * CIRCLE_FREQ_HZ * t;
                    s.joy = [CIRCLE_RADIUS * phase.cos(), CIRCLE_RADIUS * phase.sin()];
                }
            }
            ScenarioKind::FidgetBurst => {
                if Self::in_burst(t) {
                    let jitter = Normal::new(0.0, BURST_ACCEL_NOISE_G).unwrap();
                    let gyro_jitter = Normal::new(0.0, BURST_GYRO_NOISE_DPS).unwrap();
                    noise.iter_mut().for_each(|n| *n = jitter.sample(&mut rng));
                    s.gyro_dps.iter_mut().for_each(|g| *g = gyro_jitter.sample(&mut rng));
                    s.buttons = if index % 2 == 0 { 0x0F } else { 0x00 };
                    let x = if index % 2 == 0 { BURST_JOY } else { -BURST_JOY };
                    let y = if (index / 2) % 2 == 0 { BURST_JOY } else { -BURST_JOY };
                    s.joy = [x, y];
                    s.encoder_delta = rng.gen_range(-BURST_ENCODER_SPAN..=BURST_ENCODER_SPAN);
                } else {
                    noise.iter_mut().for_each(|n| *n = idle_noise.sample(&mut rng));
                }
            }
            ScenarioKind::TiltSweep => {
                noise.iter_mut().for_each(|n| *n = idle_noise.sample(&mut rng));
                s.orientation = Orientation { pitch_deg: tilt_pitch_deg(t), roll_deg: 0.0, yaw_deg: 0.0 };
                // The gyro integrates over its sample interval; reporting the
                // rate at the interval midpoint models that.
                s.gyro_dps[1] = tilt_pitch_rate_dps(t - dt / 2.0);
            }
        }
        s.accel_noise = noise;
        s
    }

    /// Quantized frame `index` at the default 20 Hz rate.
    pub fn step(&self, index: u64) -> SensorFrame {
        self.frame_at(index, DEFAULT_RATE_HZ)
    }

    pub fn frame_at(&self, index: u64, rate_hz: f64) -> SensorFrame {
        let s = self.sample(index, rate_hz);
        let accel = add(s.orientation.gravity(), s.accel_noise);
        quantize(index, rate_hz, accel, s.gyro_dps, s.joy, s.buttons, s.encoder_delta, 0)
    }
}

/// Frame `frame_index` of `scenario` at 20 Hz.
pub fn step_scenario(scenario: &Scenario, frame_index: u64) -> SensorFrame {
    scenario.step(frame_index)
}

pub fn tilt_pitch_deg(t: f64) -> f64 {
    TILT_AMPLITUDE_DEG * (2.0 * PI * TILT_FREQ_HZ * t).sin()
}

fn tilt_pitch_rate_dps(t: f64) -> f64 {
    TILT_AMPLITUDE_DEG * 2.0 * PI * TILT_FREQ_HZ * (2.0 * PI * TILT_FREQ_HZ * t).cos()
}

/// Unquantized scenario output for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    pub orientation: Orientation,
    pub accel_noise: [f64; 3],
    pub gyro_dps: [f64; 3],
    pub joy: [f64; 2],
    pub buttons: u8,
    pub encoder_delta: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub pitch_deg: f64,
    pub roll_deg: f64,
    pub yaw_deg: f64,
}

impl Orientation {
    pub const LEVEL: Orientation = Orientation { pitch_deg: 0.0, roll_deg: 0.0, yaw_deg: 0.0 };

    /// Gravity in the body frame, in g, for a device at rest.
    pub fn gravity(&self) -> [f64; 3] {
        let (p, r) = (self.pitch_deg.to_radians(), self.roll_deg.to_radians());
        [-p.sin(), p.cos() * r.sin(), p.cos() * r.cos()]
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn saturate_i16(v: f64) -> i16 {
    v.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

pub fn timestamp_ms(index: u64, rate_hz: f64) -> u32 {
    (index as f64 * 1000.0 / rate_hz).round() as u64 as u32
}

#[allow(clippy::too_many_arguments)]
fn quantize(
    index: u64,
    rate_hz: f64,
    accel_g: [f64; 3],
    gyro_dps: [f64; 3],
    joy: [f64; 2],
    buttons: u8,
    encoder_delta: i8,
    motor_pwm: u8,
) -> SensorFrame {
    SensorFrame {
        seq: index as u8,
        timestamp_ms: timestamp_ms(index, rate_hz),
        accel: accel_g.map(|a| saturate_i16(a * ACCEL_LSB_PER_G)),
        gyro: gyro_dps.map(|g| saturate_i16(g * GYRO_LSB_PER_DPS)),
        mag: MAG_RAW,
        joy: joy.map(|j| saturate_i16(j.clamp(-1.0, 1.0) * JOY_FULL_SCALE)),
        buttons: buttons & 0x0F,
        encoder_delta,
        motor_pwm,
    }
}

/// Human input from the control panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PanelEvent {
    ButtonDown {
        index: u8,
    },
    ButtonUp {
        index: u8,
    },
    JoySet {
        x: f64,
        y: f64,
    },
    EncoderStep {
        delta: i8,
    },
    OrientSet {
        pitch: f64,
        roll: f64,
        #[serde(default)]
        yaw: f64,
    },
}

impl PanelEvent {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidEvent(msg));
        match *self {
            PanelEvent::ButtonDown { index } | PanelEvent::ButtonUp { index } if !(1..=4).contains(&index) => {
                bad(format!("button index {index} outside 1..=4"))
            }
            PanelEvent::JoySet { x, y } if !(x.abs() <= 1.0 && y.abs() <= 1.0) => {
                bad(format!("joystick ({x}, {y}) outside [-1, 1]"))
            }
            PanelEvent::EncoderStep { delta } if delta != 1 && delta != -1 => {
                bad(format!("encoder step {delta} is not ±1"))
            }
            PanelEvent::OrientSet { pitch, roll, yaw }
                if !(pitch.abs() <= 90.0 && roll.abs() <= 180.0 && yaw.is_finite()) =>
            {
                bad(format!("orientation ({pitch}, {roll}, {yaw}) out of range"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Overrides {
    held: u8,
    joy: Option<[f64; 2]>,
    encoder_pending: i32,
    orient: Option<Orientation>,
    /// Commanded orientation as of the previous emitted frame.
    last_emitted_orient: Option<Orientation>,
}

/// A scenario-driven device with live panel overrides.
///
/// Iterating yields frames in order; panel events queued through a
/// [`PanelHandle`] are drained before each frame is produced, so an event
/// sent before frame `n` is built shows up in frame `n`.
pub struct VirtualDevice {
    scenario: Scenario,
    rate_hz: f64,
    index: u64,
    overrides: Overrides,
    events: Option<Receiver<PanelEvent>>,
    motor_pwm: u8,
}

/// Cloneable sender for panel events.
#[derive(Debug, Clone)]
pub struct PanelHandle(Sender<PanelEvent>);

impl PanelHandle {
    pub fn send(&self, event: PanelEvent) -> Result<(), SimError> {
        event.validate()?;
        self.0.send(event).map_err(|_| SimError::InvalidEvent("device is no longer running".into()))
    }
}

impl VirtualDevice {
    pub fn new(scenario: Scenario, rate_hz: f64) -> Result<Self, SimError> {
        if !(1.0..=200.0).contains(&rate_hz) {
            return Err(SimError::InvalidRate(rate_hz));
        }
        Ok(VirtualDevice { scenario, rate_hz, index: 0, overrides: Overrides::default(), events: None, motor_pwm: 0 })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.rate_hz)
    }

    /// Index of the next frame to be produced.
    pub fn position(&self) -> u64 {
        self.index
    }

    pub fn set_motor_pwm(&mut self, pwm: u8) {
        self.motor_pwm = pwm;
    }

    /// Attaches a thread-safe event queue, replacing any previous one.
    pub fn panel(&mut self) -> PanelHandle {
        let (tx, rx) = crossbeam_channel::unbounded();
        self.events = Some(rx);
        PanelHandle(tx)
    }

    pub fn apply_panel_event(&mut self, event: PanelEvent) -> Result<(), SimError> {
        event.validate()?;
        let o = &mut self.overrides;
        match event {
            PanelEvent::ButtonDown { index } => o.held |= 1 << (index - 1),
            PanelEvent::ButtonUp { index } => o.held &= !(1 << (index - 1)),
            PanelEvent::JoySet { x, y } => o.joy = Some([x, y]),
            PanelEvent::EncoderStep { delta } => o.encoder_pending += i32::from(delta),
            PanelEvent::OrientSet { pitch, roll, yaw } => {
                o.orient = Some(Orientation { pitch_deg: pitch, roll_deg: roll, yaw_deg: yaw })
            }
        }
        Ok(())
    }

    fn drain_events(&mut self) {
        let Some(rx) = self.events.take() else { return };
        for event in rx.try_iter() {
            if let Err(e) = self.apply_panel_event(event) {
                log::warn!("dropping panel event: {e}");
            }
        }
        self.events = Some(rx);
    }

    pub fn next_frame(&mut self) -> SensorFrame {
        self.drain_events();
        let index = self.index;
        self.index += 1;
        let base = self.scenario.sample(index, self.rate_hz);
        let o = &mut self.overrides;

        let (orientation, gyro) = match o.orient {
            Some(cmd) => {
                let prev = o.last_emitted_orient.unwrap_or(base.orientation);
                let rate = self.rate_hz;
                let gyro = [
                    (cmd.roll_deg - prev.roll_deg) * rate,
                    (cmd.pitch_deg - prev.pitch_deg) * rate,
                    (cmd.yaw_deg - prev.yaw_deg) * rate,
                ];
                o.last_emitted_orient = Some(cmd);
                (cmd, gyro)
            }
            None => {
                o.last_emitted_orient = None;
                (base.orientation, base.gyro_dps)
            }
        };
        let joy = o.joy.unwrap_or(base.joy);
        let buttons = base.buttons | o.held;
        // Steps beyond the i8 range carry over to the next frame.
        let total = i32::from(base.encoder_delta) + o.encoder_pending;
        let encoder = total.clamp(-128, 127);
        o.encoder_pending = total - encoder;
        let accel = add(orientation.gravity(), base.accel_noise);
        quantize(index, self.rate_hz, accel, gyro, joy, buttons, encoder as i8, self.motor_pwm)
    }

    fn finished(&self) -> bool {
        match self.scenario.duration_s {
            Some(d) => self.index as f64 >= (d * self.rate_hz).ceil(),
            None => false,
        }
    }

    /// Emits frames paced in real time until `stop` is set, the scenario
    /// ends, or `sink` returns `false`.
    ///
    /// Deadlines are absolute (`start + n * period`) so scheduling delays do
    /// not accumulate.
    pub fn run_realtime(&mut self, stop: &AtomicBool, mut sink: impl FnMut(SensorFrame) -> bool) {
        let start = Instant::now();
        let first = self.index;
        let period = 1.0 / self.rate_hz;
        while !stop.load(Ordering::Relaxed) && !self.finished() {
            let due = start + Duration::from_secs_f64((self.index - first) as f64 * period);
            sleep_until(due);
            if !sink(self.next_frame()) {
                break;
            }
        }
    }
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now + SPIN_MARGIN {
        std::thread::sleep(deadline - now - SPIN_MARGIN);
    }
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
}

impl Iterator for VirtualDevice {
    type Item = SensorFrame;

    fn next(&mut self) -> Option<SensorFrame> {
        if self.finished() {
            None
        } else {
            Some(self.next_frame())
        }
    }
}

/// An unbounded 20 Hz-style frame source for `scenario` at `rate_hz`.
pub fn stream(scenario: Scenario, rate_hz: f64) -> Result<VirtualDevice, SimError> {
    VirtualDevice::new(scenario, rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: [f64; 3]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn idle_is_gravity_only() {
        let f = step_scenario(&Scenario::new(ScenarioKind::Idle, 1), 0);
        assert_eq!(f.buttons, 0);
        assert!((norm(f.accel_g()) - 1.0).abs() < 0.01);
        assert_eq!(f.gyro, [0; 3]);
        assert_eq!(f.joy, [0; 2]);
    }

    #[test]
    fn fidget_burst_toggles_buttons() {
        let s = Scenario::new(ScenarioKind::FidgetBurst, 9);
        // 2 s idle then burst: frames 40..80 at 20 Hz.
        for i in 40..79 {
            let (a, b) = (s.step(i), s.step(i + 1));
            assert_ne!(a.buttons & 1, b.buttons & 1, "frame {i}");
        }
        assert_eq!(s.step(10).buttons, 0);
    }

    #[test]
    fn tilt_sweep_quarter_period_reaches_full_pitch() {
        let s = Scenario::new(ScenarioKind::TiltSweep, 3);
        // Quarter period of 0.1 Hz = 2.5 s = frame 50.
        let a = s.step(50).accel_g();
        // Forward kinematics: pitch = atan2(-ax, sqrt(ay^2 + az^2)).
        let pitch = (-a[0]).atan2((a[1] * a[1] + a[2] * a[2]).sqrt()).to_degrees();
        assert!((pitch - 80.0).abs() < 0.5, "{pitch}");
    }

    #[test]
    fn unknown_scenario_rejected() {
        assert_eq!(Scenario::parse("juggle", 0), Err(SimError::UnknownScenario("juggle".into())));
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
    }

    #[test]
    fn frames_are_deterministic() {
        for kind in ScenarioKind::ALL {
            let a: Vec<_> = stream(Scenario::new(kind, 77), 20.0).unwrap().take(200).collect();
            let b: Vec<_> = stream(Scenario::new(kind, 77), 20.0).unwrap().take(200).collect();
            let c: Vec<_> = (0..200).map(|i| Scenario::new(kind, 77).step(i)).collect();
            assert_eq!(a, b);
            assert_eq!(a, c);
        }
        let x = Scenario::new(ScenarioKind::Idle, 1).step(5);
        let y = Scenario::new(ScenarioKind::Idle, 2).step(5);
        assert_ne!(x, y);
    }

    #[test]
    fn stream_timing_and_sequence() {
        let frames: Vec<_> = stream(Scenario::new(ScenarioKind::Idle, 0), 20.0).unwrap().take(600).collect();
        for w in frames.windows(2) {
            assert_eq!(w[1].timestamp_ms - w[0].timestamp_ms, 50);
            assert_eq!(w[1].seq, w[0].seq.wrapping_add(1));
        }
        assert_eq!(frames[255].seq, 255);
        assert_eq!(frames[256].seq, 0);
        assert_eq!(stream(Scenario::new(ScenarioKind::Idle, 0), 0.0).err(), Some(SimError::InvalidRate(0.0)));
        assert!(stream(Scenario::new(ScenarioKind::Idle, 0), 201.0).is_err());
    }

    #[test]
    fn gravity_dominates_outside_bursts() {
        for kind in ScenarioKind::ALL {
            let s = Scenario::new(kind, 11);
            for i in 0..400 {
                if kind == ScenarioKind::FidgetBurst && Scenario::in_burst(i as f64 / 20.0) {
                    continue;
                }
                let n = norm(s.step(i).accel_g());
                assert!((0.7..=1.3).contains(&n), "{kind} frame {i}: {n}");
            }
        }
    }

    #[test]
    fn duration_bounds_stream() {
        let dev = stream(Scenario::new(ScenarioKind::Idle, 0).with_duration(2.0), 20.0).unwrap();
        assert_eq!(dev.count(), 40);
    }

    #[test]
    fn panel_overrides() {
        let mut dev = VirtualDevice::new(Scenario::new(ScenarioKind::Idle, 1), 20.0).unwrap();
        dev.apply_panel_event(PanelEvent::ButtonDown { index: 2 }).unwrap();
        let f = dev.next_frame();
        assert!(f.button(2));
        assert!(dev.next_frame().button(2));
        dev.apply_panel_event(PanelEvent::ButtonUp { index: 2 }).unwrap();
        assert!(!dev.next_frame().button(2));

        dev.apply_panel_event(PanelEvent::JoySet { x: 1.0, y: 0.0 }).unwrap();
        assert_eq!(dev.next_frame().joy, [32767, 0]);

        dev.apply_panel_event(PanelEvent::OrientSet { pitch: 30.0, roll: 0.0, yaw: 0.0 }).unwrap();
        let f = dev.next_frame();
        let a = f.accel_g();
        assert!((a[0] + 0.5).abs() < 0.01 && a[1].abs() < 0.01 && (a[2] - 0.866).abs() < 0.01, "{a:?}");
        // 30° commanded within one 50 ms frame.
        assert!((f.gyro_dps()[1] - 600.0).abs() < 0.1);
        assert_eq!(dev.next_frame().gyro, [0; 3]);

        dev.apply_panel_event(PanelEvent::EncoderStep { delta: 1 }).unwrap();
        dev.apply_panel_event(PanelEvent::EncoderStep { delta: 1 }).unwrap();
        assert_eq!(dev.next_frame().encoder_delta, 2);
        assert_eq!(dev.next_frame().encoder_delta, 0);
    }

    #[test]
    fn invalid_events_rejected() {
        let mut dev = VirtualDevice::new(Scenario::new(ScenarioKind::Idle, 1), 20.0).unwrap();
        for ev in [
            PanelEvent::ButtonDown { index: 0 },
            PanelEvent::ButtonUp { index: 5 },
            PanelEvent::JoySet { x: 1.5, y: 0.0 },
            PanelEvent::JoySet { x: f64::NAN, y: 0.0 },
            PanelEvent::EncoderStep { delta: 3 },
            PanelEvent::OrientSet { pitch: 120.0, roll: 0.0, yaw: 0.0 },
        ] {
            assert!(matches!(dev.apply_panel_event(ev), Err(SimError::InvalidEvent(_))), "{ev:?}");
        }
    }

    #[test]
    fn queued_event_visible_in_next_frame() {
        let mut dev = VirtualDevice::new(Scenario::new(ScenarioKind::TiltSweep, 1), 20.0).unwrap();
        let panel = dev.panel();
        dev.next_frame();
        panel.send(PanelEvent::ButtonDown { index: 4 }).unwrap();
        assert!(dev.next_frame().button(4));
    }

    #[test]
    fn panel_event_json() {
        let ev: PanelEvent = serde_json::from_str(r#"{"kind":"button_down","index":3}"#).unwrap();
        assert_eq!(ev, PanelEvent::ButtonDown { index: 3 });
        let ev: PanelEvent = serde_json::from_str(r#"{"kind":"orient_set","pitch":10,"roll":-5}"#).unwrap();
        assert_eq!(ev, PanelEvent::OrientSet { pitch: 10.0, roll: -5.0, yaw: 0.0 });
        assert!(serde_json::from_str::<PanelEvent>(r#"{"kind":"explode"}"#).is_err());
    }
}

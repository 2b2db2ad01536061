//! Pitch/roll estimation with a complementary filter.

use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::wire::SensorFrame;

pub const DEFAULT_ALPHA: f64 = 0.98;
/// Below this accelerometer magnitude (in g) gravity is not observable.
pub const MIN_GRAVITY_G: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("accelerometer magnitude {0} g too small to observe gravity")]
pub struct DegenerateAccel(pub f64);

/// Fused attitude. Pitch in [-π/2, π/2], roll in (-π, π], radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Attitude {
    pub pitch: f64,
    pub roll: f64,
    pub updated_at: u32,
}

impl Attitude {
    pub fn pitch_deg(&self) -> f64 {
        self.pitch.to_degrees()
    }

    pub fn roll_deg(&self) -> f64 {
        self.roll.to_degrees()
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Attitude implied by gravity alone.
pub fn accel_attitude(accel_g: [f64; 3]) -> Result<Attitude, DegenerateAccel> {
    let [ax, ay, az] = accel_g;
    let norm = (ax * ax + ay * ay + az * az).sqrt();
    if !(norm > MIN_GRAVITY_G) {
        return Err(DegenerateAccel(norm));
    }
    Ok(Attitude { pitch: (-ax).atan2((ay * ay + az * az).sqrt()), roll: wrap_angle(ay.atan2(az)), updated_at: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplementaryFilter {
    /// Weight on the gyro-integrated angle; `1 - alpha` goes to the
    /// accelerometer angle.
    pub alpha: f64,
}

impl Default for ComplementaryFilter {
    fn default() -> Self {
        ComplementaryFilter { alpha: DEFAULT_ALPHA }
    }
}

impl ComplementaryFilter {
    pub fn new(alpha: f64) -> Self {
        ComplementaryFilter { alpha: alpha.clamp(0.0, 1.0) }
    }

    /// One filter update. Gyro x is the roll rate and gyro y the pitch
    /// rate. A non-positive or non-finite `dt` skips gyro integration.
    pub fn step(&self, state: Attitude, frame: &SensorFrame, dt: f64) -> Attitude {
        let dt = if dt.is_finite() && dt > 0.0 { dt.min(1.0) } else { 0.0 };
        let gyro = frame.gyro_dps();
        let pitch_gyro = state.pitch + gyro[1].to_radians() * dt;
        let roll_gyro = state.roll + gyro[0].to_radians() * dt;
        let (pitch, roll) = match accel_attitude(frame.accel_g()) {
            Ok(acc) => {
                // Blend roll along the shorter arc so ±π does not average to 0.
                let roll_err = wrap_angle(acc.roll - roll_gyro);
                (self.alpha * pitch_gyro + (1.0 - self.alpha) * acc.pitch, roll_gyro + (1.0 - self.alpha) * roll_err)
            }
            Err(_) => (pitch_gyro, roll_gyro),
        };
        Attitude {
            pitch: if pitch.is_finite() { pitch.clamp(-FRAC_PI_2, FRAC_PI_2) } else { 0.0 },
            roll: if roll.is_finite() { wrap_angle(roll) } else { 0.0 },
            updated_at: frame.timestamp_ms,
        }
    }
}

/// [`ComplementaryFilter::step`] with the default coefficient.
pub fn fuse_step(state: Attitude, frame: &SensorFrame, dt: f64) -> Attitude {
    ComplementaryFilter::default().step(state, frame, dt)
}

/// Stateful filter for one frame stream; derives `dt` from timestamps.
#[derive(Debug, Clone)]
pub struct AttitudeTracker {
    filter: ComplementaryFilter,
    state: Option<Attitude>,
}

impl AttitudeTracker {
    pub fn new(filter: ComplementaryFilter) -> Self {
        AttitudeTracker { filter, state: None }
    }

    pub fn attitude(&self) -> Attitude {
        self.state.unwrap_or_default()
    }

    /// Updates with the next frame. The first frame initializes from the
    /// accelerometer; a timestamp gap over 1 s re-initializes the same way.
    pub fn update(&mut self, frame: &SensorFrame) -> Attitude {
        let next = match self.state {
            Some(prev) => {
                let dt = f64::from(frame.timestamp_ms.wrapping_sub(prev.updated_at)) / 1000.0;
                if dt > 1.0 {
                    self.init(frame)
                } else {
                    self.filter.step(prev, frame, dt)
                }
            }
            None => self.init(frame),
        };
        self.state = Some(next);
        next
    }

    fn init(&self, frame: &SensorFrame) -> Attitude {
        let mut a = accel_attitude(frame.accel_g()).unwrap_or_default();
        a.updated_at = frame.timestamp_ms;
        a
    }
}

//! Quick oracle checks for `mindcube selftest`. Smaller sample sizes than
//! the full acceptance suite; meant to run in a couple of seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{condition_from_window, ActivityConfig};
use crate::diffusion::{make_schedule, sample, GaussianOracle, GuidanceConfig, LatentSequence, SamplerConfig};
use crate::fusion::{accel_attitude, fuse_step, Attitude, DEFAULT_ALPHA};
use crate::simdevice::{stream, Scenario, ScenarioKind};
use crate::sonify::{render_latents, DEFAULT_HOP};
use crate::wire::{crc16, decode_frame, encode_frame, SensorFrame};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn random_frame(rng: &mut ChaCha8Rng) -> SensorFrame {
    SensorFrame {
        seq: rng.gen(),
        timestamp_ms: rng.gen(),
        accel: rng.gen(),
        gyro: rng.gen(),
        mag: rng.gen(),
        joy: rng.gen(),
        buttons: rng.gen_range(0..16),
        encoder_delta: rng.gen(),
        motor_pwm: rng.gen(),
    }
}

fn wire() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for i in 0..10_000 {
        let f = random_frame(&mut rng);
        let framed = encode_frame(&f).unwrap();
        let body = &framed[..framed.len() - 1];
        if decode_frame(body) != Ok(f) {
            failures += 1;
        }
        if i < 20 {
            for bit in 0..body.len() * 8 {
                let mut flipped = body.to_vec();
                flipped[bit / 8] ^= 1 << (bit % 8);
                if decode_frame(&flipped).is_ok() {
                    failures += 1;
                }
            }
        }
    }
    let crc_ok = crc16(b"123456789") == 0x29B1;
    check("wire", failures == 0 && crc_ok, format!("{failures} failures, check value ok: {crc_ok}"))
}

fn rate() -> Check {
    let frames: Vec<_> = stream(Scenario::new(ScenarioKind::Idle, 0), 20.0).unwrap().take(200).collect();
    let ok = frames.windows(2).all(|w| w[1].timestamp_ms - w[0].timestamp_ms == 50);
    check("stream rate", ok, "200 frames at 20 Hz".into())
}

fn fusion() -> Check {
    let f = SensorFrame { accel: [-2048, 0, 3547], ..Default::default() };
    let target = accel_attitude(f.accel_g()).unwrap().pitch;
    let mut s = Attitude::default();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let before = s.pitch - target;
        s = fuse_step(s, &f, 0.05);
        worst = worst.max(((s.pitch - target) / before - DEFAULT_ALPHA).abs());
    }
    check("fusion convergence", worst < 1e-9, format!("max ratio error {worst:.2e}"))
}

fn conditioning() -> Check {
    let cfg = ActivityConfig::default();
    let idle: Vec<_> = stream(Scenario::new(ScenarioKind::Idle, 2), 20.0).unwrap().take(60).collect();
    let burst: Vec<_> = stream(Scenario::new(ScenarioKind::FidgetBurst, 2), 20.0).unwrap().skip(20).take(60).collect();
    let (a_idle, _) = condition_from_window(&idle, &cfg).unwrap();
    let (a_burst, _) = condition_from_window(&burst, &cfg).unwrap();
    check("activity score", a_idle < 0.02 && a_burst > 0.5, format!("idle {a_idle:.4}, burst {a_burst:.4}"))
}

fn diffusion() -> Check {
    let oracle = GaussianOracle { mu: [0.4; 4], sigma: 1.3 };
    let cfg = SamplerConfig::new(make_schedule(30).unwrap(), GuidanceConfig::unconditional(), 4096, 9);
    let out = sample(&oracle, &cfg, None).unwrap();
    let v: Vec<f64> = out.channel(0).map(f64::from).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    let ok = (mean - 0.4).abs() <= 0.05 && (std - 1.3).abs() <= 0.05;
    check("sampler marginals", ok, format!("mean {mean:.4} (0.4), std {std:.4} (1.3)"))
}

fn outpaint() -> Check {
    let prefix = LatentSequence::new((0..64).map(|i| [i as f32 * 0.01, -0.5, 0.25, 1.0]).collect()).unwrap();
    let cfg = SamplerConfig::new(make_schedule(30).unwrap(), GuidanceConfig::unconditional(), 512, 3);
    let out = sample(&GaussianOracle::standard(), &cfg, Some(&prefix)).unwrap();
    let exact = out.frames()[..64].iter().zip(prefix.frames()).all(|(a, b)| a.map(f32::to_bits) == b.map(f32::to_bits));
    check("outpaint prefix", exact, "64 frames bit-exact".into())
}

fn duration() -> Check {
    let audio = render_latents(&LatentSequence::zeros(512), DEFAULT_HOP).unwrap();
    check(
        "render duration",
        audio.frames() == 1 << 20,
        format!("{} samples, {:.3} s", audio.frames(), audio.duration_s()),
    )
}

pub fn run_all() -> Vec<Check> {
    vec![wire(), rate(), fusion(), conditioning(), diffusion(), outpaint(), duration()]
}

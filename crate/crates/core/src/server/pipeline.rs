use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::RecvTimeoutError;

use crate::conditioning::{condition_from_window, Condition, FrameWindow};
use crate::diffusion::{
    make_schedule, outpaint_continuation, sample, ConditionedOracle, Denoiser, DiffusionError, GuidanceConfig,
    LatentSequence, SamplerConfig, Schedule,
};
use crate::fusion::{AttitudeTracker, ComplementaryFilter};
use crate::sonify::{audio_rms, render_latents, serialize_csv, AudioBuffer, ControlMapper};
use crate::wire::SensorFrame;

use super::broadcast::Broadcaster;
use super::config::PipelineConfig;
use super::ingest::FrameSource;
use super::packet_log::PacketLogWriter;
use super::panel_ws::{Telemetry, TelemetryAttitude};
use super::{sleep_until_unless_stopped, ServerError};

pub const AUDIO_QUEUE_DEPTH: usize = 3;
/// Per-series cap on the timing histories kept in [`PipelineStats`].
const HISTORY_CAP: usize = 100_000;

/// Rendered generations waiting for playback; oldest dropped when full.
#[derive(Default)]
pub struct AudioQueue {
    queue: Mutex<VecDeque<Arc<AudioBuffer>>>,
    dropped: AtomicU64,
}

impl AudioQueue {
    /// Enqueues `audio`, returning true if an older buffer was dropped.
    pub fn push(&self, audio: Arc<AudioBuffer>) -> bool {
        let mut q = self.queue.lock().unwrap();
        q.push_back(audio);
        if q.len() > AUDIO_QUEUE_DEPTH {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
            log::info!("audio queue full, dropped oldest generation");
            return true;
        }
        false
    }

    pub fn pop(&self) -> Option<Arc<AudioBuffer>> {
        self.queue.lock().unwrap().pop_front()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

/// Counters and timing histories. Times are seconds since pipeline start.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineStats {
    pub frames: u64,
    pub csv_lines: u64,
    pub seq_gaps: u64,
    pub generations: u64,
    pub failed_generations: u64,
    pub overruns: u64,
    /// When each generation cycle snapshotted the frame window.
    pub ingestion_s: Vec<f64>,
    pub conditions: Vec<f64>,
    pub generation_s: Vec<f64>,
    pub csv_emit_s: Vec<f64>,
}

fn push_capped(v: &mut Vec<f64>, x: f64) {
    if v.len() >= HISTORY_CAP {
        v.drain(..HISTORY_CAP / 2);
    }
    v.push(x);
}

impl PipelineStats {
    /// Snapshots per second over the recorded span.
    pub fn ingestion_rate_hz(&self) -> Option<f64> {
        let (first, last) = (self.ingestion_s.first()?, self.ingestion_s.last()?);
        (self.ingestion_s.len() >= 2 && last > first).then(|| (self.ingestion_s.len() - 1) as f64 / (last - first))
    }
}

/// State shared between pipeline workers and the network surfaces.
pub struct SharedState {
    /// Most recent frames; written by ingest, snapshotted by generation.
    pub window: Mutex<FrameWindow>,
    telemetry: Mutex<Telemetry>,
    stats: Mutex<PipelineStats>,
    pub started: Instant,
}

impl SharedState {
    pub fn new(window_frames: usize) -> Self {
        SharedState {
            window: Mutex::new(FrameWindow::new(window_frames)),
            telemetry: Mutex::default(),
            stats: Mutex::default(),
            started: Instant::now(),
        }
    }

    pub fn telemetry(&self) -> Telemetry {
        self.telemetry.lock().unwrap().clone()
    }

    pub fn stats(&self) -> PipelineStats {
        self.stats.lock().unwrap().clone()
    }

    fn since_start(&self, t: Instant) -> f64 {
        t.saturating_duration_since(self.started).as_secs_f64()
    }
}

/// Outpainting chain: each call continues the previous sequence, seeded
/// with `seed + cycle`.
pub struct Generator {
    denoiser: Box<dyn Denoiser>,
    schedule: Schedule,
    gamma: f64,
    keep: usize,
    length: usize,
    seed: u64,
    previous: Option<LatentSequence>,
    cycle: u64,
}

impl Generator {
    pub fn new(config: &PipelineConfig, denoiser: Box<dyn Denoiser>) -> Result<Self, DiffusionError> {
        Ok(Generator {
            denoiser,
            schedule: make_schedule(config.steps)?,
            gamma: config.gamma,
            keep: config.keep,
            length: config.length,
            seed: config.seed,
            previous: None,
            cycle: 0,
        })
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn generate(&mut self, condition: Condition) -> Result<LatentSequence, DiffusionError> {
        let config = SamplerConfig::new(
            self.schedule.clone(),
            GuidanceConfig::new(self.gamma, condition),
            self.length,
            self.seed.wrapping_add(self.cycle),
        );
        let out = match &self.previous {
            Some(prev) if self.keep > 0 => outpaint_continuation(&*self.denoiser, &config, prev, self.keep)?,
            _ => sample(&*self.denoiser, &config, None)?,
        };
        self.cycle += 1;
        self.previous = Some(out.clone());
        Ok(out)
    }
}

#[derive(Default)]
pub struct PipelineOptions {
    /// Writes each generation as `gen_NNNNN.wav` and `.mclz` here.
    pub wav_out: Option<PathBuf>,
    pub packet_log: Option<PacketLogWriter>,
    /// Defaults to [`ConditionedOracle`].
    pub denoiser: Option<Box<dyn Denoiser>>,
}

/// The running pipeline: ingest, 20 Hz control emitter and generation
/// loop. Stops when dropped.
pub struct Pipeline {
    shared: Arc<SharedState>,
    audio: Arc<AudioQueue>,
    stop: Arc<AtomicBool>,
    source_done: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl Pipeline {
    pub fn start(
        config: PipelineConfig,
        source: FrameSource,
        broadcaster: Broadcaster,
        options: PipelineOptions,
    ) -> Result<Self, ServerError> {
        config.validate()?;
        let shared = Arc::new(SharedState::new(config.activity.window_frames));
        Self::start_with_state(config, source, broadcaster, options, shared)
    }

    /// Like [`start`](Self::start) with caller-provided shared state, so a
    /// panel server can be attached before frames flow.
    pub fn start_with_state(
        config: PipelineConfig,
        source: FrameSource,
        broadcaster: Broadcaster,
        options: PipelineOptions,
        shared: Arc<SharedState>,
    ) -> Result<Self, ServerError> {
        config.validate()?;
        if let Some(dir) = &options.wav_out {
            std::fs::create_dir_all(dir)?;
        }
        let denoiser = options.denoiser.unwrap_or_else(|| Box::new(ConditionedOracle::default()));
        let generator = Generator::new(&config, denoiser)?;
        let audio = Arc::new(AudioQueue::default());
        let stop = Arc::new(AtomicBool::new(false));
        let source_done = Arc::new(AtomicBool::new(false));
        let (tx, rx) = crossbeam_channel::unbounded::<SensorFrame>();

        let ingest = {
            let (shared, stop, done) = (shared.clone(), stop.clone(), source_done.clone());
            let mut log = options.packet_log;
            thread::Builder::new().name("ingest".into()).spawn(move || {
                source.run(&stop, |p| {
                    shared.window.lock().unwrap().push(p.frame);
                    if let Some(w) = log.as_mut() {
                        if let Err(e) = w.append(p.received_us, &p.framed) {
                            log::error!("packet log write failed, logging stopped: {e}");
                            log = None;
                        }
                    }
                    tx.send(p.frame).is_ok()
                });
                if let Some(mut w) = log {
                    let _ = w.flush();
                }
                done.store(true, Ordering::Relaxed);
                if !stop.load(Ordering::Relaxed) {
                    log::info!("frame source finished");
                }
            })?
        };

        let control = {
            let (shared, stop, config) = (shared.clone(), stop.clone(), config.clone());
            thread::Builder::new().name("control".into()).spawn(move || {
                let mut tracker = AttitudeTracker::new(ComplementaryFilter::new(config.fusion_alpha));
                let mut window = FrameWindow::new(config.activity.window_frames);
                let mut mapper = ControlMapper::default();
                let mut last_seq: Option<u8> = None;
                loop {
                    let frame = match rx.recv_timeout(Duration::from_millis(100)) {
                        Ok(f) => f,
                        Err(RecvTimeoutError::Timeout) if !stop.load(Ordering::Relaxed) => continue,
                        Err(_) => break,
                    };
                    let mut gap = false;
                    if let Some(prev) = last_seq {
                        let expected = prev.wrapping_add(1);
                        if frame.seq != expected {
                            gap = true;
                            log::warn!(
                                "seq gap: expected {expected}, got {} ({} frames missing)",
                                frame.seq,
                                frame.seq.wrapping_sub(expected)
                            );
                        }
                    }
                    last_seq = Some(frame.seq);
                    let attitude = tracker.update(&frame);
                    window.push(frame);
                    let (activity, condition) = if window.is_full() {
                        condition_from_window(&window.snapshot(), &config.activity).unwrap_or_default()
                    } else {
                        (0.0, crate::conditioning::rms_condition(0.0, &config.activity))
                    };
                    let cf = mapper.map(&attitude, &frame, activity, condition);
                    broadcaster.broadcast(serialize_csv(&cf).as_bytes());
                    let emitted = Instant::now();
                    {
                        let mut s = shared.stats.lock().unwrap();
                        s.frames += 1;
                        s.csv_lines += 1;
                        s.seq_gaps += u64::from(gap);
                        push_capped(&mut s.csv_emit_s, shared.since_start(emitted));
                    }
                    let mut t = shared.telemetry.lock().unwrap();
                    t.frame_seq = frame.seq;
                    t.timestamp_ms = frame.timestamp_ms;
                    t.attitude = TelemetryAttitude { pitch_deg: attitude.pitch_deg(), roll_deg: attitude.roll_deg() };
                    t.activity = activity;
                    t.condition = condition.value();
                    t.joystick = frame.joy_unit();
                    t.buttons = std::array::from_fn(|i| frame.button(i as u8 + 1));
                    t.encoder_position = mapper.encoder_position();
                }
            })?
        };

        let generation = {
            let (shared, stop, audio) = (shared.clone(), stop.clone(), audio.clone());
            thread::Builder::new()
                .name("generation".into())
                .spawn(move || generation_loop(&config, generator, &shared, &audio, &stop, options.wav_out))?
        };

        Ok(Pipeline { shared, audio, stop, source_done, handles: vec![ingest, control, generation] })
    }

    pub fn shared(&self) -> &Arc<SharedState> {
        &self.shared
    }

    pub fn audio(&self) -> &Arc<AudioQueue> {
        &self.audio
    }

    pub fn stats(&self) -> PipelineStats {
        self.shared.stats()
    }

    pub fn source_finished(&self) -> bool {
        self.source_done.load(Ordering::Relaxed)
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for Pipeline {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Moves the calling thread to the idle scheduling class so the 20 Hz path
/// preempts generation work immediately, even on a single core.
fn lower_thread_priority() {
    #[cfg(target_os = "linux")]
    // SAFETY: plain syscalls on the calling thread; `param` outlives the call.
    unsafe {
        let param = libc::sched_param { sched_priority: 0 };
        if libc::sched_setscheduler(0, libc::SCHED_IDLE, &param) != 0 {
            log::debug!("could not move generation thread to SCHED_IDLE");
        }
    }
}

fn generation_loop(
    config: &PipelineConfig,
    mut generator: Generator,
    shared: &SharedState,
    audio: &AudioQueue,
    stop: &AtomicBool,
    wav_out: Option<PathBuf>,
) {
    lower_thread_priority();
    let period = Duration::from_secs_f64(config.sensor_read_period_s);
    let overrun_limit = Duration::from_secs_f64(2.0 * config.generation_budget_s);
    let mut due = shared.started + period;
    while sleep_until_unless_stopped(stop, due) {
        let snapshot_at = Instant::now();
        let window = shared.window.lock().unwrap().snapshot();
        let (activity, condition) = match condition_from_window(&window, &config.activity) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("not generating yet: {e}");
                due = snapshot_at + period;
                continue;
            }
        };
        {
            let mut s = shared.stats.lock().unwrap();
            push_capped(&mut s.ingestion_s, shared.since_start(snapshot_at));
            push_capped(&mut s.conditions, condition.value());
        }
        let cycle = generator.cycle();
        let rendered = generator.generate(condition).map_err(|e| e.to_string()).and_then(|latents| {
            let audio = render_latents(&latents, config.hop).map_err(|e| e.to_string())?;
            Ok((latents, audio))
        });
        if let Some(latency) = config.simulated_latency_s {
            sleep_until_unless_stopped(stop, snapshot_at + Duration::from_secs_f64(latency));
        }
        let took = snapshot_at.elapsed();
        due = (snapshot_at + period).max(Instant::now());
        match rendered {
            Ok((latents, buffer)) => {
                let rms = audio_rms(&buffer).unwrap_or(0.0);
                log::info!(
                    "generation {cycle}: activity {activity:.3}, c {:.3}, {:.3} s, rms {rms:.4}",
                    condition.value(),
                    took.as_secs_f64()
                );
                if let Some(dir) = &wav_out {
                    let stem = dir.join(format!("gen_{cycle:05}"));
                    if let Err(e) = latents.save(stem.with_extension("mclz")) {
                        log::error!("could not write latents: {e}");
                    }
                    if let Err(e) = buffer.write_wav(stem.with_extension("wav")) {
                        log::error!("could not write wav: {e}");
                    }
                }
                audio.push(Arc::new(buffer));
                {
                    let mut s = shared.stats.lock().unwrap();
                    s.generations += 1;
                    push_capped(&mut s.generation_s, took.as_secs_f64());
                }
                let mut t = shared.telemetry.lock().unwrap();
                t.last_generation_s = Some(took.as_secs_f64());
                t.last_render_rms = Some(rms);
                t.generations += 1;
            }
            Err(e) => {
                log::error!("generation {cycle} failed: {e}");
                shared.stats.lock().unwrap().failed_generations += 1;
            }
        }
        if took > overrun_limit {
            log::warn!(
                "generation overrun: {:.3} s exceeds twice the {:.3} s budget, skipping a cycle",
                took.as_secs_f64(),
                config.generation_budget_s
            );
            shared.stats.lock().unwrap().overruns += 1;
            due += period;
        }
    }
}

//! Offline, clock-free re-run of the generation path over a frame sequence.
//!
//! Snapshots are taken on device time: whenever a frame's timestamp reaches
//! the next multiple of the read period (counted from the first frame), the
//! window ending at that frame is conditioned. No wall clock is involved, so
//! the same frames always give the same trace.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::conditioning::{condition_from_window, Condition, FrameWindow};
use crate::diffusion::{Denoiser, DiffusionError, LatentSequence};
use crate::wire::{decode_frame, SensorFrame};

use super::config::PipelineConfig;
use super::packet_log::PacketLogEntry;
use super::pipeline::Generator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub index: u64,
    pub timestamp_ms: u32,
    pub activity: f64,
    pub condition: Condition,
}

/// Decodes logged packets, skipping and counting the ones that fail.
pub fn frames_from_log(entries: &[PacketLogEntry]) -> (Vec<SensorFrame>, usize) {
    let mut bad = 0;
    let frames = entries
        .iter()
        .filter_map(|e| match decode_frame(&e.framed[..e.framed.len().saturating_sub(1)]) {
            Ok(f) => Some(f),
            Err(err) => {
                log::warn!("skipping logged packet: {err}");
                bad += 1;
                None
            }
        })
        .collect();
    (frames, bad)
}

pub fn condition_trace(frames: &[SensorFrame], config: &PipelineConfig) -> Vec<TraceEntry> {
    let period_ms = (config.sensor_read_period_s * 1000.0).round().max(1.0) as u64;
    let mut window = FrameWindow::new(config.activity.window_frames);
    let mut trace = Vec::new();
    let mut origin: Option<u64> = None;
    let mut next_k = 1u64;
    let mut last_ts: Option<u32> = None;
    for frame in frames {
        // A timestamp going backwards means the device restarted.
        if last_ts.is_some_and(|t| frame.timestamp_ms < t) {
            origin = None;
        }
        last_ts = Some(frame.timestamp_ms);
        window.push(*frame);
        let ts = u64::from(frame.timestamp_ms);
        let base = *origin.get_or_insert_with(|| {
            next_k = 1;
            ts
        });
        if ts - base < next_k * period_ms {
            continue;
        }
        next_k = (ts - base) / period_ms + 1;
        if let Ok((activity, condition)) = condition_from_window(&window.snapshot(), &config.activity) {
            trace.push(TraceEntry { index: trace.len() as u64, timestamp_ms: frame.timestamp_ms, activity, condition });
        }
    }
    trace
}

/// One line per entry: `index,timestamp_ms,activity,condition`, floats in
/// shortest round-trip form.
pub fn format_trace(trace: &[TraceEntry]) -> String {
    let mut out = String::from("index,timestamp_ms,activity,condition\n");
    for e in trace {
        let _ = writeln!(out, "{},{},{},{}", e.index, e.timestamp_ms, e.activity, e.condition.value());
    }
    out
}

/// Runs the outpainting chain over the trace, one generation per entry.
pub fn generate_latents(
    trace: &[TraceEntry],
    config: &PipelineConfig,
    denoiser: Box<dyn Denoiser>,
    mut each: impl FnMut(&TraceEntry, LatentSequence) -> Result<(), DiffusionError>,
) -> Result<(), DiffusionError> {
    let mut generator = Generator::new(config, denoiser)?;
    for entry in trace {
        each(entry, generator.generate(entry.condition)?)?;
    }
    Ok(())
}

/// Writes `gen_NNNNN.mclz` per trace entry into `dir`.
pub fn write_latents(
    trace: &[TraceEntry],
    config: &PipelineConfig,
    denoiser: Box<dyn Denoiser>,
    dir: &Path,
) -> Result<usize, DiffusionError> {
    fs::create_dir_all(dir).map_err(DiffusionError::Io)?;
    let mut n = 0;
    generate_latents(trace, config, denoiser, |e, latents| {
        latents.save(dir.join(format!("gen_{:05}.mclz", e.index))).map_err(DiffusionError::Io)?;
        n += 1;
        Ok(())
    })?;
    Ok(n)
}

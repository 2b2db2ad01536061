//! Pipeline orchestration and network surfaces.

mod broadcast;
mod config;
mod ingest;
mod packet_log;
mod panel_ws;
mod pipeline;
pub mod replay;

pub use broadcast::{Broadcaster, ControlServer, DEFAULT_BACKLOG_LIMIT};
pub use config::{ConfigError, PipelineConfig};
pub use ingest::{DeviceServer, FrameSource, Ingested, Reconnect};
pub use packet_log::{read_log, read_packet_log, PacketLogEntry, PacketLogWriter};
pub use panel_ws::{PanelServer, Telemetry, TelemetryAttitude};
pub use pipeline::{AudioQueue, Generator, Pipeline, PipelineOptions, PipelineStats, SharedState, AUDIO_QUEUE_DEPTH};

use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("could not bind {addr}: {source}")]
    BindFailed { addr: String, source: io::Error },
    #[error("frame source lost: {0}")]
    SourceLost(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Sim(#[from] crate::simdevice::SimError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
    #[error(transparent)]
    Sonify(#[from] crate::sonify::SonifyError),
    #[error(transparent)]
    Wire(#[from] crate::wire::WireError),
}

/// Sleeps for `d` in short slices; returns `false` if `stop` was raised.
pub(crate) fn sleep_unless_stopped(stop: &AtomicBool, d: Duration) -> bool {
    sleep_until_unless_stopped(stop, Instant::now() + d)
}

pub(crate) fn sleep_until_unless_stopped(stop: &AtomicBool, deadline: Instant) -> bool {
    loop {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(50)));
    }
}

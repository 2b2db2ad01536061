use std::io;
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Serialize;
use tungstenite::{Error as WsError, Message, WebSocket};

use crate::simdevice::{PanelEvent, PanelHandle};

use super::broadcast::bind;
use super::pipeline::SharedState;
use super::ServerError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TelemetryAttitude {
    pub pitch_deg: f64,
    pub roll_deg: f64,
}

/// One telemetry record, sent as `{"type":"telemetry", ...}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(tag = "type", rename = "telemetry")]
pub struct Telemetry {
    /// Per-connection record counter.
    pub seq: u64,
    pub frame_seq: u8,
    pub timestamp_ms: u32,
    pub attitude: TelemetryAttitude,
    pub activity: f64,
    pub condition: f64,
    pub last_generation_s: Option<f64>,
    pub last_render_rms: Option<f64>,
    pub generations: u64,
    pub joystick: [f64; 2],
    pub buttons: [bool; 4],
    pub encoder_position: i64,
}

#[derive(Serialize)]
struct ErrorFrame<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    message: &'a str,
}

fn error_frame(message: &str) -> Message {
    Message::Text(serde_json::to_string(&ErrorFrame { kind: "error", message }).unwrap_or_default())
}

/// WebSocket endpoint for the browser panel.
pub struct PanelServer {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl PanelServer {
    /// Binds `addr` and serves telemetry at `telemetry_hz` to each client.
    /// Incoming events go to `panel`; without one they are answered with an
    /// error frame.
    pub fn bind(
        addr: &str,
        shared: Arc<SharedState>,
        panel: Option<PanelHandle>,
        telemetry_hz: f64,
    ) -> Result<Self, ServerError> {
        let listener = bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let period = Duration::from_secs_f64(1.0 / telemetry_hz);
        let handle = {
            let stop = stop.clone();
            thread::Builder::new().name("ws-accept".into()).spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, peer)) => {
                            let (stop, shared, panel) = (stop.clone(), shared.clone(), panel.clone());
                            let spawned = thread::Builder::new().name("ws-client".into()).spawn(move || {
                                match serve_client(stream, &stop, &shared, panel.as_ref(), period) {
                                    Ok(()) => log::info!("panel {peer} disconnected"),
                                    Err(e) => log::info!("panel {peer} dropped: {e}"),
                                }
                            });
                            if let Err(e) = spawned {
                                log::warn!("could not start panel session: {e}");
                            }
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
                        Err(e) => {
                            log::warn!("panel accept failed: {e}");
                            thread::sleep(Duration::from_millis(20));
                        }
                    }
                }
            })?
        };
        Ok(PanelServer { local_addr, stop, handle: Some(handle) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for PanelServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn handle_text(text: &str, panel: Option<&PanelHandle>) -> Result<(), String> {
    let event: PanelEvent = serde_json::from_str(text).map_err(|e| format!("malformed event: {e}"))?;
    let panel = panel.ok_or("panel events need a simulated device")?;
    panel.send(event).map_err(|e| e.to_string())
}

fn is_timeout(e: &WsError) -> bool {
    matches!(e, WsError::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn serve_client(
    stream: TcpStream,
    stop: &AtomicBool,
    shared: &SharedState,
    panel: Option<&PanelHandle>,
    period: Duration,
) -> Result<(), WsError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => WsError::Io(io::ErrorKind::TimedOut.into()),
    })?;
    let mut seq = 0u64;
    // Absolute deadlines keep the cadence from drifting.
    let mut due = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        let now = Instant::now();
        if now >= due {
            let mut t = shared.telemetry();
            t.seq = seq;
            seq += 1;
            ws.send(Message::Text(serde_json::to_string(&t).unwrap_or_default()))?;
            due += period;
            if due < now {
                due = now + period;
            }
        }
        let wait = due.saturating_duration_since(Instant::now()).max(Duration::from_millis(1));
        ws.get_ref().set_read_timeout(Some(wait))?;
        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Err(msg) = handle_text(&text, panel) {
                    ws.send(error_frame(&msg))?;
                }
            }
            Ok(Message::Binary(_)) => ws.send(error_frame("binary frames are not supported"))?,
            Ok(Message::Close(_)) => {
                // tungstenite queues the close reply; flush it and finish.
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(WsError::ConnectionClosed | WsError::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}

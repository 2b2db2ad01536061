use std::io::{self, Read};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::simdevice::{PanelHandle, Scenario, VirtualDevice};
use crate::wire::{decode_frame, encode_frame, FrameDecoder, SensorFrame};

use super::broadcast::{Broadcaster, ControlServer};
use super::packet_log::now_us;
use super::{sleep_unless_stopped, ServerError};

/// Exponential reconnect backoff: 0.5 s doubling up to 8 s.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconnect {
    pub initial: Duration,
    pub max: Duration,
    next: Duration,
}

impl Default for Reconnect {
    fn default() -> Self {
        Reconnect::new(Duration::from_millis(500), Duration::from_secs(8))
    }
}

impl Reconnect {
    pub fn new(initial: Duration, max: Duration) -> Self {
        Reconnect { initial, max, next: initial }
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self.next;
        self.next = (self.next * 2).min(self.max);
        d
    }

    pub fn reset(&mut self) {
        self.next = self.initial;
    }
}

/// One received packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub frame: SensorFrame,
    /// Framed bytes as received, delimiter included.
    pub framed: Vec<u8>,
    pub received_us: u64,
}

pub enum FrameSource {
    /// In-process virtual device. `paced` emits in real time; otherwise as
    /// fast as the sink accepts.
    Simulated { device: Box<VirtualDevice>, paced: bool },
    /// Framed packets read from a TCP peer, reconnecting on loss.
    Tcp { addr: String, reconnect: Reconnect },
}

impl FrameSource {
    pub fn simulated(scenario: Scenario, rate_hz: f64) -> Result<Self, ServerError> {
        Ok(FrameSource::Simulated { device: Box::new(VirtualDevice::new(scenario, rate_hz)?), paced: true })
    }

    pub fn tcp(addr: impl Into<String>) -> Self {
        FrameSource::Tcp { addr: addr.into(), reconnect: Reconnect::default() }
    }

    /// Panel event queue into the virtual device; `None` for TCP sources.
    pub fn panel(&mut self) -> Option<PanelHandle> {
        match self {
            FrameSource::Simulated { device, .. } => Some(device.panel()),
            FrameSource::Tcp { .. } => None,
        }
    }

    /// Delivers packets to `sink` until `stop` is set, the sink returns
    /// `false`, or a simulated scenario ends.
    pub fn run(self, stop: &AtomicBool, mut sink: impl FnMut(Ingested) -> bool) {
        match self {
            FrameSource::Simulated { mut device, paced } => {
                let mut deliver = |frame: SensorFrame| match encode_frame(&frame) {
                    Ok(framed) => sink(Ingested { frame, framed, received_us: now_us() }),
                    Err(e) => {
                        log::error!("could not encode simulated frame: {e}");
                        false
                    }
                };
                if paced {
                    device.run_realtime(stop, deliver);
                } else {
                    for frame in device.by_ref() {
                        if stop.load(Ordering::Relaxed) || !deliver(frame) {
                            break;
                        }
                    }
                }
            }
            FrameSource::Tcp { addr, mut reconnect } => {
                while !stop.load(Ordering::Relaxed) {
                    match TcpStream::connect(&addr) {
                        Ok(stream) => {
                            log::info!("connected to device at {addr}");
                            reconnect.reset();
                            match read_stream(stream, stop, &mut sink) {
                                Ok(false) => return,
                                Ok(true) => log::warn!("{}", ServerError::SourceLost(format!("{addr} closed"))),
                                Err(e) => log::warn!("{}", ServerError::SourceLost(format!("{addr}: {e}"))),
                            }
                        }
                        Err(e) => log::warn!("{}", ServerError::SourceLost(format!("connect {addr}: {e}"))),
                    }
                    let delay = reconnect.next_delay();
                    log::info!("reconnecting to {addr} in {:.1} s", delay.as_secs_f64());
                    if !sleep_unless_stopped(stop, delay) {
                        return;
                    }
                }
            }
        }
    }
}

/// Returns `Ok(true)` when the peer went away, `Ok(false)` when told to
/// stop.
fn read_stream(mut stream: TcpStream, stop: &AtomicBool, sink: &mut impl FnMut(Ingested) -> bool) -> io::Result<bool> {
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 4096];
    loop {
        if stop.load(Ordering::Relaxed) {
            return Ok(false);
        }
        let n = match stream.read(&mut buf) {
            Ok(0) => return Ok(true),
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        let received_us = now_us();
        for item in decoder.push_framed(&buf[..n]) {
            let decoded = item.and_then(|framed| decode_frame(&framed[..framed.len() - 1]).map(|f| (f, framed)));
            match decoded {
                Ok((frame, framed)) => {
                    if !sink(Ingested { frame, framed, received_us }) {
                        return Ok(false);
                    }
                }
                Err(e) => log::warn!("dropping bad packet: {e}"),
            }
        }
    }
}

/// Serves a virtual device's framed packet stream to TCP clients, standing
/// in for a physical device link.
pub struct DeviceServer {
    server: ControlServer,
    panel: PanelHandle,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl DeviceServer {
    pub fn spawn(addr: &str, scenario: Scenario, rate_hz: f64) -> Result<Self, ServerError> {
        let mut device = VirtualDevice::new(scenario, rate_hz)?;
        let panel = device.panel();
        let server = ControlServer::bind(addr, Broadcaster::default())?;
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let (stop, out) = (stop.clone(), server.broadcaster().clone());
            thread::Builder::new().name("device".into()).spawn(move || {
                device.run_realtime(&stop, |frame| {
                    match encode_frame(&frame) {
                        Ok(framed) => {
                            out.broadcast(&framed);
                        }
                        Err(e) => log::error!("could not encode frame: {e}"),
                    }
                    true
                })
            })?
        };
        Ok(DeviceServer { server, panel, stop, handle: Some(handle) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.server.local_addr()
    }

    pub fn panel(&self) -> PanelHandle {
        self.panel.clone()
    }

    pub fn client_count(&self) -> usize {
        self.server.broadcaster().client_count()
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        self.server.shutdown();
    }
}

impl Drop for DeviceServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};

use super::ServerError;

/// Queued-but-unsent bytes after which a client is dropped.
pub const DEFAULT_BACKLOG_LIMIT: usize = 1 << 20;

const ACCEPT_POLL: Duration = Duration::from_millis(20);

struct Client {
    id: u64,
    peer: SocketAddr,
    tx: Sender<Arc<[u8]>>,
    backlog: Arc<AtomicUsize>,
    closed: Arc<AtomicBool>,
    stream: TcpStream,
}

impl Client {
    fn close(&self) {
        self.closed.store(true, Ordering::Relaxed);
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

#[derive(Default)]
struct Inner {
    clients: Mutex<Vec<Client>>,
    next_id: AtomicU64,
    dropped_slow: AtomicU64,
}

/// Fans byte lines out to any number of TCP clients.
///
/// Each client gets its own queue and writer thread. `broadcast` only
/// enqueues, so a client that stops reading costs memory up to the backlog
/// limit and is then disconnected; the caller never waits on a socket.
#[derive(Clone)]
pub struct Broadcaster {
    inner: Arc<Inner>,
    limit: usize,
}

impl Default for Broadcaster {
    fn default() -> Self {
        Broadcaster::new(DEFAULT_BACKLOG_LIMIT)
    }
}

impl Broadcaster {
    pub fn new(backlog_limit: usize) -> Self {
        Broadcaster { inner: Arc::default(), limit: backlog_limit.max(1) }
    }

    pub fn backlog_limit(&self) -> usize {
        self.limit
    }

    /// Registers a connected client. It receives every line broadcast from
    /// now on.
    pub fn add_client(&self, stream: TcpStream) -> io::Result<u64> {
        let _ = stream.set_nodelay(true);
        let peer = stream.peer_addr()?;
        let writer = stream.try_clone()?;
        let (tx, rx) = crossbeam_channel::unbounded();
        let backlog = Arc::new(AtomicUsize::new(0));
        let closed = Arc::new(AtomicBool::new(false));
        let id = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
        {
            let (backlog, closed) = (backlog.clone(), closed.clone());
            thread::Builder::new()
                .name(format!("tcp-client-{id}"))
                .spawn(move || write_loop(writer, rx, &backlog, &closed))?;
        }
        log::info!("client {id} connected from {peer}");
        self.inner.clients.lock().unwrap().push(Client { id, peer, tx, backlog, closed, stream });
        Ok(id)
    }

    /// Queues `line` for every live client and returns how many took it.
    pub fn broadcast(&self, line: &[u8]) -> usize {
        let line: Arc<[u8]> = Arc::from(line);
        let mut clients = self.inner.clients.lock().unwrap();
        clients.retain(|c| {
            if c.closed.load(Ordering::Relaxed) {
                log::info!("client {} ({}) disconnected", c.id, c.peer);
                c.close();
                return false;
            }
            let queued = c.backlog.fetch_add(line.len(), Ordering::Relaxed) + line.len();
            if queued > self.limit {
                log::warn!("client {} ({}) backlog {queued} bytes over limit, dropping it", c.id, c.peer);
                self.inner.dropped_slow.fetch_add(1, Ordering::Relaxed);
                c.close();
                return false;
            }
            c.tx.send(line.clone()).is_ok()
        });
        clients.len()
    }

    pub fn client_count(&self) -> usize {
        self.inner.clients.lock().unwrap().iter().filter(|c| !c.closed.load(Ordering::Relaxed)).count()
    }

    /// Clients dropped for exceeding the backlog limit.
    pub fn slow_disconnects(&self) -> u64 {
        self.inner.dropped_slow.load(Ordering::Relaxed)
    }

    /// Disconnects every client.
    pub fn close_all(&self) {
        for c in self.inner.clients.lock().unwrap().drain(..) {
            c.close();
        }
    }
}

fn write_loop(mut stream: TcpStream, rx: Receiver<Arc<[u8]>>, backlog: &AtomicUsize, closed: &AtomicBool) {
    let mut batch = Vec::with_capacity(4096);
    while let Ok(first) = rx.recv() {
        batch.clear();
        batch.extend_from_slice(&first);
        for more in rx.try_iter().take(256) {
            batch.extend_from_slice(&more);
        }
        if closed.load(Ordering::Relaxed) || stream.write_all(&batch).is_err() {
            break;
        }
        backlog.fetch_sub(batch.len(), Ordering::Relaxed);
    }
    closed.store(true, Ordering::Relaxed);
    let _ = stream.shutdown(Shutdown::Both);
}

pub(crate) fn bind(addr: &str) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).map_err(|source| ServerError::BindFailed { addr: addr.to_string(), source })
}

/// Accept loop feeding a [`Broadcaster`]. Stops when dropped.
pub struct ControlServer {
    local_addr: SocketAddr,
    broadcaster: Broadcaster,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl ControlServer {
    /// Binds `addr` (port 0 picks a free port) and starts accepting.
    pub fn bind(addr: &str, broadcaster: Broadcaster) -> Result<Self, ServerError> {
        let listener = bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let (stop, broadcaster) = (stop.clone(), broadcaster.clone());
            thread::Builder::new().name("tcp-accept".into()).spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let _ = stream.set_nonblocking(false);
                            if let Err(e) = broadcaster.add_client(stream) {
                                log::warn!("could not register client: {e}");
                            }
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            thread::sleep(ACCEPT_POLL);
                        }
                    }
                }
            })?
        };
        Ok(ControlServer { local_addr, broadcaster, stop, handle: Some(handle) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn broadcaster(&self) -> &Broadcaster {
        &self.broadcaster
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        self.broadcaster.close_all();
    }
}

impl Drop for ControlServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

//! Threaded TCP server. Each connection gets a reader thread that decodes
//! frames into a bounded queue and a worker thread that owns the session.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use log::{debug, info, warn};
use serde::Serialize;

use super::session::{Session, WarmupPolicy};
use super::wire::{encode, read_message, ControlCommand, Message};
use crate::net::BlinkNet;
use crate::types::{CalibrationProfile, GazeFrame};

pub const DEFAULT_PORT: u16 = 48200;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    /// Frames buffered between the reader and the session worker.
    pub queue_capacity: usize,
    pub warmup: WarmupPolicy,
    pub profile: CalibrationProfile,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            queue_capacity: 8192,
            warmup: WarmupPolicy::default(),
            profile: CalibrationProfile::default(),
        }
    }
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub sessions: AtomicU64,
    pub frames_received: AtomicU64,
    pub frames_dropped: AtomicU64,
    pub frames_processed: AtomicU64,
    pub predictions_sent: AtomicU64,
    pub max_queue_depth: AtomicU64,
    pub protocol_errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StatsSnapshot {
    pub sessions: u64,
    pub frames_received: u64,
    pub frames_dropped: u64,
    pub frames_processed: u64,
    pub predictions_sent: u64,
    pub max_queue_depth: u64,
    pub protocol_errors: u64,
}

impl StatsSnapshot {
    /// Fraction of received frames that made it into a session.
    pub fn accepted_fraction(&self) -> f64 {
        if self.frames_received == 0 {
            1.0
        } else {
            1.0 - self.frames_dropped as f64 / self.frames_received as f64
        }
    }
}

impl ServerStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        StatsSnapshot {
            sessions: g(&self.sessions),
            frames_received: g(&self.frames_received),
            frames_dropped: g(&self.frames_dropped),
            frames_processed: g(&self.frames_processed),
            predictions_sent: g(&self.predictions_sent),
            max_queue_depth: g(&self.max_queue_depth),
            protocol_errors: g(&self.protocol_errors),
        }
    }
}

pub struct Server {
    listener: TcpListener,
    net: Arc<BlinkNet>,
    config: ServerConfig,
    stats: Arc<ServerStats>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    /// Stop accepting connections and wait for the accept loop to exit.
    /// Sessions already running finish on their own when clients disconnect.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

enum Work {
    Frame(GazeFrame),
    Flush(u64),
}

impl Server {
    pub fn bind(config: ServerConfig, net: Arc<BlinkNet>) -> io::Result<Self> {
        let listener = TcpListener::bind(config.listen)?;
        Ok(Self {
            listener,
            net,
            config,
            stats: Arc::new(ServerStats::default()),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn stats(&self) -> Arc<ServerStats> {
        Arc::clone(&self.stats)
    }

    /// Run the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats = self.stats();
        let flag = Arc::clone(&stop);
        let thread = thread::Builder::new()
            .name("blinkpipe-accept".into())
            .spawn(move || self.run_until(&flag))?;
        Ok(ServerHandle {
            addr,
            stats,
            stop,
            thread: Some(thread),
        })
    }

    /// Accept connections on the current thread until `stop` is set.
    pub fn run_until(self, stop: &AtomicBool) {
        info!("listening on {:?}", self.listener.local_addr());
        for conn in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let id = self.stats.sessions.fetch_add(1, Ordering::Relaxed);
                    if let Err(e) = self.start_session(id, stream) {
                        warn!("session {id}: could not start: {e}");
                    }
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    }

    fn start_session(&self, id: u64, stream: TcpStream) -> io::Result<()> {
        stream.set_nodelay(true)?;
        let peer = stream.peer_addr().ok();
        debug!("session {id}: connected from {peer:?}");
        let reader = stream.try_clone()?;
        let (tx, rx) = sync_channel(self.config.queue_capacity);
        let session = Session::new(Arc::clone(&self.net), self.config.warmup, self.config.profile);
        let stats = Arc::clone(&self.stats);
        let depth = Arc::new(AtomicU64::new(0));
        let worker_depth = Arc::clone(&depth);
        thread::Builder::new()
            .name(format!("blinkpipe-session-{id}"))
            .spawn(move || run_worker(id, session, rx, stream, &stats, &worker_depth))?;
        let stats = Arc::clone(&self.stats);
        thread::Builder::new()
            .name(format!("blinkpipe-reader-{id}"))
            .spawn(move || run_reader(id, reader, tx, &stats, &depth))?;
        Ok(())
    }
}

fn run_reader(id: u64, stream: TcpStream, tx: SyncSender<Work>, stats: &ServerStats, depth: &AtomicU64) {
    let mut r = BufReader::with_capacity(64 * 1024, stream);
    loop {
        match read_message(&mut r) {
            Ok(None) => break,
            Ok(Some(msg)) => match msg {
                Message::Gaze { .. } => {
                    stats.frames_received.fetch_add(1, Ordering::Relaxed);
                    let frame = msg.to_frame().expect("gaze message");
                    let d = depth.fetch_add(1, Ordering::Relaxed) + 1;
                    match tx.try_send(Work::Frame(frame)) {
                        Ok(()) => {
                            stats.max_queue_depth.fetch_max(d, Ordering::Relaxed);
                        }
                        Err(TrySendError::Full(_)) => {
                            depth.fetch_sub(1, Ordering::Relaxed);
                            stats.frames_dropped.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(TrySendError::Disconnected(_)) => break,
                    }
                }
                Message::Control {
                    timestamp_ns,
                    command: ControlCommand::Bye,
                } => {
                    // control messages are never dropped
                    if tx.send(Work::Flush(timestamp_ns)).is_err() {
                        break;
                    }
                }
                Message::Control { .. } => {}
                Message::Prediction { .. } => {
                    warn!("session {id}: client sent a prediction message; ignored");
                }
            },
            Err(e) => {
                stats.protocol_errors.fetch_add(1, Ordering::Relaxed);
                warn!("session {id}: closing on protocol error: {e}");
                break;
            }
        }
    }
    debug!("session {id}: reader done");
}

fn run_worker(
    id: u64,
    mut session: Session,
    rx: Receiver<Work>,
    stream: TcpStream,
    stats: &ServerStats,
    depth: &AtomicU64,
) {
    let mut w = BufWriter::new(stream);
    let mut last_ts = 0u64;
    for work in rx {
        match work {
            Work::Frame(frame) => {
                depth.fetch_sub(1, Ordering::Relaxed);
                last_ts = frame.timestamp_ns as u64;
                stats.frames_processed.fetch_add(1, Ordering::Relaxed);
                match session.ingest(frame) {
                    Ok(Some(p)) => {
                        let sent = w
                            .write_all(&encode(&p.to_message(last_ts as i64)))
                            .and_then(|_| w.flush());
                        if let Err(e) = sent {
                            warn!("session {id}: write failed: {e}");
                            break;
                        }
                        stats.predictions_sent.fetch_add(1, Ordering::Relaxed);
                    }
                    Ok(None) => {}
                    Err(e) => {
                        stats.protocol_errors.fetch_add(1, Ordering::Relaxed);
                        warn!("session {id}: closing: {e}");
                        break;
                    }
                }
            }
            Work::Flush(ts) => {
                let bye = Message::Control {
                    timestamp_ns: ts.max(last_ts),
                    command: ControlCommand::Bye,
                };
                if w.write_all(&encode(&bye)).and_then(|_| w.flush()).is_err() {
                    break;
                }
            }
        }
    }
    let _ = w.get_ref().shutdown(Shutdown::Both);
    debug!("session {id}: closed");
}

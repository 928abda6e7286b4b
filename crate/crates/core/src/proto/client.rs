//! Client side: streaming a recording to a server and matching the
//! returned predictions against the client's own blink ends.

use std::collections::VecDeque;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::thread;

use super::session::Prediction;
use super::wire::{encode, read_message, ControlCommand, Message, WireError};
use crate::segmenter::Segmenter;
use crate::types::{BlinkKind, BlinkLabel, CalibrationProfile, FrameValidator, GazeFrame, NS_PER_MS};

/// Predictions older than this relative to their blink end are ignored.
pub const ACCEPT_WINDOW_NS: i64 = 100 * NS_PER_MS;
/// Tolerance when matching a prediction's blink end to a local blink.
pub const MATCH_TOLERANCE_NS: i64 = 5 * NS_PER_MS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceivedPrediction {
    pub prediction: Prediction,
    /// Timestamp of the newest frame the client had sent when this arrived.
    pub stream_now_ns: i64,
}

/// Send `frames` over one connection, then a `Bye`, and collect every
/// prediction the server returns before its own `Bye`.
pub fn stream_frames<I>(addr: SocketAddr, frames: I) -> Result<Vec<ReceivedPrediction>, WireError>
where
    I: IntoIterator<Item = GazeFrame>,
{
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let read_half = stream.try_clone()?;
    let now = Arc::new(AtomicI64::new(i64::MIN));
    let reader_now = Arc::clone(&now);
    let reader = thread::spawn(move || -> Result<Vec<ReceivedPrediction>, WireError> {
        let mut r = BufReader::new(read_half);
        let mut out = Vec::new();
        loop {
            match read_message(&mut r)? {
                None => {
                    return Err(WireError::Io(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "server closed before acknowledging bye",
                    )))
                }
                Some(Message::Control {
                    command: ControlCommand::Bye,
                    ..
                }) => return Ok(out),
                Some(msg) => {
                    if let Some(prediction) = Prediction::from_message(&msg) {
                        out.push(ReceivedPrediction {
                            prediction,
                            stream_now_ns: reader_now.load(Ordering::Acquire),
                        });
                    }
                }
            }
        }
    });

    let mut w = BufWriter::with_capacity(16 * 1024, stream);
    let hello = Message::Control {
        timestamp_ns: 0,
        command: ControlCommand::Hello,
    };
    w.write_all(&encode(&hello))?;
    let mut last = 0i64;
    for f in frames {
        w.write_all(&encode(&Message::from_frame(&f)))?;
        w.flush()?;
        now.store(f.timestamp_ns, Ordering::Release);
        last = f.timestamp_ns;
    }
    let bye = Message::Control {
        timestamp_ns: last.max(0) as u64,
        command: ControlCommand::Bye,
    };
    w.write_all(&encode(&bye))?;
    w.flush()?;
    let result = reader.join().map_err(|_| {
        WireError::Io(io::Error::other("reader thread panicked"))
    })?;
    let _ = w.get_ref().shutdown(std::net::Shutdown::Both);
    result
}

/// Blink ends the client observed locally.
#[derive(Debug)]
pub struct ClientBlinks {
    validator: FrameValidator,
    segmenter: Segmenter,
    recent: VecDeque<i64>,
    capacity: usize,
}

impl ClientBlinks {
    pub fn new(profile: CalibrationProfile) -> Self {
        Self::with_capacity(profile, 64)
    }

    /// Remember up to `capacity` blink ends.
    pub fn with_capacity(profile: CalibrationProfile, capacity: usize) -> Self {
        Self {
            validator: FrameValidator::new(),
            segmenter: Segmenter::new(profile),
            recent: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    /// Track a frame; returns the blink end if a both-eye blink just ended.
    pub fn observe(&mut self, frame: GazeFrame) -> Option<i64> {
        let v = self.validator.validate(frame).ok()?;
        let blink = self.segmenter.update(&v)?;
        if blink.kind != BlinkKind::BothEyes {
            return None;
        }
        self.remember(blink.offset_ns);
        Some(blink.offset_ns)
    }

    pub fn remember(&mut self, blink_end_ns: i64) {
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back(blink_end_ns);
    }

    pub fn knows(&self, blink_end_ns: i64) -> bool {
        self.recent.iter().any(|&t| (t - blink_end_ns).abs() <= MATCH_TOLERANCE_NS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Association {
    Accept(BlinkLabel),
    Stale,
}

/// Accept a prediction iff it refers to a blink the client saw and arrives
/// within 100 ms of that blink's end.
pub fn associate_prediction(client: &ClientBlinks, prediction: &Prediction, now_ns: i64) -> Association {
    if client.knows(prediction.blink_end_ns) && (now_ns - prediction.blink_end_ns).abs() <= ACCEPT_WINDOW_NS {
        Association::Accept(prediction.label)
    } else {
        Association::Stale
    }
}

/// Whether a pending selection is released.
pub fn gate_selection(association: Association) -> bool {
    association == Association::Accept(BlinkLabel::Voluntary)
}

//! Fixed-size little-endian framing.
//!
//! Every message starts with a 13-byte header: magic `GZF1`, a type byte
//! and a `u64` timestamp. Payloads:
//!
//! | type | payload                                        | total |
//! |------|------------------------------------------------|-------|
//! | 0    | 10 x `f32` features                            | 53    |
//! | 1    | blink end `u64`, class `u8`, confidence `f32`  | 26    |
//! | 2    | command `u8` (0 hello, 1 bye)                  | 14    |

use std::io::{self, Read};

use thiserror::Error;

use crate::types::{GazeFrame, FEATURE_COUNT};

pub const MAGIC: [u8; 4] = *b"GZF1";
pub const HEADER_LEN: usize = 13;
pub const GAZE_LEN: usize = HEADER_LEN + 4 * FEATURE_COUNT;
pub const PREDICTION_LEN: usize = HEADER_LEN + 8 + 1 + 4;
pub const CONTROL_LEN: usize = HEADER_LEN + 1;

pub const TYPE_GAZE: u8 = 0;
pub const TYPE_PREDICTION: u8 = 1;
pub const TYPE_CONTROL: u8 = 2;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("truncated message: need {need} bytes, have {have}")]
    TruncatedMessage { need: usize, have: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("unknown class byte {0}")]
    BadClass(u8),
    #[error("unknown control command {0}")]
    UnknownCommand(u8),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCommand {
    Hello,
    /// Flush the session; the server answers with its own `Bye` once every
    /// earlier frame has been processed.
    Bye,
}

impl ControlCommand {
    fn byte(self) -> u8 {
        match self {
            ControlCommand::Hello => 0,
            ControlCommand::Bye => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    Gaze {
        timestamp_ns: u64,
        features: [f32; FEATURE_COUNT],
    },
    Prediction {
        timestamp_ns: u64,
        blink_end_ns: u64,
        /// 0 voluntary, 1 involuntary
        class: u8,
        confidence: f32,
    },
    Control {
        timestamp_ns: u64,
        command: ControlCommand,
    },
}

impl Message {
    pub fn from_frame(frame: &GazeFrame) -> Self {
        Message::Gaze {
            timestamp_ns: frame.timestamp_ns as u64,
            features: frame.features().map(|v| v as f32),
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            Message::Gaze { .. } => GAZE_LEN,
            Message::Prediction { .. } => PREDICTION_LEN,
            Message::Control { .. } => CONTROL_LEN,
        }
    }

    /// Gaze payload as a frame. Frames carry no validity flag on the wire;
    /// a NaN feature marks the frame invalid.
    pub fn to_frame(&self) -> Option<GazeFrame> {
        match *self {
            Message::Gaze { timestamp_ns, features } => {
                let valid = features.iter().all(|v| !v.is_nan());
                Some(GazeFrame::from_features(timestamp_ns as i64, features.map(f64::from), valid))
            }
            _ => None,
        }
    }
}

fn payload_len(msg_type: u8) -> Result<usize, WireError> {
    match msg_type {
        TYPE_GAZE => Ok(GAZE_LEN),
        TYPE_PREDICTION => Ok(PREDICTION_LEN),
        TYPE_CONTROL => Ok(CONTROL_LEN),
        t => Err(WireError::UnknownType(t)),
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&MAGIC);
    match *msg {
        Message::Gaze { timestamp_ns, features } => {
            out.push(TYPE_GAZE);
            out.extend_from_slice(&timestamp_ns.to_le_bytes());
            for f in features {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Message::Prediction {
            timestamp_ns,
            blink_end_ns,
            class,
            confidence,
        } => {
            out.push(TYPE_PREDICTION);
            out.extend_from_slice(&timestamp_ns.to_le_bytes());
            out.extend_from_slice(&blink_end_ns.to_le_bytes());
            out.push(class);
            out.extend_from_slice(&confidence.to_le_bytes());
        }
        Message::Control { timestamp_ns, command } => {
            out.push(TYPE_CONTROL);
            out.extend_from_slice(&timestamp_ns.to_le_bytes());
            out.push(command.byte());
        }
    }
    out
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Decode one message from the front of `bytes`; returns it with the number
/// of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    let truncated = |need| WireError::TruncatedMessage { need, have: bytes.len() };
    if bytes.len() < 5 {
        // report a bad magic as early as possible
        if bytes.iter().zip(MAGIC).any(|(a, b)| *a != b) {
            let mut m = [0u8; 4];
            m[..bytes.len().min(4)].copy_from_slice(&bytes[..bytes.len().min(4)]);
            return Err(WireError::BadMagic(m));
        }
        return Err(truncated(HEADER_LEN));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let len = payload_len(bytes[4])?;
    if bytes.len() < len {
        return Err(truncated(len));
    }
    let ts = u64_at(bytes, 5);
    let msg = match bytes[4] {
        TYPE_GAZE => {
            let mut features = [0f32; FEATURE_COUNT];
            for (i, f) in features.iter_mut().enumerate() {
                *f = f32_at(bytes, HEADER_LEN + 4 * i);
            }
            Message::Gaze {
                timestamp_ns: ts,
                features,
            }
        }
        TYPE_PREDICTION => {
            let class = bytes[HEADER_LEN + 8];
            if class > 1 {
                return Err(WireError::BadClass(class));
            }
            Message::Prediction {
                timestamp_ns: ts,
                blink_end_ns: u64_at(bytes, HEADER_LEN),
                class,
                confidence: f32_at(bytes, HEADER_LEN + 9),
            }
        }
        _ => {
            let command = match bytes[HEADER_LEN] {
                0 => ControlCommand::Hello,
                1 => ControlCommand::Bye,
                c => return Err(WireError::UnknownCommand(c)),
            };
            Message::Control {
                timestamp_ns: ts,
                command,
            }
        }
    };
    Ok((msg, len))
}

/// Read one message from a byte stream. `Ok(None)` on a clean end of stream
/// at a message boundary.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, WireError> {
    let mut buf = [0u8; GAZE_LEN];
    let mut got = 0;
    while got < 5 {
        match r.read(&mut buf[got..5])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(WireError::TruncatedMessage { need: HEADER_LEN, have: got }),
            n => got += n,
        }
    }
    let magic: [u8; 4] = buf[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let len = payload_len(buf[4])?;
    while got < len {
        match r.read(&mut buf[got..len])? {
            0 => return Err(WireError::TruncatedMessage { need: len, have: got }),
            n => got += n,
        }
    }
    decode(&buf[..len]).map(|(m, _)| Some(m))
}

/// The frame as the server sees it after a trip over the wire.
pub fn quantize(frame: &GazeFrame) -> GazeFrame {
    let mut q = Message::from_frame(frame).to_frame().expect("gaze message");
    q.valid &= frame.valid;
    q
}

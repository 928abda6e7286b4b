use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::wire::{quantize, Message};
use crate::net::{BlinkNet, NetError};
use crate::segmenter::Segmenter;
use crate::types::{BlinkKind, BlinkLabel, CalibrationProfile, FrameError, FrameValidator, GazeFrame};
use crate::window::{HistoryBuffer, WindowError};

/// What to answer for blinks that end before the history buffer is full.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmupPolicy {
    /// Let the selection through, as plain blink selection would.
    #[default]
    Voluntary,
    /// Treat every warm-up blink as involuntary.
    Suppress,
}

impl WarmupPolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "voluntary" => Some(WarmupPolicy::Voluntary),
            "suppress" => Some(WarmupPolicy::Suppress),
            _ => None,
        }
    }

    fn label(self) -> BlinkLabel {
        match self {
            WarmupPolicy::Voluntary => BlinkLabel::Voluntary,
            WarmupPolicy::Suppress => BlinkLabel::Involuntary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub blink_end_ns: i64,
    pub label: BlinkLabel,
    /// Probability of `label`; 0 for warm-up fallbacks.
    pub confidence: f64,
    pub warmup: bool,
}

impl Prediction {
    pub fn to_message(&self, timestamp_ns: i64) -> Message {
        Message::Prediction {
            timestamp_ns: timestamp_ns as u64,
            blink_end_ns: self.blink_end_ns as u64,
            class: self.label.index() as u8,
            confidence: self.confidence as f32,
        }
    }

    pub fn from_message(msg: &Message) -> Option<Self> {
        match *msg {
            Message::Prediction {
                blink_end_ns,
                class,
                confidence,
                ..
            } => Some(Self {
                blink_end_ns: blink_end_ns as i64,
                label: BlinkLabel::from_index(class as usize)?,
                confidence: confidence as f64,
                warmup: confidence == 0.0,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Per-connection state: validation, segmentation, history and the shared model.
pub struct Session {
    validator: FrameValidator,
    segmenter: Segmenter,
    buffer: HistoryBuffer,
    net: Arc<BlinkNet>,
    policy: WarmupPolicy,
    last_prediction: Option<Prediction>,
}

impl Session {
    pub fn new(net: Arc<BlinkNet>, policy: WarmupPolicy, profile: CalibrationProfile) -> Self {
        let buffer = HistoryBuffer::new(net.window_len());
        Self {
            validator: FrameValidator::new(),
            segmenter: Segmenter::new(profile),
            buffer,
            net,
            policy,
            last_prediction: None,
        }
    }

    pub fn last_prediction(&self) -> Option<Prediction> {
        self.last_prediction
    }

    pub fn is_warm(&self) -> bool {
        self.buffer.is_ready()
    }

    /// Feed one frame; returns a prediction when a both-eye blink ends.
    pub fn ingest(&mut self, frame: GazeFrame) -> Result<Option<Prediction>, SessionError> {
        let v = self.validator.validate(frame)?;
        self.buffer.push(&v)?;
        let Some(blink) = self.segmenter.update(&v) else {
            return Ok(None);
        };
        if blink.kind != BlinkKind::BothEyes {
            return Ok(None);
        }
        let pred = match self.buffer.snapshot_at_blink_end(&blink) {
            Ok(window) => {
                let (label, confidence) = self.net.classify(&window.values)?;
                Prediction {
                    blink_end_ns: blink.offset_ns,
                    label,
                    confidence,
                    warmup: false,
                }
            }
            Err(WindowError::NotReady { .. }) => Prediction {
                blink_end_ns: blink.offset_ns,
                label: self.policy.label(),
                confidence: 0.0,
                warmup: true,
            },
            Err(e) => return Err(e.into()),
        };
        self.last_prediction = Some(pred);
        Ok(Some(pred))
    }
}

/// Feed frames straight into a session after the same f32 quantization the
/// wire applies.
pub fn run_in_process<I>(
    net: Arc<BlinkNet>,
    policy: WarmupPolicy,
    profile: CalibrationProfile,
    frames: I,
) -> Result<Vec<Prediction>, SessionError>
where
    I: IntoIterator<Item = GazeFrame>,
{
    let mut session = Session::new(net, policy, profile);
    let mut out = Vec::new();
    for f in frames {
        if let Some(p) = session.ingest(quantize(&f))? {
            out.push(p);
        }
    }
    Ok(out)
}

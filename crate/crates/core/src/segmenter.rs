//! Per-eye closure tracking and blink/wink segmentation.
//!
//! An eye closes when its openness drops below the profile threshold and
//! reopens once openness reaches `threshold + hysteresis_band`. A closure
//! episode starts on the first frame with any eye closed and ends on the
//! frame where the last closed eye reopens; that frame's timestamp is the
//! blink offset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BlinkEvent, BlinkKind, CalibrationProfile, ValidatedFrame, Vec3};

/// Episodes with fewer closed frames than this are treated as sensor glitches.
pub const MIN_CLOSED_FRAMES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lid {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeState {
    pub left: Lid,
    pub right: Lid,
    /// Gaze frozen at the last both-open frame; present iff an eye is closed.
    pub held_gaze_dir: Option<Vec3>,
}

impl EyeState {
    pub fn open() -> Self {
        Self {
            left: Lid::Open,
            right: Lid::Open,
            held_gaze_dir: None,
        }
    }

    pub fn any_closed(&self) -> bool {
        self.left == Lid::Closed || self.right == Lid::Closed
    }

    pub fn both_closed(&self) -> bool {
        self.left == Lid::Closed && self.right == Lid::Closed
    }

    pub fn closed_count(&self) -> usize {
        (self.left == Lid::Closed) as usize + (self.right == Lid::Closed) as usize
    }
}

impl Default for EyeState {
    fn default() -> Self {
        Self::open()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GazeError {
    #[error("no valid gaze frame has been observed yet")]
    NoGazeYet,
}

#[derive(Debug, Clone, Copy)]
struct Episode {
    onset_ns: i64,
    closed_frames: u32,
    both_closed_seen: bool,
    left_closed_seen: bool,
    min_left: f64,
    min_right: f64,
}

/// Stateful segmenter for one stream.
#[derive(Debug, Clone)]
pub struct Segmenter {
    profile: CalibrationProfile,
    state: EyeState,
    last_open_gaze: Option<Vec3>,
    episode: Option<Episode>,
    seen_valid: bool,
}

impl Segmenter {
    pub fn new(profile: CalibrationProfile) -> Self {
        Self {
            profile,
            state: EyeState::open(),
            last_open_gaze: None,
            episode: None,
            seen_valid: false,
        }
    }

    pub fn profile(&self) -> &CalibrationProfile {
        &self.profile
    }

    pub fn state(&self) -> &EyeState {
        &self.state
    }

    /// Advance by one frame; returns a blink event on the reopening frame.
    pub fn update(&mut self, frame: &ValidatedFrame) -> Option<BlinkEvent> {
        let f = frame.frame();
        self.seen_valid |= frame.is_valid();

        let p = self.profile;
        let left = next_lid(self.state.left, f.left_openness, p.closed_threshold_left, p.hysteresis_band);
        let right = next_lid(self.state.right, f.right_openness, p.closed_threshold_right, p.hysteresis_band);
        self.state.left = left;
        self.state.right = right;

        if self.state.any_closed() {
            if self.episode.is_none() {
                self.state.held_gaze_dir = Some(self.last_open_gaze.unwrap_or_else(|| frame.binocular_dir()));
                self.episode = Some(Episode {
                    onset_ns: f.timestamp_ns,
                    closed_frames: 0,
                    both_closed_seen: false,
                    left_closed_seen: false,
                    min_left: f64::INFINITY,
                    min_right: f64::INFINITY,
                });
            }
            let ep = self.episode.as_mut().expect("episode started above");
            ep.closed_frames += 1;
            ep.both_closed_seen |= self.state.both_closed();
            ep.left_closed_seen |= left == Lid::Closed;
            ep.min_left = ep.min_left.min(f.left_openness);
            ep.min_right = ep.min_right.min(f.right_openness);
            return None;
        }

        self.last_open_gaze = Some(frame.binocular_dir());
        self.state.held_gaze_dir = None;
        let ep = self.episode.take()?;
        if ep.closed_frames < MIN_CLOSED_FRAMES {
            return None;
        }
        let kind = if ep.both_closed_seen {
            BlinkKind::BothEyes
        } else if ep.left_closed_seen {
            BlinkKind::LeftWink
        } else {
            BlinkKind::RightWink
        };
        Some(BlinkEvent {
            onset_ns: ep.onset_ns,
            offset_ns: f.timestamp_ns,
            kind,
            min_openness_left: ep.min_left,
            min_openness_right: ep.min_right,
        })
    }

    /// Gaze direction to raycast with: held while any eye is closed, else
    /// the binocular average of the current frame.
    pub fn effective_gaze(&self, frame: &ValidatedFrame) -> Result<Vec3, GazeError> {
        if !self.seen_valid {
            return Err(GazeError::NoGazeYet);
        }
        Ok(match self.state.held_gaze_dir {
            Some(h) if self.state.any_closed() => h,
            _ => frame.binocular_dir(),
        })
    }
}

fn next_lid(lid: Lid, openness: f64, threshold: f64, band: f64) -> Lid {
    match lid {
        Lid::Open if openness < threshold => Lid::Closed,
        Lid::Closed if openness >= threshold + band => Lid::Open,
        other => other,
    }
}

/// Run a fresh segmenter over a frame sequence and collect its events.
pub fn segment_all<'a>(
    frames: impl IntoIterator<Item = &'a ValidatedFrame>,
    profile: CalibrationProfile,
) -> Vec<BlinkEvent> {
    let mut seg = Segmenter::new(profile);
    frames.into_iter().filter_map(|f| seg.update(f)).collect()
}

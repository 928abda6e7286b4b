//! Domain types shared by every stage of the pipeline.
//!
//! Timestamps are integer nanoseconds so that the 200 Hz cadence (5 ms) is
//! exact and ordering is total. All types are plain values and are `Send`.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nominal eye-tracker sampling rate.
pub const SAMPLE_RATE_HZ: u32 = 200;
/// Sample period at [`SAMPLE_RATE_HZ`].
pub const SAMPLE_PERIOD_NS: i64 = 5_000_000;
/// Number of per-frame features fed to the classifier.
pub const FEATURE_COUNT: usize = 10;
/// Feature names in tensor / CSV / wire order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "lpupil", "rpupil", "lopen", "ropen", "ldx", "ldy", "ldz", "rdx", "rdy", "rdz",
];

pub const NS_PER_MS: i64 = 1_000_000;
pub const NS_PER_S: i64 = 1_000_000_000;

/// Tolerance on the norm of vectors that are required to be unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-3;
const DEGENERATE_NORM: f64 = 1e-6;

/// A plain 3-vector in meters or unitless direction components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const FORWARD: Vec3 = Vec3::new(0.0, 0.0, 1.0);
    pub const UP: Vec3 = Vec3::new(0.0, 1.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction, or `None` for (near-)zero vectors.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n < DEGENERATE_NORM || !n.is_finite() {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Angle between two vectors in radians.
    pub fn angle_to(self, other: Vec3) -> f64 {
        // atan2 form stays accurate for tiny angles where acos loses precision.
        self.cross(other).norm().atan2(self.dot(other))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, rhs: f64) -> Vec3 {
        Vec3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// One eye-tracker sample: the ten classifier features plus timestamp and
/// tracking validity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeFrame {
    pub timestamp_ns: i64,
    pub left_pupil_mm: f64,
    pub right_pupil_mm: f64,
    pub left_openness: f64,
    pub right_openness: f64,
    pub left_dir: Vec3,
    pub right_dir: Vec3,
    pub valid: bool,
}

impl GazeFrame {
    /// Both eyes fully open, looking straight ahead.
    pub fn open_forward(timestamp_ns: i64) -> Self {
        Self {
            timestamp_ns,
            left_pupil_mm: 4.0,
            right_pupil_mm: 4.0,
            left_openness: 1.0,
            right_openness: 1.0,
            left_dir: Vec3::FORWARD,
            right_dir: Vec3::FORWARD,
            valid: true,
        }
    }

    pub fn with_openness(mut self, left: f64, right: f64) -> Self {
        self.left_openness = left;
        self.right_openness = right;
        self
    }

    /// Features in [`FEATURE_NAMES`] order.
    pub fn features(&self) -> [f64; FEATURE_COUNT] {
        [
            self.left_pupil_mm,
            self.right_pupil_mm,
            self.left_openness,
            self.right_openness,
            self.left_dir.x,
            self.left_dir.y,
            self.left_dir.z,
            self.right_dir.x,
            self.right_dir.y,
            self.right_dir.z,
        ]
    }

    pub fn from_features(timestamp_ns: i64, f: [f64; FEATURE_COUNT], valid: bool) -> Self {
        Self {
            timestamp_ns,
            left_pupil_mm: f[0],
            right_pupil_mm: f[1],
            left_openness: f[2],
            right_openness: f[3],
            left_dir: Vec3::new(f[4], f[5], f[6]),
            right_dir: Vec3::new(f[7], f[8], f[9]),
            valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("timestamp {got} ns does not follow previous timestamp {previous} ns")]
    NonMonotonicTimestamp { previous: i64, got: i64 },
    #[error("gaze direction is degenerate (norm {norm:e}) on a frame flagged valid")]
    DegenerateDirection { norm: f64 },
}

/// A frame that passed [`FrameValidator::validate`]: openness clamped to
/// `[0, 1]`, directions unit length, timestamp strictly after its
/// predecessor. Invalid frames carry forward-filled features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidatedFrame(GazeFrame);

impl ValidatedFrame {
    pub fn frame(&self) -> &GazeFrame {
        &self.0
    }

    pub fn timestamp_ns(&self) -> i64 {
        self.0.timestamp_ns
    }

    pub fn features(&self) -> [f64; FEATURE_COUNT] {
        self.0.features()
    }

    pub fn is_valid(&self) -> bool {
        self.0.valid
    }

    /// Binocular gaze: renormalized mean of the two eye directions.
    pub fn binocular_dir(&self) -> Vec3 {
        ((self.0.left_dir + self.0.right_dir) * 0.5)
            .normalized()
            .unwrap_or(self.0.left_dir)
    }
}

/// Per-stream validation state.
///
/// Invalid frames (or frames with non-finite features) reuse the last valid
/// feature values; future samples are never used.
#[derive(Debug, Clone, Default)]
pub struct FrameValidator {
    last_timestamp: Option<i64>,
    last_valid: Option<GazeFrame>,
}

impl FrameValidator {
    pub fn new() -> Self {
        Self::default()
    }

    /// True once any valid frame has been accepted.
    pub fn has_seen_valid(&self) -> bool {
        self.last_valid.is_some()
    }

    pub fn validate(&mut self, frame: GazeFrame) -> Result<ValidatedFrame, FrameError> {
        if let Some(previous) = self.last_timestamp {
            if frame.timestamp_ns <= previous {
                return Err(FrameError::NonMonotonicTimestamp {
                    previous,
                    got: frame.timestamp_ns,
                });
            }
        }

        let finite = frame.features().iter().all(|v| v.is_finite());
        let out = if frame.valid && finite {
            let left_dir = frame.left_dir.normalized().ok_or(FrameError::DegenerateDirection {
                norm: frame.left_dir.norm(),
            })?;
            let right_dir = frame.right_dir.normalized().ok_or(FrameError::DegenerateDirection {
                norm: frame.right_dir.norm(),
            })?;
            let clean = GazeFrame {
                timestamp_ns: frame.timestamp_ns,
                left_pupil_mm: frame.left_pupil_mm.max(0.0),
                right_pupil_mm: frame.right_pupil_mm.max(0.0),
                left_openness: frame.left_openness.clamp(0.0, 1.0),
                right_openness: frame.right_openness.clamp(0.0, 1.0),
                left_dir,
                right_dir,
                valid: true,
            };
            self.last_valid = Some(clean);
            clean
        } else {
            let mut filled = self
                .last_valid
                .unwrap_or_else(|| GazeFrame::open_forward(frame.timestamp_ns));
            filled.timestamp_ns = frame.timestamp_ns;
            filled.valid = false;
            filled
        };

        self.last_timestamp = Some(frame.timestamp_ns);
        Ok(ValidatedFrame(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub timestamp_ns: i64,
    pub position: Vec3,
    pub forward: Vec3,
}

impl HeadPose {
    pub fn new(timestamp_ns: i64, position: Vec3, forward: Vec3) -> Self {
        Self {
            timestamp_ns,
            position,
            forward,
        }
    }

    /// Head at `position` rotated by `yaw` about +y and `pitch` about +x,
    /// starting from +z forward. Angles in radians.
    pub fn from_yaw_pitch(timestamp_ns: i64, position: Vec3, yaw: f64, pitch: f64) -> Self {
        let forward = Vec3::new(
            yaw.sin() * pitch.cos(),
            -pitch.sin(),
            yaw.cos() * pitch.cos(),
        );
        Self::new(timestamp_ns, position, forward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinchSample {
    pub timestamp_ns: i64,
    pub pinch_strength: f64,
    pub hand_position: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlinkKind {
    BothEyes,
    LeftWink,
    RightWink,
}

impl BlinkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlinkKind::BothEyes => "both",
            BlinkKind::LeftWink => "left",
            BlinkKind::RightWink => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "both" => Some(BlinkKind::BothEyes),
            "left" => Some(BlinkKind::LeftWink),
            "right" => Some(BlinkKind::RightWink),
            _ => None,
        }
    }
}

/// A completed eye-closure interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlinkEvent {
    pub onset_ns: i64,
    /// Timestamp of the frame on which the last closed eye reopened.
    pub offset_ns: i64,
    pub kind: BlinkKind,
    pub min_openness_left: f64,
    pub min_openness_right: f64,
}

impl BlinkEvent {
    pub fn duration_ns(&self) -> i64 {
        self.offset_ns - self.onset_ns
    }
}

/// Classifier label. The discriminant is the output-vector index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlinkLabel {
    Voluntary = 0,
    Involuntary = 1,
}

impl BlinkLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(BlinkLabel::Voluntary),
            1 => Some(BlinkLabel::Involuntary),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlinkLabel::Voluntary => "voluntary",
            BlinkLabel::Involuntary => "involuntary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "voluntary" => Some(BlinkLabel::Voluntary),
            "involuntary" => Some(BlinkLabel::Involuntary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("closed threshold {0} must lie in (0, 1)")]
    ThresholdOutOfRange(f64),
    #[error("hysteresis band {0} must lie in [0, 0.3]")]
    BandOutOfRange(f64),
    #[error("threshold {threshold} plus band {band} must stay below 1")]
    ReopenAboveOne { threshold: f64, band: f64 },
}

/// Per-user eye-closure thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub closed_threshold_left: f64,
    pub closed_threshold_right: f64,
    pub hysteresis_band: f64,
}

impl CalibrationProfile {
    pub const DEFAULT_THRESHOLD: f64 = 0.7;
    pub const DEFAULT_BAND: f64 = 0.05;

    pub fn new(left: f64, right: f64, band: f64) -> Result<Self, ProfileError> {
        for t in [left, right] {
            if !(t > 0.0 && t < 1.0) {
                return Err(ProfileError::ThresholdOutOfRange(t));
            }
        }
        if !(0.0..=0.3).contains(&band) {
            return Err(ProfileError::BandOutOfRange(band));
        }
        for threshold in [left, right] {
            if threshold + band >= 1.0 {
                return Err(ProfileError::ReopenAboveOne { threshold, band });
            }
        }
        Ok(Self {
            closed_threshold_left: left,
            closed_threshold_right: right,
            hysteresis_band: band,
        })
    }

    /// Single 0.7 threshold, no hysteresis.
    pub fn single_threshold() -> Self {
        Self {
            closed_threshold_left: Self::DEFAULT_THRESHOLD,
            closed_threshold_right: Self::DEFAULT_THRESHOLD,
            hysteresis_band: 0.0,
        }
    }
}

impl Default for CalibrationProfile {
    fn default() -> Self {
        Self {
            closed_threshold_left: Self::DEFAULT_THRESHOLD,
            closed_threshold_right: Self::DEFAULT_THRESHOLD,
            hysteresis_band: Self::DEFAULT_BAND,
        }
    }
}

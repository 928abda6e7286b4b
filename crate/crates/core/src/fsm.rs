//! Blink/wink interaction state machine with head-ray drag mapping, plus the
//! pinch click-vs-drag disambiguator used by the pinch baseline.
//!
//! States and edges:
//!
//! ```text
//! Default    --both closed-------------------> Selection   (emit Select)
//! Selection  --both open---------------------> Default     (only exit)
//! Default    --one closed & head rotation----> DragStart   (emit DragStarted)
//! DragStart  --one closed & head rotation----> DragUpdate  (emit DragDelta)
//! DragUpdate --one closed & head rotation----> DragUpdate  (emit DragDelta)
//! DragStart/DragUpdate --both open|closed----> DragEnd     (emit DragEnded)
//! DragEnd    --any-------------------------> Default
//! ```
//!
//! Anything not listed is a self-loop. A wink without head rotation keeps
//! `Default` in `Default` and `DragStart` in `DragStart`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmenter::{EyeState, Lid};
use crate::types::{HeadPose, PinchSample, Vec3, NS_PER_MS};

/// Per-step head rotation needed to count as "head movement".
pub const DEFAULT_DEAD_ZONE_RAD: f64 = 0.5 * std::f64::consts::PI / 180.0;
/// Distance of the UI plane from the user.
pub const DEFAULT_PLANE_DISTANCE_M: f64 = 2.5;
/// Rays whose component along the plane normal is at most this are rejected.
const PARALLEL_EPS: f64 = 1e-9;

pub const PINCH_STRENGTH_THRESHOLD: f64 = 0.8;
pub const MIN_DRAG_DISTANCE_M: f64 = 0.07;
pub const MIN_DRAG_DURATION_NS: i64 = 300 * NS_PER_MS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Default,
    Selection,
    DragStart,
    DragUpdate,
    DragEnd,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Default,
        Mode::Selection,
        Mode::DragStart,
        Mode::DragUpdate,
        Mode::DragEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Default => "default",
            Mode::Selection => "selection",
            Mode::DragStart => "drag_start",
            Mode::DragUpdate => "drag_update",
            Mode::DragEnd => "drag_end",
        }
    }

    pub fn is_dragging(self) -> bool {
        matches!(self, Mode::DragStart | Mode::DragUpdate)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Instantaneous lid configuration, abstracted from which eye is which.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EyePair {
    BothOpen,
    LeftClosed,
    RightClosed,
    BothClosed,
}

impl EyePair {
    pub const ALL: [EyePair; 4] = [
        EyePair::BothOpen,
        EyePair::LeftClosed,
        EyePair::RightClosed,
        EyePair::BothClosed,
    ];

    pub fn from_lids(left: Lid, right: Lid) -> Self {
        match (left, right) {
            (Lid::Open, Lid::Open) => EyePair::BothOpen,
            (Lid::Closed, Lid::Open) => EyePair::LeftClosed,
            (Lid::Open, Lid::Closed) => EyePair::RightClosed,
            (Lid::Closed, Lid::Closed) => EyePair::BothClosed,
        }
    }

    pub fn one_closed(self) -> bool {
        matches!(self, EyePair::LeftClosed | EyePair::RightClosed)
    }
}

impl From<&EyeState> for EyePair {
    fn from(s: &EyeState) -> Self {
        EyePair::from_lids(s.left, s.right)
    }
}

/// Next mode for a (mode, eyes, head-moving) input. Pure; geometry failures
/// are handled by [`BlinkFsm::step`].
pub fn transition(mode: Mode, eyes: EyePair, head_moving: bool) -> Mode {
    use EyePair::*;
    match (mode, eyes) {
        (Mode::Default, BothClosed) => Mode::Selection,
        (Mode::Default, e) if e.one_closed() && head_moving => Mode::DragStart,
        (Mode::Default, _) => Mode::Default,

        (Mode::Selection, BothOpen) => Mode::Default,
        (Mode::Selection, _) => Mode::Selection,

        (Mode::DragStart | Mode::DragUpdate, BothOpen | BothClosed) => Mode::DragEnd,
        (Mode::DragStart, _) if head_moving => Mode::DragUpdate,
        (Mode::DragStart, _) => Mode::DragStart,
        (Mode::DragUpdate, _) => Mode::DragUpdate,

        (Mode::DragEnd, _) => Mode::Default,
    }
}

/// Opaque UI element handle resolved by the host's hit testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Select(Option<TargetId>),
    DragStarted(Option<TargetId>),
    /// In-plane displacement since the previous anchor, meters.
    DragDelta([f64; 2]),
    DragEnded,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Select(_) => "select",
            EventKind::DragStarted(_) => "drag_started",
            EventKind::DragDelta(_) => "drag_delta",
            EventKind::DragEnded => "drag_ended",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub kind: EventKind,
    pub timestamp_ns: i64,
}

impl InteractionEvent {
    /// Apply a host rotational gain to drag deltas; other events pass through.
    pub fn with_gain(mut self, gain: f64) -> Self {
        if let EventKind::DragDelta(d) = &mut self.kind {
            d[0] *= gain;
            d[1] *= gain;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionState {
    pub mode: Mode,
    pub drag_anchor: Option<Vec3>,
    pub target_id: Option<TargetId>,
}

impl Default for InteractionState {
    fn default() -> Self {
        Self {
            mode: Mode::Default,
            drag_anchor: None,
            target_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FsmError {
    #[error("head ray does not hit the UI plane")]
    PlaneBehindUser,
    #[error("plane normal must be unit length and distance positive")]
    InvalidPlane,
}

/// A UI plane at `distance_m` from `origin` along unit `normal`
/// (the normal points away from the user).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UiPlane {
    pub origin: Vec3,
    pub normal: Vec3,
    pub distance_m: f64,
}

impl UiPlane {
    pub fn new(origin: Vec3, normal: Vec3, distance_m: f64) -> Result<Self, FsmError> {
        if !normal.is_unit() || !(distance_m > 0.0) || !distance_m.is_finite() {
            return Err(FsmError::InvalidPlane);
        }
        Ok(Self {
            origin,
            normal,
            distance_m,
        })
    }

    /// Plane facing a user at the world origin looking down +z.
    pub fn in_front(distance_m: f64) -> Result<Self, FsmError> {
        Self::new(Vec3::ZERO, Vec3::FORWARD, distance_m)
    }

    /// Orthonormal in-plane axes (right, up).
    pub fn basis(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let right = Vec3::UP
            .cross(n)
            .normalized()
            .or_else(|| Vec3::new(0.0, 0.0, -1.0).cross(n).normalized())
            .expect("normal is unit length");
        let up = n.cross(right);
        (right, up)
    }

    pub fn project(&self, v: Vec3) -> [f64; 2] {
        let (u, w) = self.basis();
        [v.dot(u), v.dot(w)]
    }
}

impl Default for UiPlane {
    fn default() -> Self {
        Self::in_front(DEFAULT_PLANE_DISTANCE_M).expect("valid default plane")
    }
}

/// Intersection of the head ray (position, forward) with the plane, or
/// `None` when the ray is parallel to or points away from it.
pub fn intersect_head_ray(head: &HeadPose, plane: &UiPlane) -> Option<Vec3> {
    let denom = head.forward.dot(plane.normal);
    if denom <= PARALLEL_EPS {
        return None;
    }
    let t = (plane.distance_m - (head.position - plane.origin).dot(plane.normal)) / denom;
    if t < 0.0 {
        return None;
    }
    Some(head.position + head.forward * t)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub events: Vec<InteractionEvent>,
    /// Set when the step could not apply its geometric effect.
    pub warning: Option<FsmError>,
}

/// The interaction machine for one stream.
#[derive(Debug, Clone)]
pub struct BlinkFsm {
    state: InteractionState,
    prev_forward: Option<Vec3>,
    dead_zone_rad: f64,
}

impl Default for BlinkFsm {
    fn default() -> Self {
        Self::new(DEFAULT_DEAD_ZONE_RAD)
    }
}

impl BlinkFsm {
    pub fn new(dead_zone_rad: f64) -> Self {
        Self {
            state: InteractionState::default(),
            prev_forward: None,
            dead_zone_rad,
        }
    }

    pub fn state(&self) -> &InteractionState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn step(
        &mut self,
        eyes: EyePair,
        head: &HeadPose,
        plane: &UiPlane,
        hover_target: Option<TargetId>,
    ) -> StepOutput {
        let moving = self
            .prev_forward
            .is_some_and(|p| p.angle_to(head.forward) > self.dead_zone_rad);
        self.prev_forward = Some(head.forward);

        let ts = head.timestamp_ns;
        let mut out = StepOutput::default();
        let from = self.state.mode;
        let to = transition(from, eyes, moving);

        match (from, to) {
            (Mode::Default, Mode::Selection) => {
                self.state.target_id = hover_target;
                out.events.push(InteractionEvent {
                    kind: EventKind::Select(hover_target),
                    timestamp_ns: ts,
                });
            }
            (Mode::Default, Mode::DragStart) => match intersect_head_ray(head, plane) {
                Some(anchor) => {
                    self.state.drag_anchor = Some(anchor);
                    self.state.target_id = hover_target;
                    out.events.push(InteractionEvent {
                        kind: EventKind::DragStarted(hover_target),
                        timestamp_ns: ts,
                    });
                }
                None => {
                    out.warning = Some(FsmError::PlaneBehindUser);
                    return out;
                }
            },
            (Mode::DragStart | Mode::DragUpdate, Mode::DragUpdate) if moving => {
                match intersect_head_ray(head, plane) {
                    Some(current) => {
                        let anchor = self.state.drag_anchor.expect("anchor set while dragging");
                        self.state.drag_anchor = Some(current);
                        out.events.push(InteractionEvent {
                            kind: EventKind::DragDelta(plane.project(current - anchor)),
                            timestamp_ns: ts,
                        });
                    }
                    None => out.warning = Some(FsmError::PlaneBehindUser),
                }
            }
            (Mode::DragStart | Mode::DragUpdate, Mode::DragEnd) => {
                self.state.drag_anchor = None;
                out.events.push(InteractionEvent {
                    kind: EventKind::DragEnded,
                    timestamp_ns: ts,
                });
            }
            (_, Mode::Default) => {
                self.state.drag_anchor = None;
                self.state.target_id = None;
            }
            _ => {}
        }
        self.state.mode = to;
        out
    }
}

/// One tab-separated trace line: `timestamp_ns mode event_kind dx dy`.
pub fn trace_line(timestamp_ns: i64, mode: Mode, event: Option<&InteractionEvent>) -> String {
    let (kind, dx, dy) = match event.map(|e| e.kind) {
        None => ("-", 0.0, 0.0),
        Some(EventKind::DragDelta([dx, dy])) => ("drag_delta", dx, dy),
        Some(k) => (k.as_str(), 0.0, 0.0),
    };
    format!("{timestamp_ns}\t{mode}\t{kind}\t{dx:.9}\t{dy:.9}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PinchGesture {
    Click,
    Drag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinchConfig {
    pub strength_threshold: f64,
    pub min_drag_distance_m: f64,
    pub min_drag_duration_ns: i64,
}

impl Default for PinchConfig {
    fn default() -> Self {
        Self {
            strength_threshold: PINCH_STRENGTH_THRESHOLD,
            min_drag_distance_m: MIN_DRAG_DISTANCE_M,
            min_drag_duration_ns: MIN_DRAG_DURATION_NS,
        }
    }
}

/// Classify every completed pinch episode in timestamp order. An episode
/// runs from the first sample at or above the strength threshold to the
/// first sample below it; an episode still held at the end is ignored.
pub fn classify_pinch_episodes(samples: &[PinchSample], cfg: &PinchConfig) -> Vec<PinchGesture> {
    let mut out = Vec::new();
    let mut episode: Option<(i64, Vec3, f64)> = None;
    for s in samples {
        let pinched = s.pinch_strength >= cfg.strength_threshold;
        match (&mut episode, pinched) {
            (None, true) => episode = Some((s.timestamp_ns, s.hand_position, 0.0)),
            (Some((_, start, travel)), true) => {
                *travel = travel.max((s.hand_position - *start).norm());
            }
            (Some((t0, _, travel)), false) => {
                let is_drag = *travel >= cfg.min_drag_distance_m
                    && s.timestamp_ns - *t0 >= cfg.min_drag_duration_ns;
                out.push(if is_drag { PinchGesture::Drag } else { PinchGesture::Click });
                episode = None;
            }
            (None, false) => {}
        }
    }
    out
}

/// First completed pinch episode's class, if any.
pub fn classify_pinch_gesture(samples: &[PinchSample], cfg: &PinchConfig) -> Option<PinchGesture> {
    classify_pinch_episodes(samples, cfg).into_iter().next()
}

//! Streaming gaze-signal engine for blink-based interaction.
//!
//! The pipeline runs 200 Hz eye-tracker frames through validation
//! ([`types`]), blink/wink segmentation ([`segmenter`]), the interaction state
//! machine ([`fsm`]), and, for blink-intent filtering, a rolling history
//! ([`window`]) feeding a residual MLP classifier ([`net`]). [`proto`] serves
//! the classifier over TCP, [`dataset`] and [`eval`] cover labeled data and
//! metrics, and [`sim`] generates synthetic sessions.

pub mod dataset;
pub mod eval;
pub mod fsm;
pub mod net;
pub mod proto;
pub mod segmenter;
pub mod sim;
pub mod types;
pub mod window;

pub use types::{
    BlinkEvent, BlinkKind, BlinkLabel, CalibrationProfile, FrameValidator, GazeFrame, HeadPose, PinchSample,
    ValidatedFrame, Vec3,
};

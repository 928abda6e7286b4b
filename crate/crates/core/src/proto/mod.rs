//! Gaze streaming protocol: wire format, per-connection sessions, a TCP
//! server and the client-side association rule.

pub mod client;
pub mod server;
pub mod session;
pub mod wire;

pub use client::{associate_prediction, gate_selection, stream_frames, Association, ClientBlinks, ReceivedPrediction};
pub use server::{Server, ServerConfig, ServerHandle, ServerStats, StatsSnapshot, DEFAULT_PORT};
pub use session::{run_in_process, Prediction, Session, WarmupPolicy};
pub use wire::{decode, encode, quantize, read_message, ControlCommand, Message, WireError};

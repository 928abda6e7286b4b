//! Rolling frame history and classifier input windows.
//!
//! A window is the `window_len` frames ending at the frame that contains a
//! blink offset, flattened time-major with the ten features per frame in
//! [`FEATURE_NAMES`](crate::types::FEATURE_NAMES) order.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BlinkEvent, ValidatedFrame, FEATURE_COUNT};

/// 25 s of history at 200 Hz.
pub const WINDOW_LEN: usize = 5000;
/// Training-time jitter of the window end, in samples.
pub const MAX_SHIFT: i64 = 10;

pub type FeatureRow = [f64; FEATURE_COUNT];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WindowError {
    #[error("history holds {have} frames, need {need}")]
    NotReady { have: usize, need: usize },
    #[error("timestamp {got} ns does not follow newest buffered timestamp {newest} ns")]
    NonMonotonicTimestamp { newest: i64, got: i64 },
    #[error("blink offset {0} ns is outside the buffered range")]
    OffsetNotBuffered(i64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowTensor {
    /// `window_len * FEATURE_COUNT` values, time-major.
    pub values: Vec<f64>,
    pub end_timestamp_ns: i64,
}

impl WindowTensor {
    pub fn window_len(&self) -> usize {
        self.values.len() / FEATURE_COUNT
    }

    /// Features of the final (blink-end) timestep.
    pub fn last_row(&self) -> &[f64] {
        &self.values[self.values.len() - FEATURE_COUNT..]
    }
}

/// Copy `window_len` rows ending at `end_idx` (inclusive) into a flat vector.
pub fn flatten_window(rows: &[FeatureRow], end_idx: usize, window_len: usize) -> Option<Vec<f64>> {
    if window_len == 0 || end_idx >= rows.len() || end_idx + 1 < window_len {
        return None;
    }
    Some(rows[end_idx + 1 - window_len..=end_idx].iter().flatten().copied().collect())
}

/// Apply `shift` to a window end index, clipped so that the whole window
/// stays inside `0..len`. Returns the clipped end index.
pub fn clip_shifted_end(end_idx: usize, shift: i64, len: usize, window_len: usize) -> usize {
    let lo = window_len.saturating_sub(1) as i64;
    let hi = len as i64 - 1;
    (end_idx as i64 + shift).clamp(lo, hi.max(lo)) as usize
}

/// Uniform integer shift in `[-MAX_SHIFT, MAX_SHIFT]`.
pub fn draw_shift<R: Rng + ?Sized>(rng: &mut R) -> i64 {
    rng.random_range(-MAX_SHIFT..=MAX_SHIFT)
}

/// Bounded, timestamp-ordered frame history for one stream.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    window_len: usize,
    capacity: usize,
    timestamps: VecDeque<i64>,
    rows: VecDeque<FeatureRow>,
}

impl HistoryBuffer {
    /// Buffer holding exactly one window of history.
    pub fn new(window_len: usize) -> Self {
        Self::with_capacity(window_len, window_len)
    }

    /// Buffer that keeps `capacity >= window_len` frames, leaving room to
    /// snapshot windows ending before the newest frame.
    pub fn with_capacity(window_len: usize, capacity: usize) -> Self {
        let capacity = capacity.max(window_len);
        Self {
            window_len,
            capacity,
            timestamps: VecDeque::with_capacity(capacity),
            rows: VecDeque::with_capacity(capacity),
        }
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill_count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_ready(&self) -> bool {
        self.rows.len() >= self.window_len
    }

    pub fn newest_timestamp(&self) -> Option<i64> {
        self.timestamps.back().copied()
    }

    pub fn push(&mut self, frame: &ValidatedFrame) -> Result<(), WindowError> {
        self.push_row(frame.timestamp_ns(), frame.features())
    }

    pub fn push_row(&mut self, timestamp_ns: i64, row: FeatureRow) -> Result<(), WindowError> {
        if let Some(newest) = self.newest_timestamp() {
            if timestamp_ns <= newest {
                return Err(WindowError::NonMonotonicTimestamp {
                    newest,
                    got: timestamp_ns,
                });
            }
        }
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
            self.timestamps.pop_front();
        }
        self.rows.push_back(row);
        self.timestamps.push_back(timestamp_ns);
        Ok(())
    }

    /// Index of the newest frame at or before `t`.
    fn index_at(&self, t: i64) -> Option<usize> {
        match self.timestamps.binary_search(&t) {
            Ok(i) => Some(i),
            Err(0) => None,
            Err(i) => Some(i - 1),
        }
    }

    fn window_at(&self, end_idx: usize) -> WindowTensor {
        let start = end_idx + 1 - self.window_len;
        let mut values = Vec::with_capacity(self.window_len * FEATURE_COUNT);
        for row in self.rows.range(start..=end_idx) {
            values.extend_from_slice(row);
        }
        WindowTensor {
            values,
            end_timestamp_ns: self.timestamps[end_idx],
        }
    }

    fn blink_end_index(&self, blink: &BlinkEvent) -> Result<usize, WindowError> {
        if !self.is_ready() {
            return Err(WindowError::NotReady {
                have: self.rows.len(),
                need: self.window_len,
            });
        }
        if self.newest_timestamp().is_some_and(|n| blink.offset_ns > n) {
            return Err(WindowError::OffsetNotBuffered(blink.offset_ns));
        }
        self.index_at(blink.offset_ns)
            .ok_or(WindowError::OffsetNotBuffered(blink.offset_ns))
    }

    /// The window ending at the frame containing the blink offset.
    pub fn snapshot_at_blink_end(&self, blink: &BlinkEvent) -> Result<WindowTensor, WindowError> {
        let end = self.blink_end_index(blink)?;
        if end + 1 < self.window_len {
            return Err(WindowError::NotReady {
                have: end + 1,
                need: self.window_len,
            });
        }
        Ok(self.window_at(end))
    }

    /// Snapshot with the end moved by `shift` frames, clipped to the buffer.
    /// Returns the tensor and the shift actually applied.
    pub fn snapshot_shifted(&self, blink: &BlinkEvent, shift: i64) -> Result<(WindowTensor, i64), WindowError> {
        let end = self.blink_end_index(blink)?;
        let clipped = clip_shifted_end(end, shift, self.rows.len(), self.window_len);
        Ok((self.window_at(clipped), clipped as i64 - end as i64))
    }

    /// Training augmentation: snapshot with a uniformly drawn end shift.
    pub fn augment_shift<R: Rng + ?Sized>(
        &self,
        blink: &BlinkEvent,
        rng: &mut R,
    ) -> Result<(WindowTensor, i64), WindowError> {
        let shift = draw_shift(rng);
        self.snapshot_shifted(blink, shift)
    }
}

/// Optional per-feature z-scoring, fitted on training rows. Off by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: FeatureRow,
    pub std: FeatureRow,
}

impl FeatureNormalizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a FeatureRow>) -> Self {
        let mut n = 0usize;
        let mut mean = [0.0; FEATURE_COUNT];
        let mut m2 = [0.0; FEATURE_COUNT];
        for row in rows {
            n += 1;
            for k in 0..FEATURE_COUNT {
                let d = row[k] - mean[k];
                mean[k] += d / n as f64;
                m2[k] += d * (row[k] - mean[k]);
            }
        }
        let mut std = [1.0; FEATURE_COUNT];
        if n > 1 {
            for k in 0..FEATURE_COUNT {
                let s = (m2[k] / n as f64).sqrt();
                std[k] = if s > 1e-12 { s } else { 1.0 };
            }
        }
        Self { mean, std }
    }

    pub fn apply(&self, values: &mut [f64]) {
        for row in values.chunks_exact_mut(FEATURE_COUNT) {
            for k in 0..FEATURE_COUNT {
                row[k] = (row[k] - self.mean[k]) / self.std[k];
            }
        }
    }
}

//! Recordings on disk, blink labeling from button presses, and
//! participant-disjoint splits.
//!
//! A recording is a CSV file
//!
//! ```text
//! # blinkpipe-recording v1 participant=P00 device=sim rate_hz=200
//! timestamp_ns,lpupil,rpupil,lopen,ropen,ldx,ldy,ldz,rdx,rdy,rdz,valid
//! 0,4.1,4.12,0.998,0.997,0.01,-0.02,0.9997,...,1
//! ```
//!
//! plus a `.presses` sidecar with one button-press timestamp (ns) per line.
//! Either file may be gzip-compressed (`.gz` suffix).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::train::WindowDataset;
use crate::segmenter::Segmenter;
use crate::types::{
    BlinkEvent, BlinkKind, BlinkLabel, CalibrationProfile, FrameError, FrameValidator, GazeFrame, NS_PER_MS, NS_PER_S,
    SAMPLE_RATE_HZ,
};
use crate::window::FeatureRow;

/// A blink is voluntary iff a press lies within this margin of its offset.
pub const LABEL_MARGIN_NS: i64 = 200 * NS_PER_MS;

pub const RECORDING_MAGIC: &str = "# blinkpipe-recording v1";
pub const CSV_COLUMNS: &str = "timestamp_ns,lpupil,rpupil,lopen,ropen,ldx,ldy,ldz,rdx,rdy,rdz,valid";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("recording {participant}: {source}")]
    Frame {
        participant: String,
        #[source]
        source: FrameError,
    },
    #[error("need at least 3 participants for a train/val/test split, found {0}")]
    TooFewParticipants(usize),
    #[error("split ratios must be positive and sum to 1")]
    BadRatios,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub participant_id: String,
    pub device: String,
    pub rate_hz: u32,
    pub frames: Vec<GazeFrame>,
    /// Sorted button-press timestamps.
    pub button_presses: Vec<i64>,
}

impl Recording {
    pub fn new(participant_id: impl Into<String>) -> Self {
        Self {
            participant_id: participant_id.into(),
            device: "unknown".into(),
            rate_hz: SAMPLE_RATE_HZ,
            frames: Vec::new(),
            button_presses: Vec::new(),
        }
    }

    pub fn duration_s(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => (b.timestamp_ns - a.timestamp_ns) as f64 / NS_PER_S as f64,
            _ => 0.0,
        }
    }

    /// Frames after validation and forward fill.
    pub fn validated(&self) -> Result<Vec<crate::types::ValidatedFrame>, DatasetError> {
        let mut v = FrameValidator::new();
        self.frames
            .iter()
            .map(|f| {
                v.validate(*f).map_err(|source| DatasetError::Frame {
                    participant: self.participant_id.clone(),
                    source,
                })
            })
            .collect()
    }

    fn csv_text(&self) -> String {
        let mut s = String::with_capacity(self.frames.len() * 120 + 128);
        s.push_str(&format!(
            "{RECORDING_MAGIC} participant={} device={} rate_hz={}\n{CSV_COLUMNS}\n",
            self.participant_id, self.device, self.rate_hz
        ));
        for f in &self.frames {
            s.push_str(&f.timestamp_ns.to_string());
            for v in f.features() {
                s.push(',');
                // `Display` for f64 is the shortest exact round-trip form
                s.push_str(&v.to_string());
            }
            s.push_str(if f.valid { ",1\n" } else { ",0\n" });
        }
        s
    }

    /// Write `<dir>/<participant>.csv` and `<dir>/<participant>.presses`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf, DatasetError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let csv = dir.join(format!("{}.csv", self.participant_id));
        write_file(&csv, self.csv_text().as_bytes())?;
        let presses: String = self.button_presses.iter().map(|t| format!("{t}\n")).collect();
        write_file(&presses_path(&csv), presses.as_bytes())?;
        Ok(csv)
    }

    /// Read a recording CSV (optionally `.gz`) and its presses sidecar if present.
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let reader = open_maybe_gz(path)?;
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, msg: String| DatasetError::Parse {
            path: path.to_path_buf(),
            line: line + 1,
            msg,
        };

        let (_, header) = lines.next().ok_or_else(|| parse_err(0, "empty file".into()))?;
        let header = header.map_err(io_err(path))?;
        let meta = header
            .strip_prefix(RECORDING_MAGIC)
            .ok_or_else(|| parse_err(0, "missing recording header".into()))?;
        let mut rec = Recording::new(path_stem(path));
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("participant", v)) => rec.participant_id = v.to_string(),
                Some(("device", v)) => rec.device = v.to_string(),
                Some(("rate_hz", v)) => {
                    rec.rate_hz = v.parse().map_err(|_| parse_err(0, format!("bad rate_hz {v:?}")))?
                }
                _ => return Err(parse_err(0, format!("unknown header field {kv:?}"))),
            }
        }
        match lines.next() {
            Some((_, Ok(cols))) if cols.trim() == CSV_COLUMNS => {}
            Some((i, _)) => return Err(parse_err(i, "unexpected column header".into())),
            None => return Err(parse_err(1, "missing column header".into())),
        }

        for (i, line) in lines {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 12 {
                return Err(parse_err(i, format!("expected 12 columns, found {}", fields.len())));
            }
            let ts: i64 = fields[0]
                .parse()
                .map_err(|_| parse_err(i, format!("bad timestamp {:?}", fields[0])))?;
            let mut feats = [0.0; 10];
            for (k, v) in fields[1..11].iter().enumerate() {
                feats[k] = v.parse().map_err(|_| parse_err(i, format!("bad number {v:?}")))?;
            }
            let valid = match fields[11].trim() {
                "1" => true,
                "0" => false,
                other => return Err(parse_err(i, format!("bad valid flag {other:?}"))),
            };
            rec.frames.push(GazeFrame::from_features(ts, feats, valid));
        }

        let sidecar = presses_path(path);
        let sidecar = if sidecar.exists() {
            Some(sidecar)
        } else {
            let gz = PathBuf::from(format!("{}.gz", sidecar.display()));
            gz.exists().then_some(gz)
        };
        if let Some(p) = sidecar {
            rec.button_presses = read_presses(&p)?;
        }
        Ok(rec)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(io_err(path))
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let inner: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

/// File name without `.csv` / `.csv.gz`.
fn path_stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".gz").unwrap_or(&name);
    name.strip_suffix(".csv").unwrap_or(name).to_string()
}

/// `<dir>/<stem>.presses` for a recording path.
pub fn presses_path(csv: &Path) -> PathBuf {
    csv.with_file_name(format!("{}.presses", path_stem(csv)))
}

pub fn read_presses(path: &Path) -> Result<Vec<i64>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in open_maybe_gz(path)?.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|_| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad timestamp {t:?}"),
        })?);
    }
    out.sort_unstable();
    Ok(out)
}

fn is_recording_file(path: &Path) -> bool {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (name.ends_with(".csv") || name.ends_with(".csv.gz")) && !name.contains(".ledger.")
}

/// All recordings in a directory, ordered by participant id.
pub fn read_dir(dir: &Path) -> Result<Vec<Recording>, DatasetError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_recording_file(p))
        .collect();
    paths.sort();
    let mut recs = paths.iter().map(|p| Recording::read(p)).collect::<Result<Vec<_>, _>>()?;
    recs.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    Ok(recs)
}

/// Voluntary iff some press lies in `[offset - 200 ms, offset + 200 ms]`.
/// `presses` must be sorted.
pub fn label_for_offset(offset_ns: i64, presses: &[i64]) -> BlinkLabel {
    let lo = presses.partition_point(|&p| p < offset_ns - LABEL_MARGIN_NS);
    if presses.get(lo).is_some_and(|&p| p <= offset_ns + LABEL_MARGIN_NS) {
        BlinkLabel::Voluntary
    } else {
        BlinkLabel::Involuntary
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBlink {
    pub participant_id: String,
    pub blink: BlinkEvent,
    pub label: BlinkLabel,
    /// Index of the blink-offset frame within the recording.
    pub end_idx: usize,
}

/// Segment a recording and label each both-eye blink by the press rule.
/// Winks are not part of the classification data.
pub fn label_blinks(rec: &Recording, profile: CalibrationProfile) -> Result<Vec<LabeledBlink>, DatasetError> {
    let frames = rec.validated()?;
    let mut presses = rec.button_presses.clone();
    presses.sort_unstable();
    let mut seg = Segmenter::new(profile);
    let mut out = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        if let Some(blink) = seg.update(f) {
            if blink.kind == BlinkKind::BothEyes {
                out.push(LabeledBlink {
                    participant_id: rec.participant_id.clone(),
                    blink,
                    label: label_for_offset(blink.offset_ns, &presses),
                    end_idx: i,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffle participants with `seed` and cut them into disjoint groups.
/// Validation and test get at least one participant each.
pub fn split_participants(ids: &[String], spec: &SplitSpec, seed: u64) -> Result<ParticipantSplit, DatasetError> {
    let sum = spec.train + spec.val + spec.test;
    if !(spec.train > 0.0 && spec.val > 0.0 && spec.test > 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios);
    }
    let mut unique: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let n = unique.len();
    if n < 3 {
        return Err(DatasetError::TooFewParticipants(n));
    }
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * spec.val).round() as usize).max(1);
    let n_test = ((n as f64 * spec.test).round() as usize).max(1);
    let n_train = n.saturating_sub(n_val + n_test).max(1);
    let n_val = n - n_train - n_test;
    let mut it = unique.into_iter();
    let mut take = |k: usize| {
        let mut v: Vec<String> = it.by_ref().take(k).collect();
        v.sort();
        v
    };
    Ok(ParticipantSplit {
        train: take(n_train),
        val: take(n_val),
        test: take(n_test),
    })
}

/// Label every recording and split the blinks by participant.
pub fn split_by_participant(
    recordings: &[Recording],
    spec: &SplitSpec,
    profile: CalibrationProfile,
    seed: u64,
) -> Result<(Vec<LabeledBlink>, Vec<LabeledBlink>, Vec<LabeledBlink>), DatasetError> {
    let ids: Vec<String> = recordings.iter().map(|r| r.participant_id.clone()).collect();
    let split = split_participants(&ids, spec, seed)?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for rec in recordings {
        let blinks = label_blinks(rec, profile)?;
        let id = &rec.participant_id;
        if split.train.contains(id) {
            train.extend(blinks);
        } else if split.val.contains(id) {
            val.extend(blinks);
        } else {
            test.extend(blinks);
        }
    }
    Ok((train, val, test))
}

/// Window dataset over the given recordings: one item per labeled
/// both-eye blink that has a full window of history.
pub fn window_dataset(
    recordings: &[&Recording],
    profile: CalibrationProfile,
    window_len: usize,
) -> Result<(WindowDataset, Vec<LabeledBlink>), DatasetError> {
    let mut data = WindowDataset::new(window_len);
    let mut kept = Vec::new();
    for rec in recordings {
        let frames = rec.validated()?;
        let blinks = label_blinks(rec, profile)?;
        let rows: Vec<FeatureRow> = frames.iter().map(|f| f.features()).collect();
        let stream = data.add_stream(rows);
        for b in blinks {
            if data.push(stream, b.end_idx, b.label) {
                kept.push(b);
            }
        }
    }
    Ok((data, kept))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub voluntary: usize,
    pub involuntary: usize,
    pub voluntary_fraction: f64,
    pub mean_duration_ms: f64,
    /// Blinks per minute over `duration_s`, when a duration is given.
    pub blinks_per_minute: Option<f64>,
    /// Mean seconds between blinks over `duration_s`.
    pub seconds_per_blink: Option<f64>,
}

pub fn dataset_stats(blinks: &[LabeledBlink], duration_s: Option<f64>) -> DatasetStats {
    let total = blinks.len();
    let voluntary = blinks.iter().filter(|b| b.label == BlinkLabel::Voluntary).count();
    let duration_sum: i64 = blinks.iter().map(|b| b.blink.duration_ns()).sum();
    let frac = |a: usize| if total == 0 { 0.0 } else { a as f64 / total as f64 };
    let (rate, interval) = match duration_s {
        Some(d) if d > 0.0 => (
            Some(total as f64 * 60.0 / d),
            (total > 0).then(|| d / total as f64),
        ),
        _ => (None, None),
    };
    DatasetStats {
        total,
        voluntary,
        involuntary: total - voluntary,
        voluntary_fraction: frac(voluntary),
        mean_duration_ms: if total == 0 {
            0.0
        } else {
            duration_sum as f64 / total as f64 / NS_PER_MS as f64
        },
        blinks_per_minute: rate,
        seconds_per_blink: interval,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SAMPLE_PERIOD_NS;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("P{i:02}")).collect()
    }

    #[test]
    fn press_inside_margin_is_voluntary() {
        let t = 10 * NS_PER_S;
        assert_eq!(label_for_offset(t, &[t + 150 * NS_PER_MS]), BlinkLabel::Voluntary);
        assert_eq!(label_for_offset(t, &[t - 200 * NS_PER_MS]), BlinkLabel::Voluntary);
        assert_eq!(label_for_offset(t, &[t + 200 * NS_PER_MS + 1]), BlinkLabel::Involuntary);
        assert_eq!(label_for_offset(t, &[]), BlinkLabel::Involuntary);
    }

    fn brute_force(offset: i64, presses: &[i64]) -> BlinkLabel {
        if presses.iter().any(|&p| (p - offset).abs() <= LABEL_MARGIN_NS) {
            BlinkLabel::Voluntary
        } else {
            BlinkLabel::Involuntary
        }
    }

    fn scripted_session(blink_starts_ms: &[i64], press_ms: &[i64]) -> Recording {
        let mut rec = Recording::new("S");
        let end = blink_starts_ms.iter().max().unwrap() + 2000;
        for i in 0..(end * NS_PER_MS / SAMPLE_PERIOD_NS) {
            let t = i * SAMPLE_PERIOD_NS;
            let closed = blink_starts_ms
                .iter()
                .any(|&s| t >= s * NS_PER_MS && t < (s + 120) * NS_PER_MS);
            let o = if closed { 0.2 } else { 1.0 };
            rec.frames.push(GazeFrame::open_forward(t).with_openness(o, o));
        }
        rec.button_presses = press_ms.iter().map(|m| m * NS_PER_MS).collect();
        rec
    }

    #[test]
    fn scripted_session_labels_match_interval_oracle() {
        let starts: Vec<i64> = (0..30).map(|k| 1000 + k * 900).collect();
        let presses: Vec<i64> = (0..20).map(|k| starts[k] + 120 + [-250, -90, 0, 60, 199, 210, 330][k % 7]).collect();
        let rec = scripted_session(&starts, &presses);
        let labeled = label_blinks(&rec, CalibrationProfile::default()).unwrap();
        assert_eq!(labeled.len(), 30);
        let mut sorted = rec.button_presses.clone();
        sorted.sort();
        for b in &labeled {
            assert_eq!(b.label, brute_force(b.blink.offset_ns, &sorted));
        }
        let vol = labeled.iter().filter(|b| b.label == BlinkLabel::Voluntary).count();
        let oracle = labeled
            .iter()
            .filter(|b| brute_force(b.blink.offset_ns, &sorted) == BlinkLabel::Voluntary)
            .count();
        assert_eq!(vol, oracle);
        assert!(vol > 0 && vol < 20);
    }

    #[test]
    fn winks_are_excluded() {
        let mut rec = Recording::new("W");
        for i in 0..200 {
            let o = if (50..80).contains(&i) { 0.2 } else { 1.0 };
            rec.frames.push(GazeFrame::open_forward(i * SAMPLE_PERIOD_NS).with_openness(o, 1.0));
        }
        assert!(label_blinks(&rec, CalibrationProfile::default()).unwrap().is_empty());
    }

    #[test]
    fn ten_participants_split_eight_one_one() {
        let s = split_participants(&ids(10), &SplitSpec::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn three_participants_split_one_each() {
        let s = split_participants(&ids(3), &SplitSpec::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
        assert!(matches!(
            split_participants(&ids(2), &SplitSpec::default(), 1),
            Err(DatasetError::TooFewParticipants(2))
        ));
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_cover_everyone(n in 3usize..40, seed in any::<u64>()) {
            let all = ids(n);
            let s = split_participants(&all, &SplitSpec::default(), seed).unwrap();
            let mut seen = BTreeSet::new();
            for id in s.train.iter().chain(&s.val).chain(&s.test) {
                prop_assert!(seen.insert(id.clone()), "{id} appears twice");
            }
            prop_assert_eq!(seen.len(), n);
        }

        #[test]
        fn label_rule_matches_brute_force(offset in -1_000_000_000i64..1_000_000_000, presses in prop::collection::vec(-2_000_000_000i64..2_000_000_000, 0..20)) {
            let mut p = presses.clone();
            p.sort();
            prop_assert_eq!(label_for_offset(offset, &p), brute_force(offset, &p));
            // symmetric in time around the offset
            let mirrored: Vec<i64> = p.iter().rev().map(|&x| 2 * offset - x).collect();
            prop_assert_eq!(label_for_offset(offset, &mirrored), label_for_offset(offset, &p));
        }
    }

    #[test]
    fn empty_stats_are_zero() {
        let s = dataset_stats(&[], None);
        assert_eq!((s.total, s.voluntary, s.involuntary), (0, 0, 0));
        assert_eq!(s.mean_duration_ms, 0.0);
    }

    #[test]
    fn corpus_class_ratio() {
        // 9,221 intentional vs 10,508 unintentional blinks
        let mk = |label| LabeledBlink {
            participant_id: "P".into(),
            blink: BlinkEvent {
                onset_ns: 0,
                offset_ns: 120 * NS_PER_MS,
                kind: BlinkKind::BothEyes,
                min_openness_left: 0.0,
                min_openness_right: 0.0,
            },
            label,
            end_idx: 0,
        };
        let blinks: Vec<_> = std::iter::repeat(mk(BlinkLabel::Voluntary))
            .take(9221)
            .chain(std::iter::repeat(mk(BlinkLabel::Involuntary)).take(10_508))
            .collect();
        let s = dataset_stats(&blinks, Some(19_729.0 * 1.6));
        assert_eq!(s.total, 19_729);
        assert!((s.voluntary_fraction - 0.467).abs() < 5e-4);
        assert!((s.seconds_per_blink.unwrap() - 1.6).abs() < 1e-12);
        assert_eq!(s.mean_duration_ms, 120.0);
    }

    #[test]
    fn csv_round_trip_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = scripted_session(&[500, 1500], &[1620]);
        rec.participant_id = "P07".into();
        rec.device = "sim".into();
        rec.frames[3].left_pupil_mm = 3.141_592_653_589_793;
        rec.frames[4].valid = false;
        let path = rec.write_to_dir(dir.path()).unwrap();
        let back = Recording::read(&path).unwrap();
        assert_eq!(back, rec);

        // gzip variants are read transparently
        let gz = dir.path().join("P08.csv.gz");
        let text = std::fs::read(&path).unwrap();
        let mut enc = flate2::write::GzEncoder::new(File::create(&gz).unwrap(), flate2::Compression::fast());
        enc.write_all(&text).unwrap();
        enc.finish().unwrap();
        let back_gz = Recording::read(&gz).unwrap();
        assert_eq!(back_gz.frames, rec.frames);
        assert!(back_gz.button_presses.is_empty());

        let all = read_dir(dir.path()).unwrap();
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn malformed_rows_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, format!("{RECORDING_MAGIC} participant=X\n{CSV_COLUMNS}\n1,2,3\n")).unwrap();
        assert!(matches!(Recording::read(&path), Err(DatasetError::Parse { line: 3, .. })));
    }
}

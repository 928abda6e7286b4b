//! Binary checkpoint format (little-endian). See `docs/checkpoint-format.md`.
//!
//! ```text
//! header : "BNET" | format_version u32 | epoch u32 | validation_loss f64 | record_count u32
//! record : tag u8 | rows u32 | cols u32 | payload f64 * n
//! ```
//!
//! Records appear in network order: optional normalizer, stem linear, stem
//! batch-norm, then per residual block a block header followed by its two
//! (linear, batch-norm) pairs and an optional projection, then the head.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::layers::{BatchNorm, Linear};
use super::model::{BlinkNet, ResBlock, SubBlock};
use super::NetError;
use crate::types::FEATURE_COUNT;
use crate::window::FeatureNormalizer;

pub const MAGIC: &[u8; 4] = b"BNET";
pub const FORMAT_VERSION: u32 = 1;

const TAG_LINEAR: u8 = 1;
const TAG_BATCH_NORM: u8 = 2;
const TAG_BLOCK: u8 = 3;
const TAG_NORMALIZER: u8 = 4;

/// A network plus the training bookkeeping it was saved with.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub net: BlinkNet,
    pub epoch: u32,
    pub validation_loss: f64,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        let net = &self.net;
        if let Some(n) = &net.normalizer {
            w.record(TAG_NORMALIZER, FEATURE_COUNT, 2, n.mean.iter().chain(&n.std));
        }
        write_sub(&mut w, &net.stem);
        for b in &net.blocks {
            w.record(TAG_BLOCK, b.inputs(), b.outputs(), std::iter::empty());
            write_sub(&mut w, &b.first);
            write_sub(&mut w, &b.second);
            if let Some(s) = &b.skip {
                write_linear(&mut w, s);
            }
        }
        write_linear(&mut w, &net.head);

        let mut out = Vec::with_capacity(w.buf.len() + 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.validation_loss.to_le_bytes());
        out.extend_from_slice(&w.records.to_le_bytes());
        out.extend_from_slice(&w.buf);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NetError::BadCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NetError::BadCheckpoint(format!("unsupported format version {version}")));
        }
        let epoch = r.u32()?;
        let validation_loss = r.f64()?;
        let record_count = r.u32()? as usize;

        let mut records = Vec::with_capacity(record_count);
        for _ in 0..record_count {
            records.push(r.record()?);
        }
        if r.pos != bytes.len() {
            return Err(NetError::BadCheckpoint("trailing bytes after last record".into()));
        }

        let mut it = records.into_iter().peekable();
        let normalizer = match it.peek() {
            Some(rec) if rec.tag == TAG_NORMALIZER => {
                let rec = it.next().expect("peeked");
                if rec.rows != FEATURE_COUNT || rec.cols != 2 {
                    return Err(NetError::BadCheckpoint("normalizer dims".into()));
                }
                let mut mean = [0.0; FEATURE_COUNT];
                let mut std = [0.0; FEATURE_COUNT];
                mean.copy_from_slice(&rec.payload[..FEATURE_COUNT]);
                std.copy_from_slice(&rec.payload[FEATURE_COUNT..]);
                Some(FeatureNormalizer { mean, std })
            }
            _ => None,
        };
        let stem = read_sub(&mut it)?;
        let mut blocks = Vec::new();
        while it.peek().is_some_and(|rec| rec.tag == TAG_BLOCK) {
            let header = it.next().expect("peeked");
            let first = read_sub(&mut it)?;
            let second = read_sub(&mut it)?;
            let skip = if header.rows != header.cols {
                Some(read_linear(&mut it)?)
            } else {
                None
            };
            let block = ResBlock::new(first, second, skip)?;
            if block.inputs() != header.rows || block.outputs() != header.cols {
                return Err(NetError::BadCheckpoint("block header disagrees with its layers".into()));
            }
            blocks.push(block);
        }
        let head = read_linear(&mut it)?;
        if it.next().is_some() {
            return Err(NetError::BadCheckpoint("unexpected record after head".into()));
        }
        Ok(Self {
            net: BlinkNet::from_parts(normalizer, stem, blocks, head)?,
            epoch,
            validation_loss,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
    records: u32,
}

impl Writer {
    fn record<'a>(&mut self, tag: u8, rows: usize, cols: usize, payload: impl IntoIterator<Item = &'a f64>) {
        self.records += 1;
        self.buf.push(tag);
        self.buf.extend_from_slice(&(rows as u32).to_le_bytes());
        self.buf.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in payload {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn write_linear(w: &mut Writer, l: &Linear) {
    // weight is (out, in) in standard layout, so iteration is row-major
    w.record(TAG_LINEAR, l.outputs(), l.inputs(), l.weight.iter().chain(l.bias.iter()));
}

fn write_batch_norm(w: &mut Writer, bn: &BatchNorm) {
    let tail = [bn.momentum, bn.eps];
    w.record(
        TAG_BATCH_NORM,
        bn.features(),
        4,
        bn.gamma
            .iter()
            .chain(bn.beta.iter())
            .chain(bn.running_mean.iter())
            .chain(bn.running_var.iter())
            .chain(tail.iter()),
    );
}

fn write_sub(w: &mut Writer, s: &SubBlock) {
    write_linear(w, &s.linear);
    write_batch_norm(w, &s.norm);
}

struct Record {
    tag: u8,
    rows: usize,
    cols: usize,
    payload: Vec<f64>,
}

fn payload_len(tag: u8, rows: usize, cols: usize) -> Result<usize, NetError> {
    let n = match tag {
        TAG_LINEAR => rows.checked_mul(cols).and_then(|n| n.checked_add(rows)),
        TAG_BATCH_NORM if cols == 4 => rows.checked_mul(4).and_then(|n| n.checked_add(2)),
        TAG_BLOCK => Some(0),
        TAG_NORMALIZER => rows.checked_mul(cols),
        TAG_BATCH_NORM => return Err(NetError::BadCheckpoint("batch-norm record must have 4 columns".into())),
        other => return Err(NetError::BadCheckpoint(format!("unknown record tag {other}"))),
    };
    n.ok_or_else(|| NetError::BadCheckpoint("record dimensions overflow".into()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NetError::BadCheckpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<Record, NetError> {
        let tag = self.take(1)?[0];
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = payload_len(tag, rows, cols)?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| NetError::BadCheckpoint("record too large".into()))?)?;
        let payload = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Record { tag, rows, cols, payload })
    }
}

type Records = std::iter::Peekable<std::vec::IntoIter<Record>>;

fn expect_tag(it: &mut Records, tag: u8, what: &str) -> Result<Record, NetError> {
    match it.next() {
        Some(rec) if rec.tag == tag => Ok(rec),
        Some(rec) => Err(NetError::BadCheckpoint(format!("expected {what}, found tag {}", rec.tag))),
        None => Err(NetError::BadCheckpoint(format!("missing {what}"))),
    }
}

fn read_linear(it: &mut Records) -> Result<Linear, NetError> {
    let rec = expect_tag(it, TAG_LINEAR, "linear layer")?;
    let split = rec.rows * rec.cols;
    let weight = Array2::from_shape_vec((rec.rows, rec.cols), rec.payload[..split].to_vec())
        .map_err(|e| NetError::BadCheckpoint(e.to_string()))?;
    let bias = Array1::from(rec.payload[split..].to_vec());
    Ok(Linear::from_parts(weight, bias))
}

fn read_batch_norm(it: &mut Records) -> Result<BatchNorm, NetError> {
    let rec = expect_tag(it, TAG_BATCH_NORM, "batch-norm layer")?;
    let f = rec.rows;
    let p = &rec.payload;
    let mut bn = BatchNorm::new(f);
    bn.gamma = Array1::from(p[..f].to_vec());
    bn.beta = Array1::from(p[f..2 * f].to_vec());
    bn.running_mean = Array1::from(p[2 * f..3 * f].to_vec());
    bn.running_var = Array1::from(p[3 * f..4 * f].to_vec());
    bn.momentum = p[4 * f];
    bn.eps = p[4 * f + 1];
    if bn.running_var.iter().any(|&v| !(v >= 0.0)) {
        return Err(NetError::BadCheckpoint("negative running variance".into()));
    }
    Ok(bn)
}

fn read_sub(it: &mut Records) -> Result<SubBlock, NetError> {
    let linear = read_linear(it)?;
    let norm = read_batch_norm(it)?;
    if linear.outputs() != norm.features() {
        return Err(NetError::BadCheckpoint("linear/batch-norm width mismatch".into()));
    }
    Ok(SubBlock::new(linear, norm))
}

//! Mini-batch training with Adam, per-epoch validation and best-checkpoint
//! tracking.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::checkpoint::ModelCheckpoint;
use super::layers::{cross_entropy_rows, Mode};
use super::model::{decide, BlinkNet};
use super::NetError;
use crate::types::{BlinkLabel, FEATURE_COUNT};
use crate::window::{clip_shifted_end, draw_shift, FeatureRow};

/// One labeled window: the frame index of the blink end inside a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowItem {
    pub stream: usize,
    pub end_idx: usize,
    pub label: BlinkLabel,
}

/// Labeled windows backed by whole frame streams, so that shifted windows
/// can be cut on demand.
#[derive(Debug, Clone, Default)]
pub struct WindowDataset {
    window_len: usize,
    streams: Vec<Vec<FeatureRow>>,
    items: Vec<WindowItem>,
}

impl WindowDataset {
    pub fn new(window_len: usize) -> Self {
        Self {
            window_len,
            streams: Vec::new(),
            items: Vec::new(),
        }
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn add_stream(&mut self, rows: Vec<FeatureRow>) -> usize {
        self.streams.push(rows);
        self.streams.len() - 1
    }

    pub fn streams(&self) -> &[Vec<FeatureRow>] {
        &self.streams
    }

    /// Adds an item if its stream holds a full window ending at `end_idx`.
    pub fn push(&mut self, stream: usize, end_idx: usize, label: BlinkLabel) -> bool {
        let ok = end_idx + 1 >= self.window_len && end_idx < self.streams[stream].len();
        if ok {
            self.items.push(WindowItem { stream, end_idx, label });
        }
        ok
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[WindowItem] {
        &self.items
    }

    pub fn labels(&self) -> Vec<BlinkLabel> {
        self.items.iter().map(|i| i.label).collect()
    }

    /// Window of item `i` with its end moved by `shift` (clipped).
    pub fn window(&self, i: usize, shift: i64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.window_len * FEATURE_COUNT);
        self.write_window(i, shift, &mut out);
        out
    }

    fn write_window(&self, i: usize, shift: i64, out: &mut Vec<f64>) {
        let item = self.items[i];
        let rows = &self.streams[item.stream];
        let end = clip_shifted_end(item.end_idx, shift, rows.len(), self.window_len);
        for row in &rows[end + 1 - self.window_len..=end] {
            out.extend_from_slice(row);
        }
    }

    /// Stack windows into a `(batch, window_len * 10)` matrix.
    pub fn batch(&self, indices: &[usize], shifts: Option<&[i64]>) -> Array2<f64> {
        let dim = self.window_len * FEATURE_COUNT;
        let mut flat = Vec::with_capacity(indices.len() * dim);
        for (k, &i) in indices.iter().enumerate() {
            self.write_window(i, shifts.map_or(0, |s| s[k]), &mut flat);
        }
        Array2::from_shape_vec((indices.len(), dim), flat).expect("rows have window length")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Jitter the window end by up to ±10 samples during training.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest validation loss seen.
    pub best: ModelCheckpoint,
    /// Network after the last epoch.
    pub last: BlinkNet,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// `(label, confidence)` per item, dataset order.
    pub predictions: Vec<(BlinkLabel, f64)>,
}

const EVAL_BATCH: usize = 64;

/// Eval-mode loss, accuracy and per-item predictions.
pub fn evaluate(net: &BlinkNet, data: &WindowDataset) -> Result<Evaluation, NetError> {
    if data.is_empty() {
        return Err(NetError::EmptySplit);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let x = data.batch(chunk, None);
        let logits = net.infer_logits(&x)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.items[i].label.index()).collect();
        loss += cross_entropy_rows(&logits, &labels).iter().sum::<f64>();
        let probs = super::layers::softmax_rows(&logits);
        for (row, &i) in probs.rows().into_iter().zip(chunk) {
            let pred = decide(row[0], row[1]);
            correct += (pred.0 == data.items[i].label) as usize;
            predictions.push(pred);
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        predictions,
    })
}

/// Train `net` on `train` and validate on `val` after every epoch.
/// `on_epoch` sees each epoch's record and the network after that epoch.
pub fn train(
    mut net: BlinkNet,
    train: &WindowDataset,
    val: &WindowDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &BlinkNet),
) -> Result<TrainOutcome, NetError> {
    if train.is_empty() || val.is_empty() {
        return Err(NetError::EmptySplit);
    }
    if train.window_len() * FEATURE_COUNT != net.input_dim() || val.window_len() != train.window_len() {
        return Err(NetError::ShapeMismatch {
            expected: (cfg.batch_size, net.input_dim()),
            got: (cfg.batch_size, train.window_len() * FEATURE_COUNT),
        });
    }
    let batch_size = cfg.batch_size.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs as usize);
    let mut best: Option<ModelCheckpoint> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(batch_size) {
            // batch-norm needs at least two rows in train mode
            if chunk.len() < 2 {
                continue;
            }
            let shifts: Option<Vec<i64>> = cfg
                .augment
                .then(|| chunk.iter().map(|_| draw_shift(&mut rng)).collect());
            let x = train.batch(chunk, shifts.as_deref());
            let labels: Vec<usize> = chunk.iter().map(|&i| train.items[i].label.index()).collect();
            net.forward(&x, Mode::Train)?;
            let loss = net.backward(&labels)?;
            adam.step(&mut net);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        net.clear_cache();

        let eval = evaluate(&net, val)?;
        let record = EpochRecord {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, val loss {:.5}, val acc {:.3}",
            record.train_loss,
            record.val_loss,
            record.val_accuracy
        );
        if best.as_ref().is_none_or(|b| record.val_loss < b.validation_loss) {
            best = Some(ModelCheckpoint {
                net: net.clone(),
                epoch,
                validation_loss: record.val_loss,
            });
        }
        on_epoch(&record, &net);
        history.push(record);
    }

    let best = best.unwrap_or_else(|| ModelCheckpoint {
        net: net.clone(),
        epoch: 0,
        validation_loss: f64::INFINITY,
    });
    Ok(TrainOutcome {
        best,
        last: net,
        history,
    })
}

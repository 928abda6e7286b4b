use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{cross_entropy_rows, softmax_rows, BatchNorm, Linear, Mish, Mode, ParamVisitor, Parameters};
use super::NetError;
use crate::types::{BlinkLabel, FEATURE_COUNT};
use crate::window::{FeatureNormalizer, WINDOW_LEN};

pub const NUM_CLASSES: usize = 2;

/// Layer widths of a [`BlinkNet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub stem_width: usize,
    /// Output width of each residual block, in order.
    pub block_widths: Vec<usize>,
}

impl NetConfig {
    /// Full-size classifier for a `window_len`-sample history:
    /// stem to 128, then 128,128,64 | 64,64,32 | 32,32,32.
    pub fn for_window(window_len: usize) -> Self {
        Self {
            input_dim: window_len * FEATURE_COUNT,
            stem_width: 128,
            block_widths: vec![128, 128, 64, 64, 64, 32, 32, 32, 32],
        }
    }

    pub fn window_len(&self) -> usize {
        self.input_dim / FEATURE_COUNT
    }

    /// Width feeding the classification head.
    pub fn head_inputs(&self) -> usize {
        self.block_widths.last().copied().unwrap_or(self.stem_width)
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::for_window(WINDOW_LEN)
    }
}

/// Linear -> batch-norm -> Mish.
#[derive(Debug, Clone)]
pub struct SubBlock {
    pub linear: Linear,
    pub norm: BatchNorm,
    act: Mish,
}

impl SubBlock {
    pub fn new(linear: Linear, norm: BatchNorm) -> Self {
        Self {
            linear,
            norm,
            act: Mish::default(),
        }
    }

    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(Linear::init(inputs, outputs, rng), BatchNorm::new(outputs))
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        Mish::infer(&self.norm.infer(&self.linear.infer(x)))
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>, NetError> {
        let z = self.linear.forward(x);
        let n = self.norm.forward(&z, mode)?;
        Ok(self.act.forward(n))
    }

    fn backward(&mut self, dy: &Array2<f64>, input_grad: bool) -> Result<Option<Array2<f64>>, NetError> {
        let dn = self.act.backward(dy)?;
        let dz = self.norm.backward(&dn)?;
        self.linear.backward(&dz, input_grad)
    }

    fn clear_cache(&mut self) {
        self.linear.clear_cache();
        self.norm.clear_cache();
        self.act.clear_cache();
    }
}

impl Parameters for SubBlock {
    fn visit_params(&mut self, f: &mut ParamVisitor<'_>) {
        self.linear.visit_params(f);
        self.norm.visit_params(f);
    }
}

/// Two sub-blocks with a skip connection around both: identity when the
/// widths match, a linear projection otherwise.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub first: SubBlock,
    pub second: SubBlock,
    pub skip: Option<Linear>,
}

impl ResBlock {
    pub fn new(first: SubBlock, second: SubBlock, skip: Option<Linear>) -> Result<Self, NetError> {
        let inputs = first.linear.inputs();
        let outputs = second.linear.outputs();
        let consistent = first.linear.outputs() == second.linear.inputs()
            && match &skip {
                None => inputs == outputs,
                Some(s) => inputs != outputs && s.inputs() == inputs && s.outputs() == outputs,
            };
        if !consistent {
            return Err(NetError::InconsistentArchitecture(format!(
                "block {inputs}->{outputs} with {} skip",
                if skip.is_some() { "projection" } else { "identity" }
            )));
        }
        Ok(Self { first, second, skip })
    }

    fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let first = SubBlock::init(inputs, outputs, rng);
        let second = SubBlock::init(outputs, outputs, rng);
        let skip = (inputs != outputs).then(|| Linear::init(inputs, outputs, rng));
        Self { first, second, skip }
    }

    pub fn inputs(&self) -> usize {
        self.first.linear.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.second.linear.outputs()
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let h = self.second.infer(&self.first.infer(x));
        match &self.skip {
            Some(s) => h + s.infer(x),
            None => h + x,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>, NetError> {
        let h1 = self.first.forward(x, mode)?;
        let h2 = self.second.forward(&h1, mode)?;
        Ok(match &mut self.skip {
            Some(s) => h2 + s.forward(x),
            None => h2 + x,
        })
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        let dh1 = self.second.backward(dy, true)?.expect("input grad requested");
        let dx = self.first.backward(&dh1, true)?.expect("input grad requested");
        let dskip = match &mut self.skip {
            Some(s) => s.backward(dy, true)?.expect("input grad requested"),
            None => dy.clone(),
        };
        Ok(dx + dskip)
    }

    fn clear_cache(&mut self) {
        self.first.clear_cache();
        self.second.clear_cache();
        if let Some(s) = &mut self.skip {
            s.clear_cache();
        }
    }
}

impl Parameters for ResBlock {
    fn visit_params(&mut self, f: &mut ParamVisitor<'_>) {
        self.first.visit_params(f);
        self.second.visit_params(f);
        if let Some(s) = &mut self.skip {
            s.visit_params(f);
        }
    }
}

#[derive(Debug, Clone)]
struct OutputCache {
    logits: Array2<f64>,
    probs: Array2<f64>,
}

/// The blink-intent classifier: stem, residual blocks, linear head and
/// softmax. Output column 0 is Voluntary, column 1 Involuntary.
#[derive(Debug, Clone)]
pub struct BlinkNet {
    pub normalizer: Option<FeatureNormalizer>,
    pub stem: SubBlock,
    pub blocks: Vec<ResBlock>,
    pub head: Linear,
    cache: Option<OutputCache>,
}

impl BlinkNet {
    /// Freshly initialized network; deterministic in `seed`.
    pub fn new(config: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = SubBlock::init(config.input_dim, config.stem_width, &mut rng);
        let mut width = config.stem_width;
        let mut blocks = Vec::with_capacity(config.block_widths.len());
        for &w in &config.block_widths {
            blocks.push(ResBlock::init(width, w, &mut rng));
            width = w;
        }
        let head = Linear::init(width, NUM_CLASSES, &mut rng);
        Self {
            normalizer: None,
            stem,
            blocks,
            head,
            cache: None,
        }
    }

    /// Assemble from parts, checking that the widths chain.
    pub fn from_parts(
        normalizer: Option<FeatureNormalizer>,
        stem: SubBlock,
        blocks: Vec<ResBlock>,
        head: Linear,
    ) -> Result<Self, NetError> {
        if stem.linear.outputs() != stem.norm.features() {
            return Err(NetError::InconsistentArchitecture("stem width".into()));
        }
        let mut width = stem.linear.outputs();
        for (i, b) in blocks.iter().enumerate() {
            if b.inputs() != width || b.second.norm.features() != b.outputs() || b.first.norm.features() != b.outputs() {
                return Err(NetError::InconsistentArchitecture(format!("block {i}")));
            }
            width = b.outputs();
        }
        if head.inputs() != width || head.outputs() != NUM_CLASSES {
            return Err(NetError::InconsistentArchitecture("head".into()));
        }
        if stem.linear.inputs() % FEATURE_COUNT != 0 {
            return Err(NetError::InconsistentArchitecture("input is not a whole number of frames".into()));
        }
        Ok(Self {
            normalizer,
            stem,
            blocks,
            head,
            cache: None,
        })
    }

    pub fn config(&self) -> NetConfig {
        NetConfig {
            input_dim: self.input_dim(),
            stem_width: self.stem.linear.outputs(),
            block_widths: self.blocks.iter().map(ResBlock::outputs).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.stem.linear.inputs()
    }

    pub fn window_len(&self) -> usize {
        self.input_dim() / FEATURE_COUNT
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<(), NetError> {
        if x.ncols() != self.input_dim() {
            return Err(NetError::ShapeMismatch {
                expected: (x.nrows(), self.input_dim()),
                got: x.dim(),
            });
        }
        Ok(())
    }

    fn prepared<'a>(&self, x: &'a Array2<f64>) -> std::borrow::Cow<'a, Array2<f64>> {
        match &self.normalizer {
            None => std::borrow::Cow::Borrowed(x),
            Some(n) => {
                let mut owned = x.as_standard_layout().into_owned();
                n.apply(owned.as_slice_mut().expect("standard layout"));
                std::borrow::Cow::Owned(owned)
            }
        }
    }

    /// Head logits in eval mode; read-only, safe for concurrent callers.
    pub fn infer_logits(&self, x: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        self.check_input(x)?;
        let x = self.prepared(x);
        let mut h = self.stem.infer(&x);
        for b in &self.blocks {
            h = b.infer(&h);
        }
        Ok(self.head.infer(&h))
    }

    /// Eval-mode class probabilities.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        Ok(softmax_rows(&self.infer_logits(x)?))
    }

    /// Class probabilities, caching activations for [`BlinkNet::backward`].
    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>, NetError> {
        self.check_input(x)?;
        if mode == Mode::Train && x.nrows() < 2 {
            return Err(NetError::BatchTooSmallForTrainMode { batch: x.nrows() });
        }
        let x = self.prepared(x);
        let mut h = self.stem.forward(&x, mode)?;
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        let logits = self.head.forward(&h);
        let probs = softmax_rows(&logits);
        self.cache = Some(OutputCache {
            logits,
            probs: probs.clone(),
        });
        Ok(probs)
    }

    /// Mean cross-entropy of the last forward pass against `labels`.
    pub fn loss(&self, labels: &[usize]) -> Result<f64, NetError> {
        let cache = self.cache.as_ref().ok_or(NetError::NoForwardCache)?;
        check_labels(labels, cache.logits.nrows())?;
        let per_row = cross_entropy_rows(&cache.logits, labels);
        Ok(per_row.iter().sum::<f64>() / per_row.len() as f64)
    }

    /// Gradients of the mean cross-entropy for the cached forward pass.
    /// Returns the loss.
    pub fn backward(&mut self, labels: &[usize]) -> Result<f64, NetError> {
        let loss = self.loss(labels)?;
        let cache = self.cache.as_ref().expect("checked by loss");
        let n = labels.len() as f64;
        let mut dlogits = cache.probs.clone();
        for (mut row, &y) in dlogits.rows_mut().into_iter().zip(labels) {
            row[y] -= 1.0;
            row /= n;
        }
        let mut dh = self.head.backward(&dlogits, true)?.expect("input grad requested");
        for b in self.blocks.iter_mut().rev() {
            dh = b.backward(&dh)?;
        }
        self.stem.backward(&dh, false)?;
        Ok(loss)
    }

    /// Drop cached activations (e.g. before cloning a snapshot).
    pub fn clear_cache(&mut self) {
        self.cache = None;
        self.stem.clear_cache();
        for b in &mut self.blocks {
            b.clear_cache();
        }
        self.head.clear_cache();
    }

    /// Argmax label and its probability for a single window. Ties go to
    /// Involuntary.
    pub fn classify(&self, window: &[f64]) -> Result<(BlinkLabel, f64), NetError> {
        let x = Array2::from_shape_vec((1, window.len()), window.to_vec()).map_err(|_| NetError::ShapeMismatch {
            expected: (1, self.input_dim()),
            got: (1, window.len()),
        })?;
        let p = self.predict(&x)?;
        Ok(decide(p[[0, 0]], p[[0, 1]]))
    }
}

/// Decision rule on a (voluntary, involuntary) probability pair.
pub fn decide(p_voluntary: f64, p_involuntary: f64) -> (BlinkLabel, f64) {
    if p_voluntary > p_involuntary {
        (BlinkLabel::Voluntary, p_voluntary)
    } else {
        (BlinkLabel::Involuntary, p_involuntary)
    }
}

fn check_labels(labels: &[usize], rows: usize) -> Result<(), NetError> {
    if labels.len() != rows {
        return Err(NetError::ShapeMismatch {
            expected: (rows, 1),
            got: (labels.len(), 1),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= NUM_CLASSES) {
        return Err(NetError::BadLabel(bad));
    }
    Ok(())
}

impl Parameters for BlinkNet {
    fn visit_params(&mut self, f: &mut ParamVisitor<'_>) {
        self.stem.visit_params(f);
        for b in &mut self.blocks {
            b.visit_params(f);
        }
        self.head.visit_params(f);
    }
}

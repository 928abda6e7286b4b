//! Building blocks: linear, batch-norm and Mish layers with exact backward
//! passes. Activations are `(batch, features)` matrices.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use super::NetError;

/// Forward-pass mode. Batch-norm uses batch statistics in `Train` and the
/// running estimates in `Eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x * tanh(softplus(x))`.
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

pub fn mish_derivative(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// Callback receiving each parameter tensor and its gradient.
pub type ParamVisitor<'a> = dyn FnMut(&mut [f64], &[f64]) + 'a;

/// Anything holding trainable parameters.
pub trait Parameters {
    /// Visit every (parameter, gradient) pair in a fixed order.
    fn visit_params(&mut self, f: &mut ParamVisitor<'_>);

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }

    fn flat_params(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p, _| out.extend_from_slice(p));
        out
    }

    fn flat_grads(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, g| out.extend_from_slice(g));
        out
    }

    fn set_flat_params(&mut self, values: &[f64]) {
        let mut offset = 0;
        self.visit_params(&mut |p, _| {
            p.copy_from_slice(&values[offset..offset + p.len()]);
            offset += p.len();
        });
    }
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are stored in standard layout")
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// `(out, in)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    grad_weight: Array2<f64>,
    grad_bias: Array1<f64>,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self::from_parts(Array2::zeros((outputs, inputs)), Array1::zeros(outputs))
    }

    /// Uniform init in `±sqrt(1 / fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let a = (1.0 / inputs as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-a..a));
        let bias = Array1::from_shape_simple_fn(outputs, || rng.random_range(-a..a));
        Self::from_parts(weight, bias)
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        let (o, i) = weight.dim();
        assert_eq!(bias.len(), o, "bias length must match output dimension");
        Self {
            grad_weight: Array2::zeros((o, i)),
            grad_bias: Array1::zeros(o),
            weight: weight.as_standard_layout().into_owned(),
            bias,
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    /// Stores parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, dy: &Array2<f64>, input_grad: bool) -> Result<Option<Array2<f64>>, NetError> {
        let x = self.input.as_ref().ok_or(NetError::NoForwardCache)?;
        if dy.nrows() != x.nrows() || dy.ncols() != self.outputs() {
            return Err(NetError::ShapeMismatch {
                expected: (x.nrows(), self.outputs()),
                got: dy.dim(),
            });
        }
        self.grad_weight = dy.t().dot(x);
        self.grad_bias = dy.sum_axis(Axis(0));
        Ok(input_grad.then(|| dy.dot(&self.weight)))
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

impl Parameters for Linear {
    fn visit_params(&mut self, f: &mut ParamVisitor<'_>) {
        f(slice_mut(&mut self.weight), self.grad_weight.as_slice().unwrap());
        f(self.bias.as_slice_mut().unwrap(), self.grad_bias.as_slice().unwrap());
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    grad_gamma: Array1<f64>,
    grad_beta: Array1<f64>,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            grad_gamma: Array1::zeros(features),
            grad_beta: Array1::zeros(features),
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    fn eval_stats(&self) -> Array1<f64> {
        self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt())
    }

    fn affine(&self, xhat: &Array2<f64>) -> Array2<f64> {
        xhat * &self.gamma + &self.beta
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let xhat = (x - &self.running_mean) * &self.eval_stats();
        self.affine(&xhat)
    }

    /// Normalized activations before the affine transform, with the
    /// inverse standard deviation used.
    pub fn normalize(&self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, Array1<f64>), NetError> {
        match mode {
            Mode::Eval => {
                let inv_std = self.eval_stats();
                Ok(((x - &self.running_mean) * &inv_std, inv_std))
            }
            Mode::Train => {
                let n = x.nrows();
                if n < 2 {
                    return Err(NetError::BatchTooSmallForTrainMode { batch: n });
                }
                let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
                let centered = x - &mean;
                let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n as f64;
                let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
                Ok((centered * &inv_std, inv_std))
            }
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>, NetError> {
        let (xhat, inv_std) = self.normalize(x, mode)?;
        if mode == Mode::Train {
            let n = x.nrows() as f64;
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let biased = inv_std.mapv(|s| 1.0 / (s * s) - self.eps);
            let unbiased = biased * (n / (n - 1.0));
            let m = self.momentum;
            self.running_mean = &self.running_mean * (1.0 - m) + &(mean * m);
            self.running_var = &self.running_var * (1.0 - m) + &(unbiased * m);
        }
        let y = self.affine(&xhat);
        self.cache = Some(BnCache { xhat, inv_std, mode });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        let cache = self.cache.as_ref().ok_or(NetError::NoForwardCache)?;
        if dy.dim() != cache.xhat.dim() {
            return Err(NetError::ShapeMismatch {
                expected: cache.xhat.dim(),
                got: dy.dim(),
            });
        }
        self.grad_gamma = (dy * &cache.xhat).sum_axis(Axis(0));
        self.grad_beta = dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let dx = match cache.mode {
            Mode::Eval => dxhat * &cache.inv_std,
            Mode::Train => {
                let n = dy.nrows() as f64;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                let mut dx = dxhat * n - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
                dx *= &(&cache.inv_std / n);
                dx
            }
        };
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Parameters for BatchNorm {
    fn visit_params(&mut self, f: &mut ParamVisitor<'_>) {
        f(self.gamma.as_slice_mut().unwrap(), self.grad_gamma.as_slice().unwrap());
        f(self.beta.as_slice_mut().unwrap(), self.grad_beta.as_slice().unwrap());
    }
}

#[derive(Debug, Clone, Default)]
pub struct Mish {
    input: Option<Array2<f64>>,
}

impl Mish {
    pub fn infer(x: &Array2<f64>) -> Array2<f64> {
        x.mapv(mish)
    }

    pub fn forward(&mut self, x: Array2<f64>) -> Array2<f64> {
        let y = Self::infer(&x);
        self.input = Some(x);
        y
    }

    pub fn backward(&self, dy: &Array2<f64>) -> Result<Array2<f64>, NetError> {
        let x = self.input.as_ref().ok_or(NetError::NoForwardCache)?;
        let mut dx = dy.clone();
        Zip::from(&mut dx).and(x).for_each(|d, &xv| *d *= mish_derivative(xv));
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Per-row `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy_rows(logits: &Array2<f64>, labels: &[usize]) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .collect()
}

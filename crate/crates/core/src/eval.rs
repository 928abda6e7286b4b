//! Classification metrics and the coin-flip baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::BlinkLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
}

/// Counts with Voluntary as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn from_predictions(predictions: &[BlinkLabel], labels: &[BlinkLabel]) -> Result<Self, EvalError> {
        if predictions.len() != labels.len() {
            return Err(EvalError::LengthMismatch {
                predictions: predictions.len(),
                labels: labels.len(),
            });
        }
        let mut cm = Self::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            cm.record(p, y);
        }
        Ok(cm)
    }

    pub fn record(&mut self, predicted: BlinkLabel, actual: BlinkLabel) {
        use BlinkLabel::*;
        match (predicted, actual) {
            (Voluntary, Voluntary) => self.tp += 1,
            (Voluntary, Involuntary) => self.fp += 1,
            (Involuntary, Voluntary) => self.fn_ += 1,
            (Involuntary, Involuntary) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with Involuntary as the positive class.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Set when a denominator was zero and the metric was reported as 0.
    pub recall_undefined: bool,
    pub precision_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let n = cm.total();
    if n == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let (recall, recall_undefined) = ratio(cm.tp, cm.tp + cm.fn_);
    let (precision, precision_undefined) = ratio(cm.tp, cm.tp + cm.fp);
    let (f1, f1_undefined) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    Ok(Metrics {
        accuracy: (cm.tp + cm.tn) as f64 / n as f64,
        recall,
        precision,
        f1,
        recall_undefined,
        precision_undefined,
        f1_undefined,
    })
}

/// Unweighted mean of the per-class metrics for both classes.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let a = metrics(cm)?;
    let b = metrics(&cm.swapped())?;
    Ok(Metrics {
        accuracy: a.accuracy,
        recall: (a.recall + b.recall) / 2.0,
        precision: (a.precision + b.precision) / 2.0,
        f1: (a.f1 + b.f1) / 2.0,
        recall_undefined: a.recall_undefined || b.recall_undefined,
        precision_undefined: a.precision_undefined || b.precision_undefined,
        f1_undefined: a.f1_undefined || b.f1_undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub trials: usize,
    pub n: usize,
    /// Monte-Carlo means over trials.
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Sample standard deviation of per-trial accuracy.
    pub accuracy_std: f64,
    /// Closed form: a fair coin is right with probability 1/2 per sample.
    pub expected_accuracy: f64,
    /// Standard deviation of a single trial's accuracy, 0.5 / sqrt(n).
    pub expected_trial_std: f64,
}

impl Baseline {
    /// Standard error of the Monte-Carlo accuracy mean.
    pub fn standard_error(&self) -> f64 {
        self.expected_trial_std / (self.trials as f64).sqrt()
    }
}

/// Coin-flip classifier scored against `labels` over `trials` independent runs.
pub fn random_baseline(labels: &[BlinkLabel], seed: u64, trials: usize) -> Baseline {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut acc_sum, mut acc_sq, mut rec, mut prec, mut f1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..trials {
        let mut cm = ConfusionMatrix::default();
        for &y in labels {
            let guess = if rng.random::<bool>() {
                BlinkLabel::Voluntary
            } else {
                BlinkLabel::Involuntary
            };
            cm.record(guess, y);
        }
        if let Ok(m) = metrics(&cm) {
            acc_sum += m.accuracy;
            acc_sq += m.accuracy * m.accuracy;
            rec += m.recall;
            prec += m.precision;
            f1 += m.f1;
        }
    }
    let t = trials.max(1) as f64;
    let mean = acc_sum / t;
    let var = if trials > 1 {
        ((acc_sq - t * mean * mean) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    Baseline {
        trials,
        n,
        accuracy: mean,
        recall: rec / t,
        precision: prec / t,
        f1: f1 / t,
        accuracy_std: var.sqrt(),
        expected_accuracy: 0.5,
        expected_trial_std: if n == 0 { 0.0 } else { 0.5 / (n as f64).sqrt() },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: u64,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
    #[serde(rename = "macro")]
    pub macro_avg: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Baseline>,
}

impl EvalReport {
    pub fn new(cm: ConfusionMatrix, baseline: Option<Baseline>) -> Result<Self, EvalError> {
        let m = metrics(&cm)?;
        Ok(Self {
            n: cm.total(),
            accuracy: m.accuracy,
            recall: m.recall,
            precision: m.precision,
            f1: m.f1,
            confusion: cm,
            macro_avg: macro_metrics(&cm)?,
            baseline,
        })
    }

    /// Plain-text results table.
    pub fn table(&self, model_name: &str) -> String {
        let mut s = format!(
            "{:<16} {:>8} {:>8} {:>9} {:>8}\n",
            "Method", "Accuracy", "Recall", "Precision", "F1"
        );
        if let Some(b) = &self.baseline {
            s.push_str(&format!(
                "{:<16} {:>8.2} {:>8.2} {:>9.2} {:>8.2}\n",
                "Random", b.accuracy, b.recall, b.precision, b.f1
            ));
        }
        s.push_str(&format!(
            "{:<16} {:>8.2} {:>8.2} {:>9.2} {:>8.2}\n",
            model_name, self.accuracy, self.recall, self.precision, self.f1
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_matrix_gives_point_seven_everywhere() {
        let m = metrics(&ConfusionMatrix::new(7, 3, 3, 7)).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_classifier() {
        let m = metrics(&ConfusionMatrix::new(12, 0, 0, 0)).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert_eq!(metrics(&ConfusionMatrix::default()), Err(EvalError::EmptyMatrix));
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let m = metrics(&ConfusionMatrix::new(0, 0, 0, 5)).unwrap();
        assert!(m.recall_undefined && m.precision_undefined && m.f1_undefined);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn reported_operating_point_fixture() {
        let m = metrics(&ConfusionMatrix::new(70, 33, 30, 130)).unwrap();
        assert!((m.accuracy - 0.76).abs() < 5e-3, "{}", m.accuracy);
        assert!((m.recall - 0.70).abs() < 5e-3);
        assert!((m.precision - 0.68).abs() < 5e-3);
        // harmonic mean of the reported precision and recall
        let hm = 2.0 * 0.68 * 0.70 / (0.68 + 0.70);
        assert!((m.f1 - hm).abs() < 5e-3);
    }

    #[test]
    fn single_sample_baseline_is_zero_or_one_per_trial() {
        let b = random_baseline(&[BlinkLabel::Voluntary], 3, 1);
        assert!(b.accuracy == 0.0 || b.accuracy == 1.0);
    }

    #[test]
    fn balanced_baseline_matches_binomial_expectation() {
        let labels: Vec<_> = (0..50).map(|i| BlinkLabel::from_index(i % 2).unwrap()).collect();
        let b = random_baseline(&labels, 11, 20_000);
        assert!((b.accuracy - b.expected_accuracy).abs() < 3.0 * b.standard_error());
        assert!((b.accuracy_std - b.expected_trial_std).abs() < 0.05 * b.expected_trial_std);
    }

    #[test]
    fn report_json_has_expected_keys() {
        let r = EvalReport::new(ConfusionMatrix::new(1, 2, 3, 4), None).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for k in ["accuracy", "recall", "precision", "f1", "confusion", "n"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["confusion"]["fn"], 3);
    }

    proptest! {
        #[test]
        fn swapping_classes_keeps_accuracy(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            let cm = ConfusionMatrix::new(tp, fp, fn_, tn);
            prop_assume!(cm.total() > 0);
            let a = metrics(&cm).unwrap();
            let b = metrics(&cm.swapped()).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert_eq!(cm.swapped().swapped(), cm);
        }

        #[test]
        fn f1_lies_between_precision_and_recall(tp in 1u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            let m = metrics(&ConfusionMatrix::new(tp, fp, fn_, tn)).unwrap();
            let (lo, hi) = (m.precision.min(m.recall), m.precision.max(m.recall));
            prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

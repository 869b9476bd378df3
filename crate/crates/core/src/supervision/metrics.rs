use std::fmt;

use crate::error::{Error, Result};
use crate::plane::Plane;

/// Confusion counts with the border pixel as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_masks(pred: &[bool], truth: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// `num / den`, or 1 when both the quantity and its complement side are
/// empty, else 0.
fn ratio(num: u64, den: u64, other_side_empty: bool) -> f64 {
    if den == 0 {
        if other_side_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub dice: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub counts: Confusion,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn from_confusion(c: Confusion, threshold: f64) -> Self {
        let pred_pos = c.tp + c.fp;
        let true_pos = c.tp + c.fn_;
        let pred_neg = c.tn + c.fn_;
        let dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, true);
        let precision = ratio(c.tp, pred_pos, true_pos == 0);
        let recall = ratio(c.tp, true_pos, pred_pos == 0);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            dice,
            f1,
            sensitivity: recall,
            specificity: ratio(c.tn, c.tn + c.fp, pred_neg == 0),
            counts: c,
            threshold,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "DICE {:.4}  F1 {:.4}  SE {:.4}  SP {:.4}",
            self.dice, self.f1, self.sensitivity, self.specificity
        )
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Binarizes `sigmoid(logits) > threshold` and scores it against `truth`.
pub fn evaluate(logits: &[f32], truth: &Plane, threshold: f64) -> Result<MetricsReport> {
    if logits.len() != truth.data().len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} logits for a {:?} mask", logits.len(), truth.dims()),
        ));
    }
    let pred: Vec<bool> = logits.iter().map(|&z| sigmoid(z as f64) > threshold).collect();
    let c = Confusion::from_masks(&pred, &truth.to_binary());
    Ok(MetricsReport::from_confusion(c, threshold))
}

/// Aggregates per-image reports both by pooling pixel counts and by
/// averaging the per-image metrics.
#[derive(Clone, Debug, Default)]
pub struct MetricsSummary {
    pub per_image: Vec<(String, MetricsReport)>,
    pooled: Confusion,
    threshold: f64,
}

/// Unweighted mean of per-image metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanMetrics {
    pub dice: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl MetricsSummary {
    pub fn push(&mut self, id: impl Into<String>, report: MetricsReport) {
        self.pooled.merge(&report.counts);
        self.threshold = report.threshold;
        self.per_image.push((id.into(), report));
    }

    pub fn len(&self) -> usize {
        self.per_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_image.is_empty()
    }

    pub fn pooled(&self) -> MetricsReport {
        MetricsReport::from_confusion(self.pooled, self.threshold)
    }

    pub fn mean(&self) -> MeanMetrics {
        let n = self.per_image.len().max(1) as f64;
        let sum = |f: fn(&MetricsReport) -> f64| self.per_image.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        MeanMetrics {
            dice: sum(|r| r.dice),
            f1: sum(|r| r.f1),
            sensitivity: sum(|r| r.sensitivity),
            specificity: sum(|r| r.specificity),
        }
    }
}

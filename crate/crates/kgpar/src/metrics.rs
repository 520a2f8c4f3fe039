//! Multi-label recognition metrics: label-based mean accuracy plus
//! instance-based accuracy, precision, recall, and F1.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scores are {score_shape:?} but labels are {label_rows} x {label_cols}")]
    ShapeMismatch {
        score_shape: Vec<usize>,
        label_rows: usize,
        label_cols: usize,
    },
    #[error("labels must be binary; found {0}")]
    NonBinaryLabel(u8),
    #[error("empty input")]
    Empty,
}

/// Per-attribute confusion counts at the decision threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Label-based mean accuracy: mean over attributes of (TPR + TNR) / 2.
    pub ma: f64,
    /// Instance-based Jaccard accuracy.
    pub acc: f64,
    /// Instance-based precision (images with no predicted positives skipped).
    pub prec: f64,
    /// Instance-based recall (images with no true positives skipped).
    pub rec: f64,
    /// Harmonic mean of prec and rec.
    pub f1: f64,
    pub per_attribute: Vec<Confusion>,
    pub threshold: f64,
    /// Images skipped from precision because they predicted nothing.
    pub skipped_empty_predictions: usize,
    /// Images skipped from recall because they have no positive labels.
    pub skipped_empty_labels: usize,
}

/// Score matrix against binary labels at a decision threshold (default 0.5);
/// predictions are `score > threshold`.
pub fn compute_metrics(
    scores: &Tensor,
    labels: &[Vec<u8>],
    threshold: f64,
) -> Result<MetricsReport, MetricsError> {
    let n = labels.len();
    let m = labels.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(MetricsError::Empty);
    }
    if scores.shape() != [n, m] || labels.iter().any(|row| row.len() != m) {
        return Err(MetricsError::ShapeMismatch {
            score_shape: scores.shape().to_vec(),
            label_rows: n,
            label_cols: m,
        });
    }
    if let Some(v) = labels.iter().flatten().find(|v| **v > 1) {
        return Err(MetricsError::NonBinaryLabel(*v));
    }

    let mut per_attribute = vec![
        Confusion {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0
        };
        m
    ];
    let mut acc_sum = 0.0;
    let mut prec_sum = 0.0;
    let mut prec_count = 0usize;
    let mut rec_sum = 0.0;
    let mut rec_count = 0usize;

    for (i, row) in labels.iter().enumerate() {
        let mut intersection = 0u64;
        let mut predicted = 0u64;
        let mut actual = 0u64;
        for (j, y) in row.iter().enumerate() {
            let pred = scores.get(i, j) > threshold;
            let truth = *y == 1;
            let c = &mut per_attribute[j];
            match (truth, pred) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
            if truth {
                actual += 1;
            }
            if pred {
                predicted += 1;
            }
            if truth && pred {
                intersection += 1;
            }
        }
        let union = actual + predicted - intersection;
        acc_sum += if union == 0 {
            1.0 // nothing true, nothing predicted: exact match
        } else {
            intersection as f64 / union as f64
        };
        if predicted > 0 {
            prec_sum += intersection as f64 / predicted as f64;
            prec_count += 1;
        }
        if actual > 0 {
            rec_sum += intersection as f64 / actual as f64;
            rec_count += 1;
        }
    }

    let mut ma_sum = 0.0;
    for (j, c) in per_attribute.iter().enumerate() {
        let tpr = if c.tp + c.fn_ > 0 {
            c.tp as f64 / (c.tp + c.fn_) as f64
        } else {
            warn!("attribute {j} has no positives; TPR counted as 0");
            0.0
        };
        let tnr = if c.tn + c.fp > 0 {
            c.tn as f64 / (c.tn + c.fp) as f64
        } else {
            warn!("attribute {j} has no negatives; TNR counted as 0");
            0.0
        };
        ma_sum += (tpr + tnr) / 2.0;
    }

    let prec = if prec_count > 0 {
        prec_sum / prec_count as f64
    } else {
        0.0
    };
    let rec = if rec_count > 0 {
        rec_sum / rec_count as f64
    } else {
        0.0
    };
    let f1 = if prec + rec > 0.0 {
        2.0 * prec * rec / (prec + rec)
    } else {
        0.0
    };
    Ok(MetricsReport {
        ma: ma_sum / m as f64,
        acc: acc_sum / n as f64,
        prec,
        rec,
        f1,
        per_attribute,
        threshold,
        skipped_empty_predictions: n - prec_count,
        skipped_empty_labels: n - rec_count,
    })
}

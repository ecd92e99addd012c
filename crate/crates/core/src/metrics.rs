//! Calibration and ranking metrics for predictive distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-width confidence bins on `[0, 1]` used by ECE and MCE.
pub const CALIBRATION_BINS: usize = 10;

/// Predictive class probabilities (row-major `M x O`) and true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch {
    probs: Vec<f64>,
    num_classes: usize,
    labels: Vec<usize>,
}

impl EvalBatch {
    pub fn new(probs: Vec<f64>, num_classes: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("empty evaluation batch"));
        }
        if num_classes == 0 || probs.len() != labels.len() * num_classes {
            return Err(Error::dims(
                "probability matrix",
                labels.len() * num_classes,
                probs.len(),
            ));
        }
        for (m, row) in probs.chunks(num_classes).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p)) {
                return Err(Error::invalid(format!("row {m} is not a probability vector (sum {s})")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(EvalBatch {
            probs,
            num_classes,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let o = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != o) {
            return Err(Error::invalid("ragged probability rows"));
        }
        Self::new(rows.concat(), o, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.probs[m * self.num_classes..(m + 1) * self.num_classes]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub confidence: f64,
    pub accuracy: f64,
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
    pub mce: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best
}

fn bin_of(conf: f64) -> usize {
    // bins are (b/10, (b+1)/10]; a confidence of exactly 0 joins the first bin
    let b = (conf * CALIBRATION_BINS as f64).ceil() as usize;
    b.clamp(1, CALIBRATION_BINS) - 1
}

pub fn classification_metrics(batch: &EvalBatch) -> ClassificationMetrics {
    let m = batch.len() as f64;
    let mut conf_sum = 0.0;
    let mut correct_sum = 0.0;
    let mut nll = 0.0;
    let mut brier = 0.0;
    let mut bins = [(0usize, 0.0f64, 0.0f64); CALIBRATION_BINS];
    for (i, &label) in batch.labels.iter().enumerate() {
        let row = batch.row(i);
        let pred = argmax(row);
        let conf = row[pred];
        let correct = if pred == label { 1.0 } else { 0.0 };
        conf_sum += conf;
        correct_sum += correct;
        nll -= row[label].ln();
        brier += row
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let t = if k == label { 1.0 } else { 0.0 };
                (p - t) * (p - t)
            })
            .sum::<f64>();
        let bin = &mut bins[bin_of(conf)];
        bin.0 += 1;
        bin.1 += correct;
        bin.2 += conf;
    }
    let mut ece = 0.0;
    let mut mce: f64 = 0.0;
    for &(count, acc, conf) in bins.iter().filter(|b| b.0 > 0) {
        let gap = (acc - conf).abs() / count as f64;
        ece += gap * count as f64 / m;
        mce = mce.max(gap);
    }
    ClassificationMetrics {
        confidence: conf_sum / m,
        accuracy: correct_sum / m,
        nll: nll / m,
        brier: brier / m,
        ece,
        mce,
    }
}

/// Shannon entropy of a probability vector, in nats.
pub fn predictive_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Mann-Whitney estimate of `P(pos > neg) + P(pos == neg) / 2`.
pub fn auroc(scores_negative: &[f64], scores_positive: &[f64]) -> Result<f64> {
    if scores_negative.is_empty() || scores_positive.is_empty() {
        return Err(Error::invalid("auroc needs scores on both sides"));
    }
    if scores_negative.iter().chain(scores_positive).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auroc scores".into()));
    }
    let mut all: Vec<(f64, bool)> = scores_negative
        .iter()
        .map(|&s| (s, false))
        .chain(scores_positive.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // midranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let n_pos = scores_positive.len() as f64;
    let n_neg = scores_negative.len() as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Root mean squared error between predictive means and targets.
pub fn rmse(means: &[f64], targets: &[f64]) -> Result<f64> {
    if means.len() != targets.len() || means.is_empty() {
        return Err(Error::dims("rmse inputs", targets.len(), means.len()));
    }
    let sq: f64 = means.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / means.len() as f64).sqrt())
}

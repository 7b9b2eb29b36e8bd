//! Evaluation metrics and fixed-bin histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(TPR + TNR) / 2` with `prob ≥ threshold` predicted positive. A patch with
/// a single class present scores the rate of that class alone.
pub fn balanced_accuracy(probs: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::dim("balanced_accuracy", format!("{} predictions vs {} labels", probs.len(), labels.len())));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        let hit = p >= threshold;
        if y == 1 {
            pos += 1;
            tp += usize::from(hit);
        } else {
            neg += 1;
            tn += usize::from(!hit);
        }
    }
    let tpr = (pos > 0).then(|| tp as f64 / pos as f64);
    let tnr = (neg > 0).then(|| tn as f64 / neg as f64);
    Ok(match (tpr, tnr) {
        (Some(a), Some(b)) => (a + b) / 2.0,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => unreachable!("nonempty input has a class"),
    })
}

/// Root mean squared difference over all `n×3` entries. With `unoriented`,
/// each predicted row is flipped when it points away from its target.
pub fn rmse_metric(pred: &[[f64; 3]], gt: &[[f64; 3]], unoriented: bool) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::dim("rmse_metric", format!("{} vs {} rows", pred.len(), gt.len())));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        let s = if unoriented && dot < 0.0 { -1.0 } else { 1.0 };
        total += p.iter().zip(g).map(|(a, b)| (s * a - b).powi(2)).sum::<f64>();
    }
    Ok((total / (3 * pred.len()) as f64).sqrt())
}

/// Unoriented angle in degrees between two nonzero vectors, in `[0, 90]`.
pub fn unoriented_angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot.abs() / (na * nb)).min(1.0).acos().to_degrees()
}

/// Equal-width bins over `[lo, hi]`; values at `hi` fall into the last bin
/// and out-of-range values are clamped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub metric: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub const BINS: usize = 64;

    pub fn new(metric: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { metric: metric.into(), lo, hi, counts: vec![0; Self::BINS] }
    }

    pub fn add(&mut self, value: f64) {
        let bins = self.counts.len();
        let t = ((value - self.lo) / (self.hi - self.lo) * bins as f64).floor();
        let idx = if t.is_nan() { 0 } else { (t.max(0.0) as usize).min(bins - 1) };
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Lower edge of each bin followed by the upper edge of the last.
    pub fn edges(&self) -> Vec<f64> {
        let bins = self.counts.len();
        (0..=bins).map(|i| self.lo + (self.hi - self.lo) * i as f64 / bins as f64).collect()
    }
}

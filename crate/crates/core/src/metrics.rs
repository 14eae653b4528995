//! Classification metrics over a confusion matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// `K × K` counts; entry `(t, p)` is the number of samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(n_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::InvalidArgument("confusion matrix needs at least one class".into()));
        }
        if counts.len() != n_classes * n_classes {
            return Err(Error::DimensionMismatch { expected: n_classes * n_classes, found: counts.len() });
        }
        Ok(ConfusionMatrix { n_classes, counts })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.n_classes)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, i)).sum()
    }
}

/// Tallies `(truth, prediction)` pairs.
pub fn confusion(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), found: preds.len() });
    }
    if preds.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut counts = vec![0u64; n_classes * n_classes];
    for (p, t) in preds.iter().zip(truths) {
        if *p >= n_classes || *t >= n_classes {
            return Err(Error::InvalidArgument(format!("class ({t}, {p}) out of range for {n_classes} classes")));
        }
        counts[t * n_classes + p] += 1;
    }
    ConfusionMatrix::from_counts(n_classes, counts)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Quadratically weighted Cohen's kappa with weights `(t − p)² / (K − 1)²`.
///
/// `Ok(None)` means kappa is undefined: the expected weighted disagreement under
/// independent marginals is zero.
pub fn quadratic_weighted_kappa(cm: &ConfusionMatrix) -> Result<Option<f64>> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = cm.n_classes;
    if k < 2 {
        return Ok(None);
    }
    let n = total as f64;
    let row: Vec<f64> = cm.rows().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let col: Vec<f64> = (0..k).map(|p| (0..k).map(|t| cm.get(t, p)).sum::<u64>() as f64 / n).collect();
    let scale = ((k - 1) * (k - 1)) as f64;
    let mut observed = 0.0;
    let mut expected = 0.0;
    for t in 0..k {
        for p in 0..k {
            let d = t as f64 - p as f64;
            let w = d * d / scale;
            observed += w * cm.get(t, p) as f64 / n;
            expected += w * row[t] * col[p];
        }
    }
    if expected == 0.0 {
        return Ok(None);
    }
    Ok(Some(1.0 - observed / expected))
}

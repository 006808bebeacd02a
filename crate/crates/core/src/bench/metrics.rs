//! Rank and confusion-matrix metrics.

use serde::{Deserialize, Serialize};

use super::BenchError;

/// Twice the Mann-Whitney U statistic of positives over negatives, with
/// ties counting one half (hence doubled to stay integral), and the pair
/// count `P * N`.
pub fn twice_u(scores: &[f64], labels: &[bool]) -> Result<(u128, u128), BenchError> {
    check_inputs(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut twice, mut neg_below) = (0u128, 0u128);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0u128, 0u128);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        twice += 2 * gp * neg_below + gp * gn;
        neg_below += gn;
        i = j;
    }
    let p = labels.iter().filter(|&&l| l).count() as u128;
    Ok((twice, p * (labels.len() as u128 - p)))
}

/// Probability that a positive outscores a negative, ties counted 0.5.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, BenchError> {
    let (twice, pairs) = twice_u(scores, labels)?;
    Ok(twice as f64 / (2 * pairs) as f64)
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(), BenchError> {
    if scores.len() != labels.len() {
        return Err(BenchError::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(BenchError::NonFinite { index: i, value: scores[i] });
    }
    let p = labels.iter().filter(|&&l| l).count();
    if p == 0 || p == labels.len() {
        return Err(BenchError::SingleClass { positives: p, negatives: labels.len() - p });
    }
    Ok(())
}

fn balanced(tp: usize, tn: usize, p: usize, n: usize) -> f64 {
    0.5 * (tp as f64 / p as f64 + tn as f64 / n as f64)
}

/// Mean of per-class accuracies when `score >= threshold` predicts positive.
pub fn balanced_accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64, BenchError> {
    check_inputs(scores, labels)?;
    let p = labels.iter().filter(|&&l| l).count();
    let tp = scores.iter().zip(labels).filter(|&(&s, &l)| l && s >= threshold).count();
    let tn = scores.iter().zip(labels).filter(|&(&s, &l)| !l && s < threshold).count();
    Ok(balanced(tp, tn, p, labels.len() - p))
}

/// Threshold maximizing balanced accuracy. Candidates sit below every score,
/// between each pair of adjacent distinct scores and above every score, so
/// every achievable split of the sorted scores is tried. Ties go to the
/// smallest threshold.
pub fn calibrate(scores: &[f64], labels: &[bool]) -> Result<(f64, f64), BenchError> {
    check_inputs(scores, labels)?;
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let lo = scores[idx[0]];
    let hi = scores[idx[idx.len() - 1]];
    // everything predicted positive
    let (mut tp, mut tn) = (p, 0);
    let mut best = (lo - 1.0 - lo.abs(), balanced(tp, tn, p, n));
    let mut i = 0;
    while i < idx.len() {
        let v = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == v {
            if labels[idx[i]] {
                tp -= 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
        let threshold = if i < idx.len() {
            let next = scores[idx[i]];
            let mid = v + 0.5 * (next - v);
            if mid > v {
                mid
            } else {
                next
            }
        } else {
            hi + 1.0 + hi.abs()
        };
        let acc = balanced(tp, tn, p, n);
        if acc > best.1 {
            best = (threshold, acc);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_masks(predicted: &[bool], truth: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }

    /// Matthews correlation; `None` when a marginal is empty.
    pub fn mcc(&self) -> Option<f64> {
        let (tp, fp, tn, fnn) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fn_ as f64);
        let den = (tp + fp) * (tp + fnn) * (tn + fp) * (tn + fnn);
        if den == 0.0 {
            return None;
        }
        let num = self.tp as i128 * self.tn as i128 - self.fp as i128 * self.fn_ as i128;
        Some(num as f64 / den.sqrt())
    }
}

//! Federated loss mathematics: negative-class subset sampling, pseudo-negative
//! derivation, and a masked binary cross-entropy with exact analytic gradients.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// R x C matrix of finite logits, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl LogitMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidArgument("logit matrix needs >= 1 class".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "logit data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("logits must be finite".into()));
        }
        Ok(LogitMatrix { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// R x C binary target matrix matching a [`LogitMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl TargetMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "target data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::InvalidArgument("targets must be 0 or 1".into()));
        }
        Ok(TargetMatrix { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// How a class subset was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SampledFedLoss,
    PseudoNegative,
    TrueNegative,
    Exhaustive,
}

/// The class subset S over which the loss is computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSubset {
    pub classes: BTreeSet<usize>,
    pub provenance: Provenance,
}

/// Loss value with its gradient w.r.t. the logit matrix (zero outside S).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub grad_rows: usize,
    pub grad_cols: usize,
    pub grad: Vec<f64>,
}

impl LossReport {
    pub fn grad_at(&self, r: usize, c: usize) -> f64 {
        self.grad[r * self.grad_cols + c]
    }
}

/// FedLoss subset: ground-truth classes plus negatives drawn without
/// replacement with probability proportional to the square root of their
/// training-set frequency. Zero-frequency candidates have weight zero; if
/// every remaining candidate has weight zero, draws fall back to uniform.
pub fn sample_fedloss_subset(
    gt_classes: &BTreeSet<usize>,
    freqs: &BTreeMap<usize, u64>,
    subset_size: usize,
    seed: u64,
) -> Result<ClassSubset> {
    if subset_size < gt_classes.len() {
        return Err(Error::InvalidArgument(format!(
            "subset_size {subset_size} smaller than {} ground-truth classes",
            gt_classes.len()
        )));
    }
    let mut all: BTreeSet<usize> = freqs.keys().copied().collect();
    all.extend(gt_classes);
    let target = subset_size.min(all.len());

    let mut classes = gt_classes.clone();
    let mut pool: Vec<usize> = all.difference(gt_classes).copied().collect();
    let mut weights: Vec<f64> = pool
        .iter()
        .map(|c| (freqs.get(c).copied().unwrap_or(0) as f64).sqrt())
        .collect();

    let mut rng = SplitMix64::new(seed);
    while classes.len() < target {
        let total: f64 = weights.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.next_f64() * total;
            let mut pick = pool.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.next_below(pool.len() as u64) as usize
        };
        classes.insert(pool.swap_remove(idx));
        weights.swap_remove(idx);
    }

    Ok(ClassSubset {
        classes,
        provenance: Provenance::SampledFedLoss,
    })
}

/// Classes whose maximum prediction score reaches the threshold (inclusive).
pub fn pseudo_positive_filter(
    scores: &BTreeMap<usize, f64>,
    thresh: f64,
) -> Result<BTreeSet<usize>> {
    if !(thresh > 0.0 && thresh < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {thresh}"
        )));
    }
    for (&c, &s) in scores {
        if !(s.is_finite() && (0.0..=1.0).contains(&s)) {
            return Err(Error::InvalidArgument(format!(
                "score for class {c} out of [0, 1]: {s}"
            )));
        }
    }
    Ok(scores
        .iter()
        .filter(|(_, &s)| s >= thresh)
        .map(|(&c, _)| c)
        .collect())
}

/// Complement of the pseudo-positives within the full class set.
pub fn get_negatives(pseudo_pos: &BTreeSet<usize>, all_classes: &BTreeSet<usize>) -> BTreeSet<usize> {
    all_classes.difference(pseudo_pos).copied().collect()
}

/// Union of pseudo-negatives and ground-truth classes.
pub fn select_classes(neg: &BTreeSet<usize>, gt_classes: &BTreeSet<usize>) -> ClassSubset {
    ClassSubset {
        classes: neg.union(gt_classes).copied().collect(),
        provenance: Provenance::PseudoNegative,
    }
}

/// Masked binary cross-entropy, mean over `R * |S|` cells.
///
/// loss = (1 / (R*|S|)) * sum over r, c in S of
///        max(z, 0) - z*t + ln(1 + exp(-|z|))
/// grad[r, c] = (sigmoid(z) - t) / (R*|S|) for c in S, exactly 0 otherwise.
pub fn federated_bce(
    logits: &LogitMatrix,
    targets: &TargetMatrix,
    subset: &ClassSubset,
) -> Result<LossReport> {
    if logits.rows != targets.rows || logits.cols != targets.cols {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: logits {}x{}, targets {}x{}",
            logits.rows, logits.cols, targets.rows, targets.cols
        )));
    }
    if let Some(&c) = subset.classes.iter().next_back() {
        if c >= logits.cols {
            return Err(Error::InvalidArgument(format!(
                "subset class {c} out of range for {} columns",
                logits.cols
            )));
        }
    }

    let denom = (logits.rows * subset.classes.len()) as f64;
    let mut grad = vec![0.0; logits.rows * logits.cols];
    if denom == 0.0 {
        return Ok(LossReport {
            loss: 0.0,
            grad_rows: logits.rows,
            grad_cols: logits.cols,
            grad,
        });
    }

    let mut loss = 0.0;
    for r in 0..logits.rows {
        for &c in &subset.classes {
            let z = logits.get(r, c);
            let t = targets.get(r, c);
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            let sig = 1.0 / (1.0 + (-z).exp());
            grad[r * logits.cols + c] = (sig - t) / denom;
        }
    }
    Ok(LossReport {
        loss: loss / denom,
        grad_rows: logits.rows,
        grad_cols: logits.cols,
        grad,
    })
}

/// Max relative error between the analytic gradient and central differences.
pub fn finite_difference_check(
    logits: &LogitMatrix,
    targets: &TargetMatrix,
    subset: &ClassSubset,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }
    let analytic = federated_bce(logits, targets, subset)?;
    let mut max_err: f64 = 0.0;
    for r in 0..logits.rows {
        for c in 0..logits.cols {
            let mut plus = logits.clone();
            plus.data[r * logits.cols + c] += epsilon;
            let mut minus = logits.clone();
            minus.data[r * logits.cols + c] -= epsilon;
            let fd = (federated_bce(&plus, targets, subset)?.loss
                - federated_bce(&minus, targets, subset)?.loss)
                / (2.0 * epsilon);
            let a = analytic.grad_at(r, c);
            let err = (a - fd).abs() / (a.abs() + 1e-8);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

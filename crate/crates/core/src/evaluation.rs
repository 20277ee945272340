//! Threshold-free ranking metrics: micro AUROC and per-admission
//! Precision@K / Recall@K averaged over admissions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Cutoffs reported by default.
pub const DEFAULT_KS: [usize; 2] = [10, 20];

/// Probability that a random positive outranks a random negative, ties
/// counted as one half. Rank-sum formulation, `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "auroc",
            left: (scores.len(), 1),
            right: (labels.len(), 1),
        });
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let mean_rank = (i + j + 2) as f64 / 2.0;
        pos_rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Indices of the `k` largest scores, highest first; ties go to the lower
/// index. Returns every index when `k` exceeds the row length.
pub fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `(|top-k ∩ true| / k, |top-k ∩ true| / |true|)`.
pub fn precision_recall_at_k(row: &[f64], true_set: &[usize], k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if true_set.is_empty() {
        return Err(Error::UndefinedMetric("no true labels".into()));
    }
    let hits = top_k(row, k).into_iter().filter(|j| true_set.contains(j)).count() as f64;
    Ok((hits / k as f64, hits / true_set.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub n_admissions: usize,
    /// Admissions left out of P@K/R@K because they have no true label.
    pub n_excluded: usize,
}

/// Metrics over one prediction row per admission. `truth[r]` holds the
/// label indices present in admission `r`.
pub fn evaluate_predictions(probs: &Matrix, truth: &[Vec<usize>], ks: &[usize]) -> Result<MetricReport> {
    if probs.rows() == 0 {
        return Err(Error::EmptyInput("evaluation split"));
    }
    if truth.len() != probs.rows() {
        return Err(Error::Dimension {
            op: "evaluate",
            left: probs.shape(),
            right: (truth.len(), 1),
        });
    }
    let l = probs.cols();
    let mut flat_labels = vec![false; probs.rows() * l];
    for (r, set) in truth.iter().enumerate() {
        for &j in set {
            if j >= l {
                return Err(Error::Validation(format!("label index {j} outside vocabulary of {l}")));
            }
            flat_labels[r * l + j] = true;
        }
    }
    let auc = auroc(probs.data(), &flat_labels)?;

    let mut precision_at = BTreeMap::new();
    let mut recall_at = BTreeMap::new();
    let scored: Vec<usize> = (0..probs.rows()).filter(|&r| !truth[r].is_empty()).collect();
    for &k in ks {
        let (mut p_sum, mut r_sum) = (0.0, 0.0);
        for &r in &scored {
            let (p, rc) = precision_recall_at_k(probs.row(r), &truth[r], k)?;
            p_sum += p;
            r_sum += rc;
        }
        let n = scored.len().max(1) as f64;
        precision_at.insert(k, p_sum / n);
        recall_at.insert(k, r_sum / n);
    }
    Ok(MetricReport {
        auroc: auc,
        precision_at,
        recall_at,
        n_admissions: probs.rows(),
        n_excluded: probs.rows() - scored.len(),
    })
}

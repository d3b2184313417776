//! Ranking and classification metrics for selection scores.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::baselines::{select_topk_by, Direction};
use crate::error::{Error, Result};

/// ROC AUC via the Mann-Whitney rank statistic; tied scores get mid-ranks.
/// Returns 0.5 when either class is empty.
pub fn auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let (np, nn) = (positives.len(), negatives.len());
    if np == 0 || nn == 0 {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    (rank_sum - (np * (np + 1)) as f64 / 2.0) / (np as f64 * nn as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub auc: f64,
    pub precision_at_k: BTreeMap<usize, f64>,
    /// F1 of the selection `score > ln τ` against the in-domain labels.
    pub f1_at_tau: f64,
    pub retention: f64,
}

/// `labels[id] == true` marks an in-domain record.
pub fn classification_metrics(
    scores: &[(String, f64)],
    labels: &HashMap<String, bool>,
    tau: f64,
    ks: &[usize],
) -> Result<ClassificationMetrics> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (id, s) in scores {
        match labels.get(id) {
            Some(true) => pos.push(*s),
            Some(false) => neg.push(*s),
            None => return Err(Error::Argument(format!("no label for scored id {id:?}"))),
        }
    }
    let mut precision_at_k = BTreeMap::new();
    for &k in ks {
        let top = select_topk_by(scores, k, Direction::Desc)?;
        let hits = top.iter().filter(|id| labels[id.as_str()]).count();
        precision_at_k.insert(k, if k == 0 { 0.0 } else { hits as f64 / k as f64 });
    }
    let log_tau = tau.ln();
    let selected: Vec<bool> = scores.iter().map(|(_, s)| *s > log_tau).collect();
    let tp = scores
        .iter()
        .zip(&selected)
        .filter(|((id, _), &sel)| sel && labels[id.as_str()])
        .count() as f64;
    let n_sel = selected.iter().filter(|&&s| s).count() as f64;
    let f1 = if n_sel + pos.len() as f64 == 0.0 {
        0.0
    } else {
        2.0 * tp / (n_sel + pos.len() as f64)
    };
    Ok(ClassificationMetrics {
        auc: auc(&pos, &neg),
        precision_at_k,
        f1_at_tau: f1,
        retention: if scores.is_empty() { 0.0 } else { n_sel / scores.len() as f64 },
    })
}

/// A weighted ROC curve: one `(fpr, tpr)` vertex per distinct score,
/// starting at `(0, 0)` and ending at `(1, 1)`. Higher scores rank first.
pub fn roc_curve(positives: &[(f64, f64)], negatives: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let wp: f64 = positives.iter().map(|x| x.1).sum();
    let wn: f64 = negatives.iter().map(|x| x.1).sum();
    let mut all: Vec<(f64, f64, bool)> = positives
        .iter()
        .map(|&(s, w)| (s, w, true))
        .chain(negatives.iter().map(|&(s, w)| (s, w, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].2 {
                tp += all[i].1;
            } else {
                fp += all[i].1;
            }
            i += 1;
        }
        curve.push((fp / wn, tp / wp));
    }
    // Cumulative sums drift from the totals by rounding; pin the endpoint so
    // curves built from differently ordered sums stay comparable.
    if let Some(last) = curve.last_mut().filter(|_| !all.is_empty()) {
        *last = (1.0, 1.0);
    }
    curve
}

/// TPR of the randomized test that interpolates between adjacent vertices.
pub fn tpr_at(curve: &[(f64, f64)], fpr: f64) -> f64 {
    let fpr = fpr.clamp(0.0, 1.0);
    let mut best: f64 = 0.0;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if fpr >= x0 && fpr <= x1 {
            let y = if x1 > x0 { y0 + (y1 - y0) * (fpr - x0) / (x1 - x0) } else { y1.max(y0) };
            best = best.max(y);
        }
    }
    best
}

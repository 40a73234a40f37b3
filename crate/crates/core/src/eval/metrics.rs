//! Ranking metrics of attribution scores against a binary gold mask.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

fn check(scores: &[f64], gold: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != gold.len() {
        return Err(Error::Shape(format!("{} scores for {} gold labels", scores.len(), gold.len())));
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput(format!("score {i} is not finite")));
    }
    let pos = gold.iter().filter(|&&g| g).count();
    let neg = gold.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput(format!(
            "gold needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from midranks.
pub fn auc(scores: &[f64], gold: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, gold)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps every midrank an integer
    let mut rank2_pos = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank2 = (start + 1 + end) as u64;
        rank2_pos += midrank2 * order[start..end].iter().filter(|&&k| gold[k]).count() as u64;
        start = end;
    }
    let u2 = rank2_pos - (pos * (pos + 1)) as u64;
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Step-wise area under precision/recall: `sum_t (R_t - R_{t-1}) P_t` over
/// descending unique score thresholds.
pub fn average_precision(scores: &[f64], gold: &[bool]) -> Result<f64> {
    let (pos, _) = check(scores, gold)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let hits = order[start..end].iter().filter(|&&k| gold[k]).count();
        tp += hits;
        seen += end - start;
        if hits > 0 {
            ap += (hits as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        start = end;
    }
    Ok(ap)
}

/// Mean over rows of the fraction of gold entries among the row's `k` top
/// scores, `k` being the row's gold count. Ties go to the lower column.
pub fn recall_at_k(scores: ArrayView2<f64>, gold: ArrayView2<bool>) -> Result<f64> {
    if scores.dim() != gold.dim() {
        return Err(Error::Shape(format!("scores {:?} vs gold {:?}", scores.dim(), gold.dim())));
    }
    if scores.nrows() == 0 {
        return Err(Error::DegenerateInput("no rows to score".into()));
    }
    let mut total = 0.0;
    for (i, (s, g)) in scores.outer_iter().zip(gold.outer_iter()).enumerate() {
        let k = g.iter().filter(|&&b| b).count();
        if k == 0 {
            return Err(Error::DegenerateInput(format!("row {i} has no gold entries")));
        }
        if let Some(j) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput(format!("score ({i}, {j}) is not finite")));
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        let hits = order[..k].iter().filter(|&&j| g[j]).count();
        total += hits as f64 / k as f64;
    }
    Ok(total / scores.nrows() as f64)
}

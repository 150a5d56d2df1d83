use crate::error::{invalid, Error, Result};
use crate::stats::average_ranks;

/// Area under the ROC curve via the rank-sum identity; tied scores earn
/// half credit.
pub fn metric_auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return invalid(format!("{} scores for {} labels", scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Stats("AUROC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Macro one-vs-rest AUROC over class probabilities; classes absent from
/// `labels` are skipped.
pub fn metric_auroc_ovr(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let classes = probs.first().map_or(0, Vec::len);
    if classes == 2 {
        let s: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let l: Vec<bool> = labels.iter().map(|&c| c == 1).collect();
        return metric_auroc(&s, &l);
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..classes {
        let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let l: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if let Ok(a) = metric_auroc(&s, &l) {
            total += a;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Stats("AUROC needs both classes".into()));
    }
    Ok(total / used as f64)
}

/// Spearman rank correlation. A constant input has no ordering and gives 0.
pub fn metric_spearman(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || preds.len() < 2 {
        return invalid("Spearman needs two equal-length inputs of length >= 2");
    }
    let a = average_ranks(preds);
    let b = average_ranks(targets);
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Harrell's concordance index. A pair is comparable when the earlier time
/// is an observed event; tied risks earn half credit.
pub fn metric_cindex(risks: &[f64], times: &[f64], censored: &[bool]) -> Result<f64> {
    if risks.len() != times.len() || risks.len() != censored.len() {
        return invalid("C-index inputs differ in length");
    }
    let mut num = 0.0;
    let mut pairs = 0usize;
    for i in 0..risks.len() {
        if censored[i] {
            continue;
        }
        for j in 0..risks.len() {
            if times[i] < times[j] {
                pairs += 1;
                num += if risks[i] > risks[j] {
                    1.0
                } else if risks[i] == risks[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Stats("C-index has no comparable pairs".into()));
    }
    Ok(num / pairs as f64)
}

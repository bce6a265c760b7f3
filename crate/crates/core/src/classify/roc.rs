//! One-vs-rest ROC curves and trapezoid AUC.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` points per class, `None` for classes without both
    /// positives and negatives.
    pub per_class: Vec<Option<Vec<(f64, f64)>>>,
    pub per_class_auc: Vec<Option<f64>>,
    /// Mean of the per-class TPRs on the union of their FPR points.
    pub macro_curve: Vec<(f64, f64)>,
    /// Mean of the per-class AUCs.
    pub auc: f64,
}

/// ROC points from a threshold sweep over the observed scores, starting at
/// (0, 0) and ending at (1, 1). Tied scores form one step.
pub fn binary_roc(scores: &[f64], positive: &[bool]) -> Option<Vec<(f64, f64)>> {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 || scores.len() != positive.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if positive[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_tie {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Some(points)
}

pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// TPR at `fpr` on a monotone curve; on a vertical segment the upper value.
fn tpr_at(curve: &[(f64, f64)], fpr: f64) -> f64 {
    let upper = curve.partition_point(|p| p.0 <= fpr);
    if upper == 0 {
        return curve[0].1;
    }
    let (x0, y0) = curve[upper - 1];
    if x0 == fpr || upper == curve.len() {
        return y0;
    }
    let (x1, y1) = curve[upper];
    y0 + (y1 - y0) * (fpr - x0) / (x1 - x0)
}

/// One-vs-rest ROC for every class; `scores[i][c]` is example `i`'s score
/// for class `c`.
pub fn roc_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<RocCurve> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Shape(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let classes = scores[0].len();
    if scores.iter().any(|s| s.len() != classes) {
        return Err(Error::Shape("score rows of differing lengths".into()));
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut per_class_auc = Vec::with_capacity(classes);
    for c in 0..classes {
        let s: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        let curve = binary_roc(&s, &positive);
        if curve.is_none() {
            log::warn!("class {c} has no positive or no negative examples; skipped in ROC");
        }
        per_class_auc.push(curve.as_deref().map(trapezoid_auc));
        per_class.push(curve);
    }
    let curves: Vec<&Vec<(f64, f64)>> = per_class.iter().flatten().collect();
    if curves.is_empty() {
        return Err(Error::Contract("no class has both positive and negative examples".into()));
    }
    let mut grid: Vec<f64> = curves.iter().flat_map(|c| c.iter().map(|p| p.0)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let macro_curve = grid
        .iter()
        .map(|&f| (f, curves.iter().map(|c| tpr_at(c, f)).sum::<f64>() / curves.len() as f64))
        .collect();
    let aucs: Vec<f64> = per_class_auc.iter().flatten().copied().collect();
    Ok(RocCurve {
        per_class,
        per_class_auc,
        macro_curve,
        auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
    })
}

impl RocCurve {
    /// `curve,fpr,tpr` rows: the macro curve first, then each class.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("curve,fpr,tpr\n");
        for (f, t) in &self.macro_curve {
            writeln!(out, "macro,{f:.8e},{t:.8e}").unwrap();
        }
        for (c, curve) in self.per_class.iter().enumerate() {
            let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            for (f, t) in curve.iter().flatten() {
                writeln!(out, "{name},{f:.8e},{t:.8e}").unwrap();
            }
        }
        out
    }
}

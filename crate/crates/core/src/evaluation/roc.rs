use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::RiskLevel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class: RiskLevel,
    /// `(fpr, tpr)` from (0, 0) to (1, 1); empty when undefined.
    pub points: Vec<(f64, f64)>,
    /// `None` when the class has no positive or no negative instance.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSet {
    pub curves: Vec<RocCurve>,
    /// Mean AUC over the classes where it is defined.
    pub macro_auc: Option<f64>,
}

/// Binary ROC over the distinct score values, highest first. Instances with
/// equal scores form one threshold step. The area is accumulated in integer
/// units of 1/(2PN), so it equals the pairwise statistic
/// P(score_pos > score_neg) + ½P(tie) without rounding differences.
pub fn binary_roc(scores: &[f64], positive: &[bool]) -> Option<(Vec<(f64, f64)>, f64)> {
    let p = positive.iter().filter(|&&b| b).count() as u64;
    let n = positive.len() as u64 - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        area2 += u128::from(gn) * u128::from(2 * tp + gp);
        tp += gp;
        fp += gn;
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    let auc = area2 as f64 / (2 * u128::from(p) * u128::from(n)) as f64;
    Some((points, auc))
}

/// One-vs-rest ROC per class over each instance's predicted probability for
/// that class.
pub fn roc_auc(actual: &[RiskLevel], probabilities: &[[f64; RiskLevel::COUNT]]) -> Result<RocSet> {
    if actual.len() != probabilities.len() {
        return Err(Error::arg(format!(
            "{} labels but {} probability vectors",
            actual.len(),
            probabilities.len()
        )));
    }
    if let Some((i, p)) = probabilities
        .iter()
        .enumerate()
        .find(|(_, p)| (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 || p.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::arg(format!("probability vector {i} does not sum to 1: {p:?}")));
    }
    let curves: Vec<RocCurve> = RiskLevel::ALL
        .iter()
        .map(|&c| {
            let scores: Vec<f64> = probabilities.iter().map(|p| p[c.index()]).collect();
            let pos: Vec<bool> = actual.iter().map(|&a| a == c).collect();
            match binary_roc(&scores, &pos) {
                Some((points, auc)) => RocCurve {
                    class: c,
                    points,
                    auc: Some(auc),
                },
                None => RocCurve {
                    class: c,
                    points: Vec::new(),
                    auc: None,
                },
            }
        })
        .collect();
    let defined: Vec<f64> = curves.iter().filter_map(|c| c.auc).collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(RocSet { curves, macro_auc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use RiskLevel::*;

    /// O(n²) pairwise statistic.
    fn pairwise(scores: &[f64], pos: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn perfect_and_constant_scores() {
        let (_, auc) = binary_roc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        let (pts, auc) = binary_roc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn curve_is_monotone_from_origin_to_corner() {
        let mut rng = Rng::new(5);
        let scores: Vec<f64> = (0..40).map(|_| (rng.uniform() * 10.0).floor() / 10.0).collect();
        let pos: Vec<bool> = (0..40).map(|_| rng.bernoulli(0.4)).collect();
        let (pts, auc) = binary_roc(&scores, &pos).unwrap();
        assert_eq!(pts[0], (0.0, 0.0));
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        for w in pts.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn matches_pairwise_oracle_with_ties() {
        let mut rng = Rng::new(11);
        for _ in 0..200 {
            let n = 2 + rng.below(49);
            let levels = 1 + rng.below(8);
            let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
            let mut pos: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
            pos[0] = true;
            pos[1] = false;
            let (_, auc) = binary_roc(&scores, &pos).unwrap();
            let want = pairwise(&scores, &pos);
            assert!((auc - want).abs() <= 1e-12, "{auc} vs {want}");
        }
    }

    #[test]
    fn absent_class_is_undefined() {
        let actual = [Low, Moderate, Low];
        let probs = [[0.6, 0.3, 0.1], [0.2, 0.7, 0.1], [0.5, 0.25, 0.25]];
        let r = roc_auc(&actual, &probs).unwrap();
        assert_eq!(r.curves[2].auc, None);
        assert!(r.curves[2].points.is_empty());
        assert_eq!(r.curves[0].auc, Some(1.0));
        assert_eq!(r.macro_auc, Some(1.0));
    }

    #[test]
    fn invalid_probabilities_rejected() {
        assert!(roc_auc(&[Low], &[[0.5, 0.2, 0.2]]).is_err());
        assert!(roc_auc(&[Low, High], &[[1.0, 0.0, 0.0]]).is_err());
    }
}

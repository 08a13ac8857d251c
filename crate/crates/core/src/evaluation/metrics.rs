use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::RiskLevel;

const K: usize = RiskLevel::COUNT;

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneVsRest {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn one_vs_rest(&self, class: RiskLevel) -> OneVsRest {
        let k = class.index();
        let tp = self.counts[k][k];
        let fp: u64 = (0..K).filter(|&i| i != k).map(|i| self.counts[i][k]).sum();
        let fn_: u64 = (0..K).filter(|&j| j != k).map(|j| self.counts[k][j]).sum();
        OneVsRest {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }
}

pub fn build_confusion(actual: &[RiskLevel], predicted: &[RiskLevel]) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::arg(format!(
            "{} actual labels but {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::arg("no labels to compare"));
    }
    let mut cm = ConfusionMatrix::default();
    for (a, p) in actual.iter().zip(predicted) {
        cm.counts[a.index()][p.index()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: RiskLevel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One-vs-rest accuracy (TP + TN) / total.
    pub accuracy: f64,
    pub support: u64,
    /// Names of metrics whose denominator was zero and were reported as 0.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class one-vs-rest metrics and their unweighted means over the three
/// classes. Zero denominators give 0 and are listed in `undefined`.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::arg("confusion matrix is empty"));
    }
    let per_class: Vec<ClassMetrics> = RiskLevel::ALL
        .iter()
        .map(|&c| {
            let o = cm.one_vs_rest(c);
            let mut undefined = Vec::new();
            let precision = ratio(o.tp, o.tp + o.fp, "precision", &mut undefined);
            let recall = ratio(o.tp, o.tp + o.fn_, "recall", &mut undefined);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                undefined.push("f1".into());
                0.0
            };
            ClassMetrics {
                class: c,
                precision,
                recall,
                f1,
                accuracy: (o.tp + o.tn) as f64 / total as f64,
                support: o.tp + o.fn_,
                undefined,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / K as f64;
    Ok(Metrics {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: cm.trace() as f64 / total as f64,
        total,
        per_class,
    })
}

/// Fixed-width table with one row per class plus the macro row.
pub fn format_metrics_table(m: &Metrics) -> String {
    let mut s = format!(
        "{:<10} {:>9} {:>9} {:>9} {:>9} {:>8}\n",
        "Class", "Precision", "Recall", "F1", "Accuracy", "Support"
    );
    for c in &m.per_class {
        s.push_str(&format!(
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8}\n",
            c.class.name(),
            c.precision,
            c.recall,
            c.f1,
            c.accuracy,
            c.support
        ));
    }
    s.push_str(&format!(
        "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9} {:>8}\n",
        "macro", m.macro_precision, m.macro_recall, m.macro_f1, "", m.total
    ));
    s.push_str(&format!("overall accuracy {:.2}%\n", 100.0 * m.accuracy));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use RiskLevel::*;

    #[test]
    fn all_correct_is_diagonal() {
        let y = [Low, Moderate, High, High];
        let cm = build_confusion(&y, &y).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 2]]);
        let m = compute_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        for c in &m.per_class {
            assert_eq!((c.precision, c.recall, c.f1, c.accuracy), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn documented_small_case() {
        let cm = build_confusion(&[Low, Moderate, High], &[Moderate, Moderate, High]).unwrap();
        assert_eq!(cm.counts[0][1], 1);
        assert_eq!(cm.counts[1][1], 1);
        assert_eq!(cm.counts[2][2], 1);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn nine_one_one_gives_point_nine() {
        let mut cm = ConfusionMatrix::default();
        cm.counts = [[9, 1, 0], [1, 5, 0], [0, 0, 4]];
        let m = compute_metrics(&cm).unwrap();
        let low = &m.per_class[0];
        assert!((low.precision - 0.9).abs() < 1e-15);
        assert!((low.recall - 0.9).abs() < 1e-15);
        assert!((low.f1 - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let cm = build_confusion(&[Low, Low], &[Low, Moderate]).unwrap();
        let m = compute_metrics(&cm).unwrap();
        let high = &m.per_class[2];
        assert_eq!((high.precision, high.recall, high.f1), (0.0, 0.0, 0.0));
        assert_eq!(high.undefined, vec!["precision", "recall", "f1"]);
        assert_eq!(m.per_class[1].precision, 0.0);
        assert_eq!(m.per_class[1].undefined, vec!["recall", "f1"]);
    }

    #[test]
    fn errors() {
        assert!(build_confusion(&[Low], &[]).is_err());
        assert!(build_confusion(&[], &[]).is_err());
        assert!(compute_metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn table_mentions_every_class() {
        let cm = build_confusion(&[Low, High], &[Low, Moderate]).unwrap();
        let t = format_metrics_table(&compute_metrics(&cm).unwrap());
        for name in ["low", "moderate", "high", "macro", "overall accuracy 50.00%"] {
            assert!(t.contains(name), "{t}");
        }
    }
}

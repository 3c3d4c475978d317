//! Confusion matrices and support-weighted precision, recall and F1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, CoreError, Result};

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.len();
        if counts.iter().any(|r| r.len() != classes) {
            return arg_err("ConfusionMatrix::from_counts", "matrix must be square");
        }
        Ok(Self { classes, counts })
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return arg_err("ConfusionMatrix::add", format!("label out of range for {} classes", self.classes));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    /// Rows of the grid as CSV, with a header of predicted labels.
    pub fn to_csv(&self, labels: &[&str]) -> String {
        let name = |i: usize| labels.get(i).map(|s| s.to_string()).unwrap_or_else(|| i.to_string());
        let mut out = String::from("true\\predicted");
        for j in 0..self.classes {
            let _ = write!(out, ",{}", name(j));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&name(i));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Count (truth, prediction) pairs.
pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(CoreError::Shape { op: "confusion", detail: format!("{} labels vs {} predictions", y_true.len(), y_pred.len()) });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// True when a zero denominator forced a value to 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Any per-class value was set to 0 because its denominator was 0.
    pub zero_division: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-class precision, recall and F1, averaged with true-class support as weights.
/// Zero denominators yield 0 and set the `undefined` / `zero_division` flags.
pub fn weighted_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return arg_err("weighted_metrics", "confusion matrix is empty");
    }
    let n = cm.classes;
    let mut per_class = Vec::with_capacity(n);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let tp = cm.counts[k][k];
        let predicted: u64 = (0..n).map(|i| cm.counts[i][k]).sum();
        let support: u64 = cm.counts[k].iter().sum();
        let (precision, p_undef) = ratio(tp, predicted);
        let (recall, r_undef) = ratio(tp, support);
        let (f1, f_undef) = if precision + recall > 0.0 { (2.0 * precision * recall / (precision + recall), false) } else { (0.0, true) };
        let w = support as f64 / total as f64;
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
        per_class.push(ClassMetrics { precision, recall, f1, support, undefined: p_undef || r_undef || f_undef });
    }
    let zero_division = per_class.iter().any(|c| c.undefined);
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        weighted_precision: wp,
        weighted_recall: wr,
        weighted_f1: wf,
        per_class,
        zero_division,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// One row of a model × representation comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub representation: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ComparisonRow {
    pub fn new(model: &str, representation: &str, report: &MetricsReport) -> Self {
        Self {
            model: model.to_string(),
            representation: representation.to_string(),
            accuracy: report.accuracy,
            precision: report.weighted_precision,
            recall: report.weighted_recall,
            f1: report.weighted_f1,
        }
    }
}

pub const COMPARISON_HEADER: &str = "model,representation,accuracy,precision,recall,f1";

/// CSV with one row per (model, representation). Weighted metrics use the
/// zero-denominator-is-zero convention.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.4},{:.4},{:.4},{:.4}", r.model, r.representation, r.accuracy, r.precision, r.recall, r.f1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_confusion() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(confusion(&[], &[], 3).unwrap().total(), 0);
        assert!(confusion(&[0], &[], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn never_predicted_class_has_zero_precision() {
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![2, 0]]).unwrap();
        let r = weighted_metrics(&cm).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert!(r.zero_division);
        assert!(r.weighted_f1.is_finite());
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(weighted_metrics(&ConfusionMatrix::new(10)).is_err());
    }

    #[test]
    fn csv_layouts() {
        let cm = ConfusionMatrix::from_counts(vec![vec![2, 0], vec![1, 1]]).unwrap();
        assert_eq!(cm.to_csv(&["a", "b"]), "true\\predicted,a,b\na,2,0\nb,1,1\n");
        let row = ComparisonRow::new("hybrid", "mel", &weighted_metrics(&cm).unwrap());
        let csv = comparison_csv(&[row]);
        assert_eq!(csv.lines().nth(1).unwrap(), "hybrid,mel,0.7500,0.8333,0.7500,0.7333");
    }
}

//! Confusion matrix, balanced accuracy and F1 for classifier evaluation.
//!
//! Zero-division conventions: precision/recall of a class with an empty
//! column/row is 0, F1 is 0 when precision + recall is 0, and classes with
//! no gold instances are left out of balanced accuracy. Macro F1 averages
//! over every label in the matrix.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label {0:?} is not in the label list")]
    UnknownLabel(String),
    #[error("label list is empty or has duplicates")]
    InvalidLabels,
    #[error("matrix must be {0}x{0}")]
    Shape(usize),
    #[error("no gold instances in any class")]
    AllRowsEmpty,
}

/// Rows are gold labels, columns are predicted labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<Label>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(labels: Vec<Label>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        check_labels(&labels)?;
        let n = labels.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(MetricsError::Shape(n));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn precision(&self, i: usize) -> f64 {
        ratio(self.counts[i][i], self.col_sum(i))
    }

    pub fn recall(&self, i: usize) -> f64 {
        ratio(self.counts[i][i], self.row_sum(i))
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_labels(labels: &[Label]) -> Result<(), MetricsError> {
    let mut seen = std::collections::HashSet::new();
    if labels.is_empty() || !labels.iter().all(|l| seen.insert(l)) {
        return Err(MetricsError::InvalidLabels);
    }
    Ok(())
}

/// Tallies `(gold, predicted)` pairs.
pub fn confusion<'a, I>(pairs: I, labels: &[Label]) -> Result<ConfusionMatrix, MetricsError>
where
    I: IntoIterator<Item = (&'a Label, &'a Label)>,
{
    check_labels(labels)?;
    let index: HashMap<&Label, usize> = labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let lookup = |l: &Label| {
        index
            .get(l)
            .copied()
            .ok_or_else(|| MetricsError::UnknownLabel(l.to_string()))
    };
    let n = labels.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (gold, predicted) in pairs {
        counts[lookup(gold)?][lookup(predicted)?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    })
}

/// Mean recall over classes that have at least one gold instance.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let recalls: Vec<f64> = (0..cm.labels.len())
        .filter(|&i| cm.row_sum(i) > 0)
        .map(|i| cm.recall(i))
        .collect();
    if recalls.is_empty() {
        return Err(MetricsError::AllRowsEmpty);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub label: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// `None` when no class has gold instances.
    pub balanced_accuracy: Option<f64>,
    pub macro_f1: f64,
    pub per_class_f1: Vec<ClassF1>,
}

impl ClassificationReport {
    pub fn f1_of(&self, label: &Label) -> Option<f64> {
        self.per_class_f1.iter().find(|c| &c.label == label).map(|c| c.f1)
    }
}

pub fn f1_report(cm: &ConfusionMatrix) -> ClassificationReport {
    let per_class_f1: Vec<ClassF1> = cm
        .labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let (p, r) = (cm.precision(i), cm.recall(i));
            ClassF1 {
                label: label.clone(),
                precision: p,
                recall: r,
                f1: f1(p, r),
            }
        })
        .collect();
    let macro_f1 = per_class_f1.iter().map(|c| c.f1).sum::<f64>() / per_class_f1.len() as f64;
    ClassificationReport {
        balanced_accuracy: balanced_accuracy(cm).ok(),
        macro_f1,
        per_class_f1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::labels;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        let names: Vec<String> = (0..rows.len()).map(|i| format!("L{i}")).collect();
        ConfusionMatrix::from_counts(labels(&names), rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn tally_pairs() {
        let ls = labels(&["A", "B"]);
        let (a, b) = (Label::from("A"), Label::from("B"));
        let m = confusion([(&a, &a), (&a, &b), (&b, &b)], &ls).unwrap();
        assert_eq!(m.counts(), &[vec![1, 1], vec![0, 1]]);
        let empty = confusion(std::iter::empty(), &ls).unwrap();
        assert_eq!(empty.total(), 0);
        let c = Label::from("C");
        assert_eq!(
            confusion([(&a, &c)], &ls).unwrap_err(),
            MetricsError::UnknownLabel("C".into())
        );
    }

    #[test]
    fn balanced_accuracy_cases() {
        assert_eq!(
            balanced_accuracy(&cm(&[&[5, 0, 0], &[0, 3, 0], &[0, 0, 2]])).unwrap(),
            1.0
        );
        assert!((balanced_accuracy(&cm(&[&[8, 2], &[4, 6]])).unwrap() - 0.7).abs() < 1e-12);
        assert!((balanced_accuracy(&cm(&[&[0, 0], &[1, 9]])).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(
            balanced_accuracy(&cm(&[&[0, 0], &[0, 0]])).unwrap_err(),
            MetricsError::AllRowsEmpty
        );
    }

    #[test]
    fn f1_cases() {
        let r = f1_report(&cm(&[&[8, 2], &[4, 6]]));
        assert!((r.per_class_f1[0].f1 - 0.727_272_727_272_727_3).abs() < 1e-12);
        assert!((r.per_class_f1[1].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.macro_f1 - 0.696_969_696_969_697).abs() < 1e-12);

        let r = f1_report(&cm(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]]));
        assert!(r.per_class_f1.iter().all(|c| c.f1 == 1.0));
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn degenerate_class_counts_as_zero_in_macro() {
        let r = f1_report(&cm(&[&[2, 0], &[0, 0]]));
        assert_eq!(r.per_class_f1[1].f1, 0.0);
        assert_eq!(r.macro_f1, 0.5);
        assert_eq!(r.balanced_accuracy, Some(1.0));
    }

    #[test]
    fn shape_is_checked() {
        assert_eq!(
            ConfusionMatrix::from_counts(labels(&["A", "B"]), vec![vec![1]]).unwrap_err(),
            MetricsError::Shape(2)
        );
    }
}

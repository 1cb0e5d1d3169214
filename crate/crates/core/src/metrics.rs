//! Confusion-matrix metrics: macro-averaged IoU, precision, recall, F1.

use serde::Serialize;

use crate::error::{Error, Result};

/// A square count matrix with rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("confusion matrix needs at least one class".into()));
        }
        Ok(Self { classes, counts: vec![0; classes * classes] })
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes == 0 || counts.len() != classes * classes {
            return Err(Error::Config(format!(
                "expected {classes}x{classes} counts, got {} entries",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    /// Parses a plain-text grid: one row per non-empty line, whitespace-
    /// separated non-negative integers, square overall.
    pub fn parse_grid(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<u64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<u64>().map_err(|_| {
                        Error::Config(format!(
                            "confusion matrix line {}: {tok:?} is not a non-negative integer",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<Vec<u64>>>()?;
            rows.push(row);
        }
        let classes = rows.len();
        if classes == 0 {
            return Err(Error::Config("confusion matrix file holds no rows".into()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != classes) {
            return Err(Error::Config(format!(
                "confusion matrix line {} has {} entries, expected {classes}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Self::from_counts(classes, rows.concat())
    }

    #[must_use]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[must_use]
    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    #[must_use]
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tallies label pairs into the matrix.
    pub fn accumulate(&mut self, truth: &[usize], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Config(format!(
                "{} truth labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            for label in [t, p] {
                if label >= self.classes {
                    return Err(Error::LabelOutOfRange { label, classes: self.classes });
                }
            }
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Elementwise addition, for combining matrices built on parallel
    /// evaluation shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Config(format!(
                "cannot merge {}x{} matrix into {}x{}",
                other.classes, other.classes, self.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Per-class scores; `None` for classes absent from both truth and
/// prediction, which are excluded from the macro averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Macro-averaged metrics over the classes that occur.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub miou: f64,
    pub mprecision: f64,
    pub mrecall: f64,
    pub mf1: f64,
    pub per_class: Vec<Option<ClassMetrics>>,
}

/// Computes per-class and macro metrics:
/// `IoU = TP/(FP+TP+FN)`, `P = TP/(TP+FP)`, `R = TP/(TP+FN)`,
/// `F1 = 2PR/(P+R)`.
///
/// A class with an empty row *and* column never occurred and is excluded
/// from the averages; a zero-denominator precision, recall, or F1
/// contributes 0 for that quantity.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::EmptyConfusion);
    }
    let classes = cm.classes();
    let mut per_class: Vec<Option<ClassMetrics>> = Vec::with_capacity(classes);
    let mut sums = ClassMetrics { iou: 0.0, precision: 0.0, recall: 0.0, f1: 0.0 };
    let mut present = 0usize;
    for c in 0..classes {
        let tp = cm.count(c, c);
        let row: u64 = (0..classes).map(|p| cm.count(c, p)).sum();
        let col: u64 = (0..classes).map(|t| cm.count(t, c)).sum();
        if row == 0 && col == 0 {
            per_class.push(None);
            continue;
        }
        let fns = row - tp;
        let fps = col - tp;
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let iou = ratio(tp, fps + tp + fns);
        let precision = ratio(tp, tp + fps);
        let recall = ratio(tp, tp + fns);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        sums.iou += iou;
        sums.precision += precision;
        sums.recall += recall;
        sums.f1 += f1;
        present += 1;
        per_class.push(Some(ClassMetrics { iou, precision, recall, f1 }));
    }
    let n = present as f64;
    Ok(MetricsReport {
        miou: sums.iou / n,
        mprecision: sums.precision / n,
        mrecall: sums.recall / n,
        mf1: sums.f1 / n,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(classes: usize, counts: &[u64]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(classes, counts.to_vec()).unwrap()
    }

    #[test]
    fn accumulate_hand_case() {
        let mut cm = ConfusionMatrix::new(2).unwrap();
        cm.accumulate(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 0), 0);
        assert_eq!(cm.count(1, 1), 1);
        cm.accumulate(&[], &[]).unwrap();
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn accumulate_rejects_out_of_range_labels() {
        let mut cm = ConfusionMatrix::new(2).unwrap();
        let err = cm.accumulate(&[2], &[0]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, classes: 2 }));
    }

    #[test]
    fn perfect_diagonal_scores_one_everywhere() {
        let report = metrics(&matrix(3, &[4, 0, 0, 0, 2, 0, 0, 0, 9])).unwrap();
        assert_eq!(report.miou, 1.0);
        assert_eq!(report.mprecision, 1.0);
        assert_eq!(report.mrecall, 1.0);
        assert_eq!(report.mf1, 1.0);
    }

    #[test]
    fn single_class_nonzero_diagonal_is_one() {
        let report = metrics(&matrix(1, &[7])).unwrap();
        assert_eq!(report.miou, 1.0);
    }

    #[test]
    fn two_class_hand_case() {
        // One truth-0 sample predicted as 1: both classes score IoU 1/2.
        let report = metrics(&matrix(2, &[1, 1, 0, 1])).unwrap();
        let c0 = report.per_class[0].unwrap();
        let c1 = report.per_class[1].unwrap();
        assert_eq!(c0.iou, 0.5);
        assert_eq!(c1.iou, 0.5);
        assert_eq!(report.miou, 0.5);
        assert_eq!(c0.precision, 1.0);
        assert_eq!(c0.recall, 0.5);
        assert!((c0.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_hand_case_gives_five_twelfths() {
        // Class 0: TP 1, FN 1, FP 1 -> IoU 1/3. Class 1: TP 2, FN 1, FP 1
        // -> IoU 1/2. Macro mean 5/12.
        let report = metrics(&matrix(2, &[1, 1, 1, 2])).unwrap();
        assert!((report.miou - 5.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn empty_classes_are_excluded() {
        // Class 1 never occurs; class 2 is predicted-only (counts as FP).
        let report = metrics(&matrix(3, &[3, 0, 1, 0, 0, 0, 0, 0, 0])).unwrap();
        assert!(report.per_class[1].is_none());
        let c2 = report.per_class[2].unwrap();
        assert_eq!(c2.iou, 0.0);
        assert_eq!(c2.precision, 0.0);
        assert_eq!(c2.recall, 0.0); // zero-denominator recall contributes 0
        assert_eq!(c2.f1, 0.0);
        assert_eq!(report.miou, (0.75 + 0.0) / 2.0);
    }

    #[test]
    fn all_zero_matrix_is_an_error() {
        let err = metrics(&ConfusionMatrix::new(4).unwrap()).unwrap_err();
        assert!(matches!(err, Error::EmptyConfusion));
    }

    #[test]
    fn label_permutation_preserves_macro_scores() {
        let base = metrics(&matrix(3, &[5, 1, 0, 2, 7, 1, 0, 3, 4])).unwrap();
        // Swap classes 0 and 2 consistently in truth and prediction.
        let swapped = metrics(&matrix(3, &[4, 3, 0, 1, 7, 2, 0, 1, 5])).unwrap();
        assert!((base.miou - swapped.miou).abs() < 1e-15);
        assert!((base.mprecision - swapped.mprecision).abs() < 1e-15);
        assert!((base.mrecall - swapped.mrecall).abs() < 1e-15);
        assert!((base.mf1 - swapped.mf1).abs() < 1e-15);
    }

    #[test]
    fn iou_below_min_of_precision_recall_below_f1() {
        let report = metrics(&matrix(3, &[5, 1, 0, 2, 7, 1, 0, 3, 4])).unwrap();
        for class in report.per_class.iter().flatten() {
            let min_pr = class.precision.min(class.recall);
            assert!(class.iou <= min_pr + 1e-15);
            assert!(min_pr <= class.f1 + 1e-15);
        }
    }

    #[test]
    fn macro_means_equal_mean_of_per_class() {
        let report = metrics(&matrix(2, &[3, 2, 1, 4])).unwrap();
        let ious: Vec<f64> = report.per_class.iter().flatten().map(|c| c.iou).collect();
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        assert_eq!(report.miou, mean);
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = matrix(2, &[1, 0, 0, 1]);
        let b = matrix(2, &[2, 1, 0, 0]);
        a.merge(&b).unwrap();
        assert_eq!(a, matrix(2, &[3, 1, 0, 1]));
        assert!(a.merge(&ConfusionMatrix::new(3).unwrap()).is_err());
    }

    #[test]
    fn grid_parsing() {
        let cm = ConfusionMatrix::parse_grid("1 2\n3 4\n").unwrap();
        assert_eq!(cm, matrix(2, &[1, 2, 3, 4]));
        let cm = ConfusionMatrix::parse_grid("\n  5  \n").unwrap();
        assert_eq!(cm, matrix(1, &[5]));
        assert!(ConfusionMatrix::parse_grid("").is_err());
        assert!(ConfusionMatrix::parse_grid("1 2\n3\n").is_err());
        let err = ConfusionMatrix::parse_grid("1 x\n3 4\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(ConfusionMatrix::parse_grid("1 -2\n3 4\n").is_err());
    }
}

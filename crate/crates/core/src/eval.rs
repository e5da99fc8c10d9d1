//! Classification and detection metrics.

use serde::Serialize;

use crate::error::{Error, Result};

/// Counts with rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Header row of class names, then one row per true class.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(names.get(i).map_or("?", String::as_str));
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= classes {
            return Err(Error::ClassIndex { index: p, len: classes });
        }
        if t >= classes {
            return Err(Error::ClassIndex { index: t, len: classes });
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Unweighted means over classes.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
    pub per_class: Vec<ClassScores>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Accuracy and macro-averaged precision, recall and F1.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix has no samples".into()));
    }
    let per_class: Vec<ClassScores> = (0..cm.classes())
        .map(|c| {
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            ClassScores { precision, recall, f1: f1(precision, recall), support: cm.row_sum(c) }
        })
        .collect();
    let k = per_class.len() as f64;
    Ok(Metrics {
        accuracy: ratio(cm.trace(), total),
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
        auroc: None,
        per_class,
    })
}

/// Binary metrics with `true` as the positive class. Precision, recall and
/// F1 are those of the positive class.
pub fn binary_metrics(predicted: &[bool], truth: &[bool]) -> Result<Metrics> {
    let p: Vec<usize> = predicted.iter().map(|&b| b as usize).collect();
    let t: Vec<usize> = truth.iter().map(|&b| b as usize).collect();
    let cm = confusion_matrix(&p, &t, 2)?;
    let m = macro_metrics(&cm)?;
    let pos = m.per_class[1].clone();
    Ok(Metrics { precision: pos.precision, recall: pos.recall, f1: pos.f1, ..m })
}

/// Mann-Whitney AUROC: probability that a positive outscores a negative,
/// ties counted one half. Computed from midranks.
pub fn auroc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Dimension(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| truth[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Lowest index among the maxima.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_confusion() {
        let cm = confusion_matrix(&[0, 1, 1, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(cm.counts[2][1], 1);
        assert_eq!(cm.counts[2][2], 1);
        assert_eq!(macro_metrics(&cm).unwrap().accuracy, 0.75);
        assert_eq!(confusion_matrix(&[], &[], 3).unwrap().total(), 0);
        assert!(confusion_matrix(&[0], &[], 3).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let l = [0, 1, 2, 1, 0];
        let cm = confusion_matrix(&l, &l, 3).unwrap();
        let m = macro_metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.counts[i][j] > 0, i == j);
            }
        }
    }

    #[test]
    fn two_class_hand_case() {
        let cm = ConfusionMatrix { counts: vec![vec![1, 1], vec![0, 2]] };
        let m = macro_metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.per_class[0].precision, 1.0);
        assert_eq!(m.per_class[0].recall, 0.5);
        assert!(macro_metrics(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn zero_precision_and_recall_give_zero_f1() {
        let cm = ConfusionMatrix { counts: vec![vec![0, 3], vec![0, 1]] };
        assert_eq!(macro_metrics(&cm).unwrap().per_class[0].f1, 0.0);
    }

    #[test]
    fn table_two_f1_consistency() {
        // 87.8 / 81.3 imply 84.4, close to the reported 84.
        assert!((f1(0.878, 0.813) - 0.844).abs() < 5e-4);
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn binary_metrics_use_positive_class() {
        let m = binary_metrics(&[true, true, false, false], &[true, false, false, true]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (0.5, 0.5, 0.5));
    }
}

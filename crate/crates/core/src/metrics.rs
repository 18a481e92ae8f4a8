//! Confusion counts, accuracy, recall, ROC and AUC, plus their CSV reports.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0} predictions but {1} labels")]
    Length(usize, usize),
    #[error("{0}")]
    Undefined(&'static str),
    #[error("{path}: {msg}")]
    Write { path: String, msg: String },
}

pub type MetricsResult<T> = std::result::Result<T, MetricsError>;

/// Label treated as positive unless configured otherwise.
pub const DEFAULT_POSITIVE: usize = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub positive: usize,
}

/// One-vs-rest counts against `positive`.
pub fn confusion(pred: &[usize], truth: &[usize], positive: usize) -> MetricsResult<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(MetricsError::Length(pred.len(), truth.len()));
    }
    let mut cm = ConfusionMatrix {
        positive,
        ..Default::default()
    };
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == positive, t == positive) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `(TP + TN) / (TP + FP + FN + TN)`.
    pub fn accuracy(&self) -> MetricsResult<f64> {
        match self.total() {
            0 => Err(MetricsError::Undefined("accuracy of an empty matrix")),
            n => Ok((self.tp + self.tn) as f64 / n as f64),
        }
    }

    /// `TP / (TP + FN)`.
    pub fn recall(&self) -> MetricsResult<f64> {
        match self.tp + self.fn_ {
            0 => Err(MetricsError::Undefined("recall without positive samples")),
            n => Ok(self.tp as f64 / n as f64),
        }
    }
}

/// Plain top-1 accuracy over any number of classes.
pub fn top1_accuracy(pred: &[usize], truth: &[usize]) -> MetricsResult<f64> {
    if pred.len() != truth.len() {
        return Err(MetricsError::Length(pred.len(), truth.len()));
    }
    // Every sample is "positive"; correct ones are TP, mistakes FN.
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    let cm = ConfusionMatrix {
        tp: correct,
        fn_: pred.len() - correct,
        ..Default::default()
    };
    cm.accuracy()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive; `+inf` for the origin.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC over every distinct score, equal scores forming one step, with the
/// area by the trapezoid rule.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> MetricsResult<(Vec<RocPoint>, f64)> {
    if scores.len() != positive.len() {
        return Err(MetricsError::Length(scores.len(), positive.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::Undefined("scores contain NaN"));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::Undefined("ROC needs both classes present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    let auc = curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok((curve, auc))
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> MetricsResult<()> {
    let err = |e: csv::Error| MetricsError::Write {
        path: path.display().to_string(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| MetricsError::Write {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Summary of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub samples: usize,
    pub top1_accuracy: f64,
    pub cm: ConfusionMatrix,
    pub accuracy: f64,
    pub recall: Option<f64>,
    pub auc: Option<f64>,
}

impl EvalReport {
    /// Computes every metric from argmax predictions and per-class
    /// probabilities (`proba` is row-major `[N, classes]`).
    pub fn compute(
        split: &str,
        pred: &[usize],
        truth: &[usize],
        proba: &[f64],
        classes: usize,
        positive: usize,
    ) -> MetricsResult<(Self, Option<Vec<RocPoint>>)> {
        if proba.len() != pred.len() * classes {
            return Err(MetricsError::Length(proba.len(), pred.len() * classes));
        }
        let cm = confusion(pred, truth, positive)?;
        let scores: Vec<f64> = proba.chunks(classes).map(|row| row[positive]).collect();
        let is_pos: Vec<bool> = truth.iter().map(|t| *t == positive).collect();
        let roc = roc_auc(&scores, &is_pos).ok();
        let report = Self {
            split: split.to_owned(),
            samples: pred.len(),
            top1_accuracy: top1_accuracy(pred, truth)?,
            accuracy: cm.accuracy()?,
            recall: cm.recall().ok(),
            auc: roc.as_ref().map(|r| r.1),
            cm,
        };
        Ok((report, roc.map(|r| r.0)))
    }

    /// `metric,value` rows; percentages carry three decimals.
    pub fn write_csv(&self, path: &Path) -> MetricsResult<()> {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
        let pct = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{:.3}", 100.0 * x));
        let rows: Vec<Vec<String>> = [
            ("split", self.split.clone()),
            ("samples", self.samples.to_string()),
            ("positive_class", self.cm.positive.to_string()),
            ("top1_accuracy", self.top1_accuracy.to_string()),
            ("top1_accuracy_pct", pct(Some(self.top1_accuracy))),
            ("accuracy", self.accuracy.to_string()),
            ("accuracy_pct", pct(Some(self.accuracy))),
            ("recall", opt(self.recall)),
            ("recall_pct", pct(self.recall)),
            ("auc", opt(self.auc)),
            ("tp", self.cm.tp.to_string()),
            ("fp", self.cm.fp.to_string()),
            ("fn", self.cm.fn_.to_string()),
            ("tn", self.cm.tn.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), v])
        .collect();
        write_rows(path, &["metric", "value"], &rows)
    }
}

pub fn write_roc_csv(path: &Path, curve: &[RocPoint]) -> MetricsResult<()> {
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|p| vec![p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
        .collect();
    write_rows(path, &["threshold", "fpr", "tpr"], &rows)
}

/// One row per sample: source, label, prediction and class probabilities.
pub fn write_predictions_csv(
    path: &Path,
    sources: &[String],
    truth: &[usize],
    pred: &[usize],
    proba: &[f64],
    classes: usize,
) -> MetricsResult<()> {
    let mut header = vec!["path".to_string(), "label".into(), "pred".into()];
    header.extend((0..classes).map(|c| format!("p{c}")));
    let rows: Vec<Vec<String>> = (0..pred.len())
        .map(|i| {
            let mut r = vec![sources[i].clone(), truth[i].to_string(), pred[i].to_string()];
            r.extend(proba[i * classes..(i + 1) * classes].iter().map(|p| p.to_string()));
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(path, &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let cm = ConfusionMatrix {
            tp: 55,
            fn_: 3,
            fp: 2,
            tn: 40,
            positive: 1,
        };
        assert!((cm.accuracy().unwrap() - 0.95).abs() < 1e-15);
        assert!((cm.recall().unwrap() - 55.0 / 58.0).abs() < 1e-15);
        assert!(ConfusionMatrix::default().accuracy().is_err());
    }

    #[test]
    fn perfect_split_counts() {
        let truth: Vec<usize> = (0..100).map(|i| usize::from(i >= 42)).collect();
        let cm = confusion(&truth, &truth, 1).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (58, 42, 0, 0));
        let all_pos = vec![1; 100];
        assert_eq!(confusion(&all_pos, &truth, 1).unwrap().fp, 42);
        let all_neg = vec![0; 100];
        assert_eq!(confusion(&all_neg, &truth, 1).unwrap().recall().unwrap(), 0.0);
    }

    #[test]
    fn swapping_roles_transposes_errors() {
        let a = [0, 1, 1, 0, 1, 2];
        let b = [1, 1, 0, 0, 2, 1];
        let x = confusion(&a, &b, 1).unwrap();
        let y = confusion(&b, &a, 1).unwrap();
        assert_eq!((x.fp, x.fn_), (y.fn_, y.fp));
    }

    #[test]
    fn roc_extremes() {
        let (curve, auc) = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(curve.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(curve.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        let (curve, auc) = roc_auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(curve.len(), 2);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn top1_counts_correct_rows() {
        assert_eq!(top1_accuracy(&[0, 1, 2, 3], &[0, 1, 3, 3]).unwrap(), 0.75);
        assert!(top1_accuracy(&[0], &[0, 1]).is_err());
    }
}

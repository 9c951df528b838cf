use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::data::Task;

pub const METRICS_SCHEMA: &str = "pipmn.metrics/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Per-label accuracy (multilabel only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

/// Evaluation record. Multiclass runs fill `accuracy`, `macro_precision`,
/// `macro_f1`, `micro_f1` and the confusion matrix (rows = truth);
/// multilabel runs fill `example_acc` (mean Jaccard), `label_macro_acc`
/// (mean per-label accuracy) and `label_micro_f1` (pooled counts).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub task: Task,
    pub examples: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub macro_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub micro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub example_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label_macro_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label_micro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassRow>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

impl MetricsReport {
    /// The headline number: accuracy or example-based accuracy.
    pub fn headline(&self) -> f64 {
        self.accuracy.or(self.example_acc).unwrap_or(0.0)
    }

    /// `(name, value)` for every populated scalar metric.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        [
            ("accuracy", self.accuracy),
            ("macro_precision", self.macro_precision),
            ("macro_f1", self.macro_f1),
            ("micro_f1", self.micro_f1),
            ("example_acc", self.example_acc),
            ("label_macro_acc", self.label_macro_acc),
            ("label_micro_f1", self.label_micro_f1),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    /// Aligned plain-text rendering.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:>10}\n", "metric", "value");
        for (k, v) in self.scalars() {
            out += &format!("{k:<16} {v:>10.4}\n");
        }
        if let Some(l) = self.loss {
            out += &format!("{:<16} {l:>10.4}\n", "loss");
        }
        out += &format!("{:<16} {:>10}\n\n", "examples", self.examples);
        let w = self
            .per_class
            .iter()
            .map(|r| r.class.len())
            .max()
            .unwrap_or(5)
            .max(5);
        out += &format!(
            "{:<w$} {:>8} {:>9} {:>8} {:>8}\n",
            "class", "support", "precision", "recall", "f1"
        );
        for r in &self.per_class {
            out += &format!(
                "{:<w$} {:>8} {:>9.4} {:>8.4} {:>8.4}\n",
                r.class, r.support, r.precision, r.recall, r.f1
            );
        }
        out
    }
}

/// Argmax-style metrics. Per-class precision/recall/F1 use 0 for 0/0.
pub fn multiclass_metrics(truth: &[usize], pred: &[usize], names: &[String]) -> Result<MetricsReport> {
    let c = names.len();
    if truth.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    if truth.len() != pred.len() {
        return Err(TrainError::Invalid("prediction and truth lengths differ".into()));
    }
    if let Some(&bad) = truth.iter().chain(pred).find(|&&v| v >= c) {
        return Err(TrainError::Invalid(format!(
            "class {bad} out of range for {c} classes"
        )));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t][p] += 1;
    }
    let n = truth.len();
    let tp_total: usize = (0..c).map(|i| confusion[i][i]).sum();
    let per_class: Vec<ClassRow> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|r| r[k]).sum();
            ClassRow {
                class: names[k].clone(),
                support,
                precision: ratio(tp, predicted),
                recall: ratio(tp, support),
                f1: f1(tp, predicted - tp, support - tp),
                accuracy: None,
            }
        })
        .collect();
    let mean = |f: fn(&ClassRow) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    let accuracy = ratio(tp_total, n);
    // pooled FP and FN both equal n − TP for single-label predictions
    let micro_f1 = f1(tp_total, n - tp_total, n - tp_total);
    assert_eq!(
        micro_f1, accuracy,
        "micro-F1 must equal accuracy for single-label data"
    );
    Ok(MetricsReport {
        schema: METRICS_SCHEMA.into(),
        task: Task::Multiclass,
        examples: n,
        loss: None,
        accuracy: Some(accuracy),
        macro_precision: Some(mean(|r| r.precision)),
        macro_f1: Some(mean(|r| r.f1)),
        micro_f1: Some(micro_f1),
        example_acc: None,
        label_macro_acc: None,
        label_micro_f1: None,
        confusion,
        per_class,
    })
}

/// Set-based metrics over `examples × classes` 0/1 matrices. An example
/// with empty truth and empty prediction counts as a perfect match, and
/// pooled F1 is 1 when there are no positives anywhere.
pub fn multilabel_metrics(truth: &[bool], pred: &[bool], names: &[String]) -> Result<MetricsReport> {
    let c = names.len();
    if c == 0 {
        return Err(TrainError::Invalid("no classes".into()));
    }
    if truth.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    if truth.len() != pred.len() || !truth.len().is_multiple_of(c) {
        return Err(TrainError::Invalid("multilabel matrices do not conform".into()));
    }
    let n = truth.len() / c;
    let mut jaccard = 0.0;
    let (mut tp, mut fp, mut fn_, mut correct) = (vec![0; c], vec![0; c], vec![0; c], vec![0; c]);
    for (t, p) in truth.chunks(c).zip(pred.chunks(c)) {
        let inter = t.iter().zip(p).filter(|(a, b)| **a && **b).count();
        let union = t.iter().zip(p).filter(|(a, b)| **a || **b).count();
        jaccard += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
        for k in 0..c {
            match (t[k], p[k]) {
                (true, true) => tp[k] += 1,
                (false, true) => fp[k] += 1,
                (true, false) => fn_[k] += 1,
                (false, false) => {}
            }
            if t[k] == p[k] {
                correct[k] += 1;
            }
        }
    }
    let per_class: Vec<ClassRow> = (0..c)
        .map(|k| ClassRow {
            class: names[k].clone(),
            support: tp[k] + fn_[k],
            precision: ratio(tp[k], tp[k] + fp[k]),
            recall: ratio(tp[k], tp[k] + fn_[k]),
            f1: f1(tp[k], fp[k], fn_[k]),
            accuracy: Some(ratio(correct[k], n)),
        })
        .collect();
    let (stp, sfp, sfn): (usize, usize, usize) = (tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    let micro = if stp + sfp + sfn == 0 {
        1.0
    } else {
        f1(stp, sfp, sfn)
    };
    Ok(MetricsReport {
        schema: METRICS_SCHEMA.into(),
        task: Task::Multilabel,
        examples: n,
        loss: None,
        accuracy: None,
        macro_precision: None,
        macro_f1: None,
        micro_f1: None,
        example_acc: Some(jaccard / n as f64),
        label_macro_acc: Some(per_class.iter().map(|r| r.accuracy.unwrap_or(0.0)).sum::<f64>() / c as f64),
        label_micro_f1: Some(micro),
        confusion: Vec::new(),
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn hand_case() {
        let r = multiclass_metrics(&[0, 0, 1, 2], &[0, 1, 1, 2], &names(3)).unwrap();
        assert_eq!(r.accuracy, Some(0.75));
        assert!((r.macro_precision.unwrap() - 2.5 / 3.0).abs() < 1e-15);
        assert!((r.macro_f1.unwrap() - 7.0 / 9.0).abs() < 1e-15);
        assert_eq!(r.micro_f1, Some(0.75));
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        for (row, class) in r.confusion.iter().zip(&r.per_class) {
            assert_eq!(row.iter().sum::<usize>(), class.support);
        }
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1];
        let r = multiclass_metrics(&y, &y, &names(3)).unwrap();
        assert!(r.scalars().iter().all(|(_, v)| *v == 1.0));
    }

    #[test]
    fn absent_class_scores_zero() {
        let r = multiclass_metrics(&[0, 0], &[0, 0], &names(2)).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.macro_precision, Some(0.5));
    }

    #[test]
    fn multilabel_hand_case() {
        // Y = {a}, Ŷ = {a, b}
        let r = multilabel_metrics(&[true, false, false], &[true, true, false], &names(3)).unwrap();
        assert_eq!(r.example_acc, Some(0.5));
        assert!((r.label_macro_acc.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.label_micro_f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn multilabel_exact_and_empty() {
        let t = [true, false, true, false, false, false];
        let r = multilabel_metrics(&t, &t, &names(3)).unwrap();
        assert_eq!(r.example_acc, Some(1.0));
        assert_eq!(r.label_macro_acc, Some(1.0));
        assert_eq!(r.label_micro_f1, Some(1.0));
        let e = [false; 6];
        assert_eq!(
            multilabel_metrics(&e, &e, &names(3)).unwrap().example_acc,
            Some(1.0)
        );
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(matches!(
            multiclass_metrics(&[], &[], &names(2)),
            Err(TrainError::EmptyEvaluation)
        ));
    }

    #[test]
    fn report_json_round_trip() {
        let r = multiclass_metrics(&[0, 1, 1], &[0, 1, 0], &names(2)).unwrap();
        let back: MetricsReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.table().contains("macro_f1"));
    }
}

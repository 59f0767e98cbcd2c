//! Multi-label evaluation: per-class average precision, mAP, per-class and
//! micro-averaged F1.
//!
//! A class is *evaluable* when it has at least one positive sample. Only
//! evaluable classes enter the mAP and F1-C means.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// AP of one class; `None` when the class has no positives.
///
/// Samples are ranked by descending score, ties by ascending index, and AP is
/// the mean of precision@rank over the positive ranks.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] != 0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

fn check_shapes<T, U>(a: &[Vec<T>], b: &[Vec<U>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} score rows against {} label rows", a.len(), b.len())));
    }
    let classes = b.first().map_or(0, Vec::len);
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != classes || y.len() != classes {
            return Err(Error::shape(format!(
                "row {i} has {} scores and {} labels, expected {classes}",
                x.len(),
                y.len()
            )));
        }
    }
    Ok(classes)
}

fn column<T: Copy>(rows: &[Vec<T>], k: usize) -> Vec<T> {
    rows.iter().map(|r| r[k]).collect()
}

/// Per-class AP over a `samples x classes` score matrix.
pub fn per_class_ap(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<Vec<Option<f64>>> {
    let classes = check_shapes(scores, labels)?;
    Ok((0..classes)
        .map(|k| average_precision(&column(scores, k), &column(labels, k)))
        .collect())
}

fn mean_evaluable(values: impl IntoIterator<Item = Option<f64>>) -> Result<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(Error::usage("no class has a positive sample"));
    }
    Ok(sum / n as f64)
}

pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<f64> {
    mean_evaluable(per_class_ap(scores, labels)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn f1(self) -> f64 {
        // 2PR/(P+R) == 2TP/(2TP+FP+FN), and 0 when TP is 0.
        if self.tp == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Scores {
    pub f1_c: f64,
    pub f1_o: f64,
    pub per_class: Vec<f64>,
}

pub fn f1_scores(preds: &[Vec<u8>], labels: &[Vec<u8>]) -> Result<F1Scores> {
    let classes = check_shapes(preds, labels)?;
    let mut per = vec![Counts::default(); classes];
    for (p, y) in preds.iter().zip(labels) {
        for (k, c) in per.iter_mut().enumerate() {
            match (p[k] != 0, y[k] != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let pooled = per.iter().fold(Counts::default(), |a, c| Counts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
    });
    let per_class: Vec<f64> = per.iter().map(|c| c.f1()).collect();
    let evaluable = per
        .iter()
        .zip(&per_class)
        .map(|(c, &f)| (c.tp + c.fn_ > 0).then_some(f));
    let f1_c = mean_evaluable(evaluable).unwrap_or(0.0);
    Ok(F1Scores {
        f1_c,
        f1_o: pooled.f1(),
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub threshold: f64,
    /// `None` for classes without positives.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub f1_c: f64,
    pub f1_o: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
    pub evaluable_classes: usize,
}

impl MetricsReport {
    pub fn compute(probs: &[Vec<f64>], labels: &[Vec<u8>], threshold: f64) -> Result<Self> {
        let per_class_ap = per_class_ap(probs, labels)?;
        let map = mean_evaluable(per_class_ap.iter().copied())?;
        let preds: Vec<Vec<u8>> = probs.iter().map(|p| crate::model::predict(p, threshold)).collect();
        let f1 = f1_scores(&preds, labels)?;
        let classes = per_class_ap.len();
        let support: Vec<usize> = (0..classes)
            .map(|k| labels.iter().filter(|y| y[k] != 0).count())
            .collect();
        Ok(Self {
            samples: probs.len(),
            threshold,
            evaluable_classes: support.iter().filter(|&&s| s > 0).count(),
            per_class_ap,
            map,
            f1_c: f1.f1_c,
            f1_o: f1.f1_o,
            per_class_f1: f1.per_class,
            support,
        })
    }

    /// Aligned-column text rendering.
    pub fn to_text(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}: {} samples, threshold {}", self.samples, self.threshold);
        let _ = writeln!(s, "  mAP   {:.4}", self.map);
        let _ = writeln!(
            s,
            "  F1-C  {:.4}  (mean over {} classes with positives)",
            self.f1_c, self.evaluable_classes
        );
        let _ = writeln!(s, "  F1-O  {:.4}", self.f1_o);
        let _ = writeln!(s, "  {:>5}  {:>7}  {:>8}  {:>6}", "class", "support", "AP", "F1");
        for k in 0..self.support.len() {
            let ap = self.per_class_ap[k].map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "  {:>5}  {:>7}  {:>8}  {:>6.4}",
                k, self.support[k], ap, self.per_class_f1[k]
            );
        }
        s
    }
}

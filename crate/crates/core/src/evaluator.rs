//! Accuracy, mean BCE loss, confusion matrix, ROC curve and AUC.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::nn::{bce_loss, Network, NnError, Tensor};
use crate::trainer::Sample;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("ROC analysis needs both classes; only {0} present")]
    SingleClass(&'static str),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// SR is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub r#fn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.r#fn
    }
}

/// SR probability of one document matrix (inference mode).
pub fn predict(net: &Network, input: &Tensor) -> Result<f64, EvalError> {
    Ok(net.predict_sr(input)?)
}

fn check_lengths(scores: &[f64], labels: &[Label]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// A score at or above `threshold` predicts SR.
pub fn confusion(scores: &[f64], labels: &[Label], threshold: f64) -> Result<ConfusionMatrix, EvalError> {
    check_lengths(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, Label::Sr) => cm.tp += 1,
            (true, Label::NonSr) => cm.fp += 1,
            (false, Label::Sr) => cm.r#fn += 1,
            (false, Label::NonSr) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// `(TP + TN) / (TP + TN + FP + FN)`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    match cm.total() {
        0 => Err(EvalError::Empty),
        n => Ok((cm.tp + cm.tn) as f64 / n as f64),
    }
}

fn class_counts(labels: &[Label]) -> Result<(usize, usize), EvalError> {
    let pos = labels.iter().filter(|&&l| l == Label::Sr).count();
    let neg = labels.len() - pos;
    match (pos, neg) {
        (0, 0) => Err(EvalError::Empty),
        (0, _) => Err(EvalError::SingleClass("non-SR")),
        (_, 0) => Err(EvalError::SingleClass("SR")),
        counts => Ok(counts),
    }
}

/// `(FPR, TPR)` points from sweeping the threshold down through every
/// distinct score. Tied scores move together, giving one diagonal step.
pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<Vec<(f64, f64)>, EvalError> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            match labels[order[i]] {
                Label::Sr => tp += 1,
                Label::NonSr => fp += 1,
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under [`roc_curve`].
pub fn auc_trapezoid(scores: &[f64], labels: &[Label]) -> Result<f64, EvalError> {
    let roc = roc_curve(scores, labels)?;
    Ok(roc
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// Probability that a random SR sample outscores a random non-SR sample,
/// ties counting one half. Computed from midranks.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64, EvalError> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * order[i..j].iter().filter(|&&k| labels[k] == Label::Sr).count() as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn mean_loss(scores: &[f64], labels: &[Label]) -> Result<f64, EvalError> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(scores.iter().zip(labels).map(|(&p, l)| bce_loss(p, l.target())).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Mean binary cross-entropy over the set.
    pub loss: f64,
    pub loss_reduction: String,
    pub accuracy: f64,
    /// Absent when only one class is present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub auc_available: bool,
    pub threshold: f64,
    pub n_samples: usize,
    pub confusion: ConfusionMatrix,
    pub roc: Vec<(f64, f64)>,
}

impl EvaluationReport {
    pub fn from_scores(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Self, EvalError> {
        let loss = mean_loss(scores, labels)?;
        let cm = confusion(scores, labels, threshold)?;
        let (auc, roc) = match class_counts(labels) {
            Ok(_) => (Some(auc(scores, labels)?), roc_curve(scores, labels)?),
            Err(EvalError::SingleClass(_)) => (None, Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(EvaluationReport {
            loss,
            loss_reduction: "mean".into(),
            accuracy: accuracy(&cm)?,
            auc_available: auc.is_some(),
            auc,
            threshold,
            n_samples: scores.len(),
            confusion: cm,
            roc,
        })
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.roc {
            writeln!(out, "{f},{t}").unwrap();
        }
        out
    }
}

/// Overall report plus one per document source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub overall: EvaluationReport,
    pub by_source: BTreeMap<String, EvaluationReport>,
}

pub fn score_samples(net: &Network, samples: &[Sample]) -> Result<Vec<f64>, EvalError> {
    samples.iter().map(|s| predict(net, &s.input)).collect()
}

pub fn evaluate(net: &Network, samples: &[Sample], threshold: f64) -> Result<EvaluationSummary, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let scores = score_samples(net, samples)?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let overall = EvaluationReport::from_scores(&scores, &labels, threshold)?;
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<Label>)> = BTreeMap::new();
    for (s, &score) in samples.iter().zip(&scores) {
        let g = groups.entry(s.source.as_str().to_string()).or_default();
        g.0.push(score);
        g.1.push(s.label);
    }
    let by_source = groups
        .into_iter()
        .map(|(k, (sc, lb))| Ok((k, EvaluationReport::from_scores(&sc, &lb, threshold)?)))
        .collect::<Result<_, EvalError>>()?;
    Ok(EvaluationSummary { overall, by_source })
}

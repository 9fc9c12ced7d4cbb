//! Accuracy, ROC AUC and PR AUC.
//!
//! ROC AUC uses the Mann-Whitney formulation with ties counted as one half, which
//! equals trapezoidal integration of the ROC curve. PR AUC is average precision:
//! a descending-score sweep where tied scores form a single threshold step.
//! Metrics that are undefined for the input return [`Error::UndefinedMetric`]
//! and are recorded as absent rather than zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkernel::Matrix;

/// Fraction of predictions equal to the clean labels.
pub fn accuracy(pred_labels: &[usize], clean_labels: &[usize]) -> Result<f64> {
    if pred_labels.len() != clean_labels.len() {
        return Err(Error::config(format!(
            "{} predictions for {} labels",
            pred_labels.len(),
            clean_labels.len()
        )));
    }
    if pred_labels.is_empty() {
        return Err(Error::config("accuracy of an empty set"));
    }
    let hits = pred_labels.iter().zip(clean_labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred_labels.len() as f64)
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::config(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    Ok(())
}

/// Indices sorted by score, plus the `[start, end)` ranges of tied groups.
fn tie_groups(scores: &[f64], descending: bool) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if descending {
            o.reverse()
        } else {
            o
        }
    });
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || scores[order[i]] != scores[order[start]] {
            groups.push((start, i));
            start = i;
        }
    }
    (order, groups)
}

/// Probability that a random positive outranks a random negative (ties ½).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC AUC needs both positives and negatives".into()));
    }
    let (order, groups) = tie_groups(scores, false);
    let mut rank_sum = 0.0;
    for (start, end) in groups {
        // 1-based average rank of the tied block
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let p = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += avg_rank * p as f64;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision: `Σ (R_k − R_{k−1}) · P_k` over descending score thresholds.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("PR AUC needs at least one positive".into()));
    }
    let (order, groups) = tie_groups(scores, true);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for (start, end) in groups {
        let p = order[start..end].iter().filter(|&&i| labels[i]).count();
        tp += p;
        seen += end - start;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

fn one_vs_rest(prob_matrix: &Matrix, labels: &[usize], class: usize) -> (Vec<f64>, Vec<bool>) {
    let scores = prob_matrix.iter_rows().map(|r| r[class]).collect();
    let bin = labels.iter().map(|&l| l == class).collect();
    (scores, bin)
}

fn check_matrix(prob_matrix: &Matrix, labels: &[usize]) -> Result<()> {
    if prob_matrix.rows() != labels.len() {
        return Err(Error::config(format!(
            "{} probability rows for {} labels",
            prob_matrix.rows(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= prob_matrix.cols()) {
        return Err(Error::config(format!("label {l} out of range for {} classes", prob_matrix.cols())));
    }
    Ok(())
}

/// Unweighted macro mean of one-vs-rest ROC AUC. Undefined unless every class
/// occurs (and at least one other class does too).
pub fn multiclass_roc_auc(prob_matrix: &Matrix, labels: &[usize]) -> Result<f64> {
    check_matrix(prob_matrix, labels)?;
    let c = prob_matrix.cols();
    let mut total = 0.0;
    for k in 0..c {
        let (s, b) = one_vs_rest(prob_matrix, labels, k);
        total += roc_auc(&s, &b).map_err(|_| Error::UndefinedMetric(format!("class {k} absent or alone")))?;
    }
    Ok(total / c as f64)
}

/// Macro mean of one-vs-rest average precision over the classes that occur.
pub fn multiclass_pr_auc(prob_matrix: &Matrix, labels: &[usize]) -> Result<f64> {
    check_matrix(prob_matrix, labels)?;
    let mut total = 0.0;
    let mut counted = 0;
    for k in 0..prob_matrix.cols() {
        let (s, b) = one_vs_rest(prob_matrix, labels, k);
        if b.iter().any(|&x| x) {
            total += pr_auc(&s, &b)?;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::UndefinedMetric("no labels".into()));
    }
    Ok(total / counted as f64)
}

/// Metrics of one client model on the clean test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub accuracy: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    /// Mean SL loss on the client's own (noisy) training labels.
    pub mean_sl_loss: f64,
}

/// Defined metrics survive, undefined ones become `None`; other errors propagate.
pub fn optional(metric: Result<f64>) -> Result<Option<f64>> {
    match metric {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl ClientEval {
    pub fn from_probs(prob_matrix: &Matrix, clean_labels: &[usize], mean_sl_loss: f64) -> Result<Self> {
        let preds: Vec<usize> = prob_matrix
            .iter_rows()
            .map(|r| {
                // first maximum wins ties
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect();
        Ok(ClientEval {
            accuracy: accuracy(&preds, clean_labels)?,
            roc_auc: optional(multiclass_roc_auc(prob_matrix, clean_labels))?,
            pr_auc: optional(multiclass_pr_auc(prob_matrix, clean_labels))?,
            mean_sl_loss,
        })
    }
}

/// Round-level averages over clients. Absent per-client values are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub mean_sl_loss: f64,
    pub per_client: BTreeMap<usize, ClientEval>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalResult {
    pub fn from_clients(per_client: BTreeMap<usize, ClientEval>) -> Result<Self> {
        if per_client.is_empty() {
            return Err(Error::config("no client evaluations"));
        }
        let vals = || per_client.values();
        Ok(EvalResult {
            accuracy: mean_of(vals().map(|e| e.accuracy)).unwrap_or_default(),
            roc_auc: mean_of(vals().filter_map(|e| e.roc_auc)),
            pr_auc: mean_of(vals().filter_map(|e| e.pr_auc)),
            mean_sl_loss: mean_of(vals().map(|e| e.mean_sl_loss)).unwrap_or_default(),
            per_client,
        })
    }
}

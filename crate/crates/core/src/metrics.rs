//! Precision, recall, F1 and average precision for binary node classification.
//! Fraud is the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full evaluation bundle for one scored node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pr_auc: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub threshold: f64,
    /// Set when no sample was predicted positive (precision reported as 0).
    pub precision_undefined: bool,
    /// Set when no positive label exists (recall and PR-AUC reported as 0).
    pub recall_undefined: bool,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

fn validate(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Contract("no samples to evaluate".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {l} is not binary")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    Ok(())
}

/// Threshold rule `score ≥ threshold ⇒ fraud`. PR-AUC is left at 0; see
/// [`evaluate`] for the full report.
pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    validate(scores, labels)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision_undefined = tp + fp == 0;
    let recall_undefined = tp + fn_ == 0;
    let precision = if precision_undefined { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if recall_undefined { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        precision,
        recall,
        f1,
        pr_auc: 0.0,
        tp,
        fp,
        fn_,
        tn,
        threshold,
        precision_undefined,
        recall_undefined,
        scores: scores.to_vec(),
        labels: labels.to_vec(),
    })
}

/// Average precision: `Σ (Rₙ − Rₙ₋₁)·Pₙ` over descending distinct scores, with
/// all samples sharing a score entering as one block.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    validate(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l == 1).count();
    if total_pos == 0 {
        return Err(Error::Contract("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Confusion metrics at `threshold` plus average precision. With no positive
/// labels, PR-AUC is reported as 0 and `recall_undefined` is set.
pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    let mut r = confusion_metrics(scores, labels, threshold)?;
    if !r.recall_undefined {
        r.pr_auc = pr_auc(scores, labels)?;
    }
    Ok(r)
}

/// Scored test nodes before metric computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportInputs {
    pub nodes: Vec<usize>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Forces the score of every test node that is already a known fraud from
/// training to 1.0. Returns the overridden node ids.
pub fn apply_known_fraud_overrides(inputs: &mut ReportInputs, train_known_fraud: &[usize]) -> Vec<usize> {
    let known: std::collections::HashSet<usize> = train_known_fraud.iter().copied().collect();
    let mut hit = Vec::new();
    for (node, score) in inputs.nodes.iter().zip(inputs.scores.iter_mut()) {
        if known.contains(node) {
            *score = 1.0;
            hit.push(*node);
        }
    }
    hit
}

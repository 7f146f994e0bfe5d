//! Evaluation protocols: per-class F1 under hard (N+1)-way prediction, and
//! per-class average precision under confidence ranking.
//!
//! AP is the interpolation-free retrieval definition: sort descending by
//! confidence (ties broken by ascending position, which callers arrange to
//! be ascending example id), then average the precision at each positive
//! rank.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::model::{forward_trunk, main_logits, ModelParams};
use crate::trainer::TrainConfig;
use crate::loss;

/// Scores for one test example.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    /// Hard (N+1)-way label; 0 = background.
    pub hard_label: usize,
    /// `confidences[n-1] = p(y = n | x)` for each foreground class.
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub n_foreground: usize,
    pub predictions: Vec<Prediction>,
}

/// Metrics for one foreground class.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassMetrics {
    /// Label index within this report's manifest (1-based).
    pub class_index: usize,
    /// Source category id.
    pub category: String,
    pub ap: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Number of test positives.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    /// Mean per-class AP.
    pub mean_ap: f64,
    /// Mean per-class F1.
    pub mean_f1: f64,
}

fn score_example(
    params: &ModelParams,
    x: &[f64],
    config: &TrainConfig,
) -> Result<(usize, Vec<f64>)> {
    let features = forward_trunk(params, x)?;
    let logits = main_logits(params, &features);
    if config.use_thresholding {
        let b0 = params.background_clamp.unwrap_or(config.b0);
        let probs = loss::bg_thresholded_softmax(&logits[1..], b0)?;
        // Background wins unless some foreground logit strictly exceeds b0.
        let mut best = 0usize;
        let mut best_z = b0;
        for (j, &z) in logits[1..].iter().enumerate() {
            if z > best_z {
                best = j + 1;
                best_z = z;
            }
        }
        Ok((best, probs.foreground))
    } else {
        let probs = loss::softmax(&logits)?;
        // Argmax over the learned slots; ties keep the lowest slot, so an
        // exact tie with the background prefers background.
        let mut best = 0usize;
        for (j, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = j;
            }
        }
        Ok((best, probs.foreground))
    }
}

/// Hard labels and per-class confidences for every test example, in manifest
/// order.
pub fn hard_predictions(
    params: &ModelParams,
    manifest: &DatasetManifest,
    config: &TrainConfig,
) -> Result<PredictionSet> {
    if params.n_foreground() != manifest.n_foreground {
        return Err(Error::Config(format!(
            "model has {} foreground classes, manifest has {}",
            params.n_foreground(),
            manifest.n_foreground
        )));
    }
    let mut predictions = Vec::new();
    for ex in manifest.examples.iter().filter(|e| e.split == Split::Test) {
        let (hard_label, confidences) = score_example(params, &ex.features, config)?;
        predictions.push(Prediction {
            id: ex.id.clone(),
            hard_label,
            confidences,
        });
    }
    Ok(PredictionSet {
        n_foreground: manifest.n_foreground,
        predictions,
    })
}

/// Per-class precision, recall, and F1 for foreground classes `1..=n`.
/// Any 0/0 resolves to 0.
pub fn f1_per_class(
    predicted: &[usize],
    truth: &[usize],
    n_foreground: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if let Some(&bad) = predicted.iter().chain(truth.iter()).find(|&&l| l > n_foreground) {
        return Err(Error::InvalidLabel(format!(
            "label {bad} out of range for N = {n_foreground}"
        )));
    }
    let mut out = Vec::with_capacity(n_foreground);
    for class in 1..=n_foreground {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &t) in predicted.iter().zip(truth.iter()) {
            match (p == class, t == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        out.push((precision, recall, f1));
    }
    Ok(out)
}

/// Average precision of a ranking: sort descending by confidence (ties by
/// ascending position) and average precision-at-rank over positive ranks.
pub fn average_precision(confidences: &[f64], positives: &[bool]) -> Result<f64> {
    if confidences.len() != positives.len() {
        return Err(Error::InvalidInput(format!(
            "{} confidences for {} labels",
            confidences.len(),
            positives.len()
        )));
    }
    if confidences.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput(String::from("non-finite confidence")));
    }
    let total_pos = positives.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric(String::from(
            "average precision needs at least one positive",
        )));
    }

    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| {
        confidences[b]
            .partial_cmp(&confidences[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / total_pos as f64)
}

/// Evaluate a trained model on the manifest's test split.
///
/// Per-class AP comes from the confidence ranking (ties broken by ascending
/// example id), per-class F1 from the hard predictions. Every foreground
/// class must have at least one test positive.
pub fn evaluate(
    params: &ModelParams,
    manifest: &DatasetManifest,
    config: &TrainConfig,
) -> Result<EvalReport> {
    let set = hard_predictions(params, manifest, config)?;
    let mut truth: Vec<usize> = Vec::with_capacity(set.predictions.len());
    for ex in manifest.examples.iter().filter(|e| e.split == Split::Test) {
        truth.push(ex.main_label);
    }

    // Order by ascending example id so AP tie-breaking is id-based.
    let mut order: Vec<usize> = (0..set.predictions.len()).collect();
    order.sort_by(|&a, &b| set.predictions[a].id.cmp(&set.predictions[b].id));

    let n = manifest.n_foreground;
    let hard: Vec<usize> = set.predictions.iter().map(|p| p.hard_label).collect();
    let prf = f1_per_class(&hard, &truth, n)?;

    let mut per_class = Vec::with_capacity(n);
    for class in 1..=n {
        let confidences: Vec<f64> = order
            .iter()
            .map(|&i| set.predictions[i].confidences[class - 1])
            .collect();
        let positives: Vec<bool> = order.iter().map(|&i| truth[i] == class).collect();
        let support = positives.iter().filter(|&&p| p).count();
        if support == 0 {
            return Err(Error::Config(format!(
                "foreground class {} ({}) has no test positives",
                class,
                manifest.foreground_categories[class - 1]
            )));
        }
        let ap = average_precision(&confidences, &positives)?;
        let (precision, recall, f1) = prf[class - 1];
        per_class.push(ClassMetrics {
            class_index: class,
            category: manifest.foreground_categories[class - 1].clone(),
            ap,
            f1,
            precision,
            recall,
            support,
        });
    }
    aggregate(per_class)
}

fn aggregate(per_class: Vec<ClassMetrics>) -> Result<EvalReport> {
    if per_class.is_empty() {
        return Err(Error::Config(String::from("report has no classes")));
    }
    let n = per_class.len() as f64;
    let mean_ap = per_class.iter().map(|c| c.ap).sum::<f64>() / n;
    let mean_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / n;
    Ok(EvalReport {
        per_class,
        mean_ap,
        mean_f1,
    })
}

/// Concatenate reports over disjoint class sets and recompute the macro
/// means, as used by the subset-family protocols.
pub fn average_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::Config(String::from("no reports to average")));
    }
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut per_class = Vec::new();
    for report in reports {
        for row in &report.per_class {
            if !seen.insert(row.category.as_str()) {
                return Err(Error::Config(format!(
                    "category {} appears in more than one report",
                    row.category
                )));
            }
            per_class.push(row.clone());
        }
    }
    aggregate(per_class)
}

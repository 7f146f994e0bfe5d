//! Softmax variants, cross-entropy, and the multi-task loss composition.
//!
//! Two scoring rules share one formula. The plain rule is an (N+1)-way
//! softmax whose slot 0 is a learned background logit. The thresholded rule
//! replaces slot 0 with a fixed constant `b0`:
//!
//! ```text
//! p(y = n | x) = exp(z_n) / (exp(b0) + sum_i exp(z_i)),   n in 1..=N
//! ```
//!
//! so the foreground probabilities sum to less than 1 and the residual mass
//! `exp(b0) / denominator` is the background probability. An example is
//! classified as background exactly when every foreground logit falls below
//! `b0`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Probabilities are floored at this value inside `ln` so that a confident
/// wrong prediction yields a large but finite loss.
pub const PROB_FLOOR: f64 = 1e-30;

/// Class probabilities for one example: `foreground[n-1] = p(y = n | x)` and
/// the background mass `p(y = 0 | x)`. Entries sum to 1 up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    pub foreground: Vec<f64>,
    pub background: f64,
}

impl ProbabilityVector {
    /// Probability assigned to class `y`, with `y = 0` selecting the
    /// background slot.
    pub fn class_probability(&self, y: usize) -> Option<f64> {
        if y == 0 {
            Some(self.background)
        } else {
            self.foreground.get(y - 1).copied()
        }
    }

    /// Number of classes including the background slot.
    pub fn num_slots(&self) -> usize {
        self.foreground.len() + 1
    }
}

/// The two loss terms and their weighted combination.
///
/// `total` is always composed as `main + lambda_g * aux`, in that exact
/// floating-point order, so identical inputs reproduce identical bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub main: f64,
    pub aux: f64,
    pub lambda_g: f64,
    pub total: f64,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{what}[{i}] is not finite: {v}"
            )));
        }
    }
    Ok(())
}

/// Plain softmax over `k` logits, without the background/foreground split.
/// Used for the auxiliary head. Assumes finite input.
pub(crate) fn softmax_dense(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| math::exp(z - max)).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Standard (N+1)-way softmax where slot 0 is the learned background logit.
///
/// Stabilized by subtracting the maximum logit before exponentiation.
pub fn softmax(logits: &[f64]) -> Result<ProbabilityVector> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(String::from(
            "softmax needs a background slot plus at least one foreground logit",
        )));
    }
    check_finite(logits, "logits")?;

    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e_bg = math::exp(logits[0] - max);
    let e_fg: Vec<f64> = logits[1..].iter().map(|&z| math::exp(z - max)).collect();
    let mut denom = e_bg;
    for &e in &e_fg {
        denom += e;
    }
    Ok(ProbabilityVector {
        foreground: e_fg.iter().map(|&e| e / denom).collect(),
        background: e_bg / denom,
    })
}

/// Background-thresholded softmax: the background logit is the constant `b0`
/// and carries no learned parameters.
///
/// Stabilized by subtracting `max(max(z), b0)` before exponentiation, which
/// leaves the output unchanged in exact arithmetic.
pub fn bg_thresholded_softmax(fg_logits: &[f64], b0: f64) -> Result<ProbabilityVector> {
    if fg_logits.is_empty() {
        return Err(Error::InvalidInput(String::from(
            "thresholded softmax needs at least one foreground logit",
        )));
    }
    check_finite(fg_logits, "logits")?;
    if !b0.is_finite() {
        return Err(Error::InvalidInput(format!("b0 is not finite: {b0}")));
    }

    let max = fg_logits.iter().copied().fold(b0, f64::max);
    let e_bg = math::exp(b0 - max);
    let e_fg: Vec<f64> = fg_logits.iter().map(|&z| math::exp(z - max)).collect();
    let mut denom = e_bg;
    for &e in &e_fg {
        denom += e;
    }
    Ok(ProbabilityVector {
        foreground: e_fg.iter().map(|&e| e / denom).collect(),
        background: e_bg / denom,
    })
}

/// Cross-entropy `-ln p(y)` with `y = 0` selecting the background slot.
///
/// The probability is floored at [`PROB_FLOOR`] so the result is finite.
pub fn cross_entropy(p: &ProbabilityVector, y: usize) -> Result<f64> {
    let prob = p.class_probability(y).ok_or_else(|| {
        Error::InvalidLabel(format!(
            "label {y} out of range for {} classes (0 = background)",
            p.num_slots()
        ))
    })?;
    Ok(-math::ln(prob.max(PROB_FLOOR)))
}

/// Combine the main and auxiliary losses into `main + lambda_g * aux`.
pub fn multi_task_loss(main: f64, aux: f64, lambda_g: f64) -> Result<LossValue> {
    if !(main >= 0.0 && aux >= 0.0 && lambda_g >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "loss terms must be non-negative: main={main} aux={aux} lambda_g={lambda_g}"
        )));
    }
    Ok(LossValue {
        main,
        aux,
        lambda_g,
        total: main + lambda_g * aux,
    })
}

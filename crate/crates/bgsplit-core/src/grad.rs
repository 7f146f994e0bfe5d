//! Analytic gradients of the mean multi-task loss over a batch.
//!
//! Softmax cross-entropy gives `dL/dz_j = p_j - [j == y]` per head; the
//! auxiliary term is scaled by `lambda_g` before it reaches the shared
//! trunk. Under background thresholding the background slot's logit is a
//! constant, so its weight row and bias receive exactly zero gradient.
//!
//! Per-example gradients are accumulated in batch order and divided by the
//! batch size at the end, so results are reproducible bit for bit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::loss::{self, LossValue, PROB_FLOOR};
use crate::math;
use crate::model::{forward_trunk_cached, Affine, ModelParams, TrunkCache};
use crate::trainer::TrainConfig;

/// Gradient of one affine map, same shape as [`Affine`].
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineGrad {
    pub fn zeros_like(layer: &Affine) -> Self {
        Self {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn scale(&mut self, factor: f64) {
        for v in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Gradient structure mirroring [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub trunk: Vec<AffineGrad>,
    pub main: AffineGrad,
    pub aux: Option<AffineGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            trunk: params.trunk.iter().map(AffineGrad::zeros_like).collect(),
            main: AffineGrad::zeros_like(&params.main),
            aux: params.aux.as_ref().map(AffineGrad::zeros_like),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.trunk.iter().all(AffineGrad::is_finite)
            && self.main.is_finite()
            && self.aux.as_ref().map(AffineGrad::is_finite).unwrap_or(true)
    }

    /// Flattened in the same order as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.trunk.iter().chain(core::iter::once(&self.main)) {
            out.extend_from_slice(&g.weight);
            out.extend_from_slice(&g.bias);
        }
        if let Some(aux) = &self.aux {
            out.extend_from_slice(&aux.weight);
            out.extend_from_slice(&aux.bias);
        }
        out
    }

    fn scale(&mut self, factor: f64) {
        for g in &mut self.trunk {
            g.scale(factor);
        }
        self.main.scale(factor);
        if let Some(aux) = &mut self.aux {
            aux.scale(factor);
        }
    }
}

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum GradScope {
    /// Trunk, main head, and (when enabled) auxiliary head.
    Full,
    /// Main head only; the trunk is frozen and the auxiliary loss ignored.
    MainHeadOnly,
}

/// Accumulate `head_delta * features` into the head gradient rows `rows`.
fn accumulate_head(
    grad: &mut AffineGrad,
    features: &[f64],
    deltas: &[(usize, f64)], // (row, dL/dlogit)
) {
    let d = features.len();
    for &(row, delta) in deltas {
        let w = &mut grad.weight[row * d..(row + 1) * d];
        for (g, x) in w.iter_mut().zip(features.iter()) {
            *g += delta * x;
        }
        grad.bias[row] += delta;
    }
}

pub(crate) fn loss_gradients_scoped(
    params: &ModelParams,
    examples: &[Example],
    batch: &[usize],
    config: &TrainConfig,
    scope: GradScope,
) -> Result<(Gradients, LossValue)> {
    if batch.is_empty() {
        return Err(Error::Config(String::from("gradient batch is empty")));
    }
    let n_fg = params.n_foreground();
    let use_aux = config.use_aux && scope == GradScope::Full;
    if use_aux && params.aux.is_none() {
        return Err(Error::Config(String::from(
            "auxiliary loss enabled but the model has no auxiliary head",
        )));
    }

    let mut sums = Gradients::zeros_like(params);
    let mut cache = TrunkCache::default();
    let mut main_sum = 0.0;
    let mut aux_sum = 0.0;
    let mut head_deltas: Vec<(usize, f64)> = Vec::with_capacity(n_fg + 1);

    for &idx in batch {
        let ex = examples.get(idx).ok_or_else(|| {
            Error::Config(format!("batch index {idx} out of range for {} examples", examples.len()))
        })?;
        forward_trunk_cached(params, &ex.features, &mut cache)?;
        let features: &[f64] = cache.post.last().map(Vec::as_slice).unwrap_or(&ex.features);
        let logits = params.main.forward(features);

        let probs = if config.use_thresholding {
            let b0 = params.background_clamp.unwrap_or(config.b0);
            loss::bg_thresholded_softmax(&logits[1..], b0)?
        } else {
            loss::softmax(&logits)?
        };
        main_sum += loss::cross_entropy(&probs, ex.main_label)?;

        // dL/dlogit_j = p_j - [j == y]; the constant background logit of the
        // thresholded rule contributes nothing to slot 0.
        head_deltas.clear();
        if !config.use_thresholding {
            let ind = if ex.main_label == 0 { 1.0 } else { 0.0 };
            head_deltas.push((0, probs.background - ind));
        }
        for j in 1..=n_fg {
            let ind = if ex.main_label == j { 1.0 } else { 0.0 };
            head_deltas.push((j, probs.foreground[j - 1] - ind));
        }

        // dL/dfeatures from the main head.
        let d = features.len();
        let mut dfeat = vec![0.0; d];
        if scope == GradScope::Full {
            for &(row, delta) in &head_deltas {
                let w = params.main.row(row);
                for (df, wv) in dfeat.iter_mut().zip(w.iter()) {
                    *df += delta * wv;
                }
            }
        }
        accumulate_head(&mut sums.main, features, &head_deltas);

        if use_aux {
            let head = params.aux.as_ref().unwrap();
            let k = head.out_dim;
            let t = ex.aux_label.ok_or_else(|| {
                Error::Config(format!("example {} has no auxiliary label", ex.id))
            })?;
            if t == 0 || t > k {
                return Err(Error::Config(format!(
                    "example {} has auxiliary label {t}, expected 1..={k}",
                    ex.id
                )));
            }
            let q = loss::softmax_dense(&head.forward(features));
            aux_sum += -math::ln(q[t - 1].max(PROB_FLOOR));

            if config.lambda_g > 0.0 {
                let aux_grad = sums.aux.as_mut().unwrap();
                head_deltas.clear();
                for j in 0..k {
                    let ind = if j == t - 1 { 1.0 } else { 0.0 };
                    head_deltas.push((j, config.lambda_g * (q[j] - ind)));
                }
                for &(row, delta) in &head_deltas {
                    let w = head.row(row);
                    for (df, wv) in dfeat.iter_mut().zip(w.iter()) {
                        *df += delta * wv;
                    }
                }
                accumulate_head(aux_grad, features, &head_deltas);
            }
        }

        if scope == GradScope::Full {
            // Backpropagate through the trunk, last layer first.
            let mut delta = dfeat;
            for l in (0..params.trunk.len()).rev() {
                let layer = &params.trunk[l];
                // ReLU derivative gates the incoming delta.
                for (dv, pre) in delta.iter_mut().zip(cache.pre[l].iter()) {
                    if *pre <= 0.0 {
                        *dv = 0.0;
                    }
                }
                let below: &[f64] = if l == 0 {
                    &ex.features
                } else {
                    &cache.post[l - 1]
                };
                let g = &mut sums.trunk[l];
                for r in 0..layer.out_dim {
                    let dz = delta[r];
                    if dz != 0.0 {
                        let w = &mut g.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                        for (gw, x) in w.iter_mut().zip(below.iter()) {
                            *gw += dz * x;
                        }
                    }
                    g.bias[r] += dz;
                }
                if l > 0 {
                    let mut next = vec![0.0; layer.in_dim];
                    for r in 0..layer.out_dim {
                        let dz = delta[r];
                        if dz != 0.0 {
                            let w = layer.row(r);
                            for (nv, wv) in next.iter_mut().zip(w.iter()) {
                                *nv += dz * wv;
                            }
                        }
                    }
                    delta = next;
                }
            }
        }
    }

    let inv = 1.0 / batch.len() as f64;
    sums.scale(inv);
    let mean_main = main_sum * inv;
    let mean_aux = if use_aux { aux_sum * inv } else { 0.0 };
    let value = loss::multi_task_loss(mean_main, mean_aux, config.lambda_g)?;
    Ok((sums, value))
}

/// Analytic gradients of the mean total loss over `batch` (indices into
/// `examples`), together with the mean loss terms.
pub fn loss_gradients(
    params: &ModelParams,
    examples: &[Example],
    batch: &[usize],
    config: &TrainConfig,
) -> Result<(Gradients, LossValue)> {
    loss_gradients_scoped(params, examples, batch, config, GradScope::Full)
}

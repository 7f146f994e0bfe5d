//! Momentum SGD with weight decay.
//!
//! Update rule per parameter: `v <- momentum * v + g + weight_decay * p`,
//! then `p <- p - lr * v`. Clamped background slots are restored to their
//! exact values after every step.

use alloc::format;
use alloc::string::String;

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::grad::{loss_gradients_scoped, AffineGrad, GradScope, Gradients};
use crate::loss::LossValue;
use crate::model::{Affine, ModelParams};
use crate::trainer::TrainConfig;

/// Per-parameter velocities, mirroring the model structure.
#[derive(Debug, Clone)]
pub struct MomentumState {
    pub trunk: alloc::vec::Vec<AffineGrad>,
    pub main: AffineGrad,
    pub aux: Option<AffineGrad>,
}

impl MomentumState {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            trunk: params.trunk.iter().map(AffineGrad::zeros_like).collect(),
            main: AffineGrad::zeros_like(&params.main),
            aux: params.aux.as_ref().map(AffineGrad::zeros_like),
        }
    }
}

fn update_affine(
    param: &mut Affine,
    grad: &AffineGrad,
    vel: &mut AffineGrad,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, g), v) in param
        .weight
        .iter_mut()
        .zip(grad.weight.iter())
        .zip(vel.weight.iter_mut())
    {
        *v = momentum * *v + *g + weight_decay * *p;
        *p -= lr * *v;
    }
    for ((p, g), v) in param
        .bias
        .iter_mut()
        .zip(grad.bias.iter())
        .zip(vel.bias.iter_mut())
    {
        *v = momentum * *v + *g + weight_decay * *p;
        *p -= lr * *v;
    }
}

pub(crate) fn apply_update_scoped(
    params: &mut ModelParams,
    grads: &Gradients,
    config: &TrainConfig,
    state: &mut MomentumState,
    scope: GradScope,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Divergence(String::from(
            "gradient contains non-finite entries; aborting the run",
        )));
    }
    let (lr, m, wd) = (config.learning_rate, config.momentum, config.weight_decay);
    if scope == GradScope::Full {
        for (layer, (g, v)) in params
            .trunk
            .iter_mut()
            .zip(grads.trunk.iter().zip(state.trunk.iter_mut()))
        {
            update_affine(layer, g, v, lr, m, wd);
        }
        if let (Some(aux), Some(g)) = (params.aux.as_mut(), grads.aux.as_ref()) {
            let v = state.aux.as_mut().expect("velocity shape mismatch");
            update_affine(aux, g, v, lr, m, wd);
        }
    }
    update_affine(&mut params.main, &grads.main, &mut state.main, lr, m, wd);

    if params.background_clamp.is_some() {
        params.apply_clamp();
        // Keep the frozen slot's velocity at zero as well.
        for v in &mut state.main.weight[..params.main.in_dim] {
            *v = 0.0;
        }
        state.main.bias[0] = 0.0;
    }

    if !params.all_finite() {
        return Err(Error::Divergence(format!(
            "parameters became non-finite after a step with lr={lr}"
        )));
    }
    Ok(())
}

/// Apply one momentum-SGD update from precomputed gradients.
pub fn apply_update(
    params: &mut ModelParams,
    grads: &Gradients,
    config: &TrainConfig,
    state: &mut MomentumState,
) -> Result<()> {
    apply_update_scoped(params, grads, config, state, GradScope::Full)
}

/// Compute gradients for `batch` and take one optimizer step. Returns the
/// batch's mean loss terms (evaluated at the pre-step parameters).
pub fn sgd_step(
    params: &mut ModelParams,
    examples: &[Example],
    batch: &[usize],
    config: &TrainConfig,
    state: &mut MomentumState,
) -> Result<LossValue> {
    let (grads, value) = loss_gradients_scoped(params, examples, batch, config, GradScope::Full)?;
    apply_update(params, &grads, config, state)?;
    Ok(value)
}

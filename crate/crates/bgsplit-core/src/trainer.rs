//! Deterministic mini-batch training loop.
//!
//! `train` is a pure function of `(manifest, config)`: parameter
//! initialization and batch composition draw from separate ChaCha streams of
//! the configured seed, and all reductions run in fixed index order, so
//! repeated runs reproduce bit-identical parameters and logs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::grad::{loss_gradients_scoped, GradScope};
use crate::model::{init_params, ModelParams};
use crate::optim::{apply_update_scoped, MomentumState};
use crate::sampler::{shuffle_indices, ClassBalancedSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Sampling {
    /// Seeded shuffle; every training example is visited once per epoch.
    Uniform,
    /// Class-uniform draws with replacement.
    ClassBalanced,
}

/// Hyperparameters and feature flags for one training run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// Weight on the auxiliary pseudo-label loss.
    pub lambda_g: f64,
    /// Fixed background logit used when thresholding is enabled.
    pub b0: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub sampling: Sampling,
    /// Clamp the background slot and score with the thresholded softmax.
    pub use_thresholding: bool,
    /// Train the auxiliary head on pseudo-labels.
    pub use_aux: bool,
    pub seed: u64,
    /// Hidden-layer widths of the shared trunk; empty = identity trunk.
    pub trunk_shape: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_g: 0.1,
            b0: 0.1,
            batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 15,
            sampling: Sampling::Uniform,
            use_thresholding: false,
            use_aux: false,
            seed: 0,
            trunk_shape: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(String::from("batch size must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config(String::from("epochs must be positive")));
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_g must be non-negative, got {}",
                self.lambda_g
            )));
        }
        if !self.b0.is_finite() {
            return Err(Error::Config(format!("b0 must be finite, got {}", self.b0)));
        }
        Ok(())
    }
}

/// Per-epoch aggregates of one run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub mean_main: f64,
    pub mean_aux: f64,
    pub mean_total: f64,
    pub examples_seen: usize,
    /// Wall-clock seconds; 0 when built without `std`.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

fn check_manifest(manifest: &DatasetManifest, config: &TrainConfig) -> Result<(usize, Vec<usize>)> {
    let train: Vec<usize> = manifest.train_indices();
    if train.is_empty() {
        return Err(Error::Config(String::from(
            "manifest has no training examples",
        )));
    }
    let d_in = manifest.examples[train[0]].features.len();
    if d_in == 0 {
        return Err(Error::Config(String::from("examples have empty features")));
    }
    for e in &manifest.examples {
        if e.features.len() != d_in {
            return Err(Error::Config(format!(
                "example {} has {} features, expected {d_in}",
                e.id,
                e.features.len()
            )));
        }
        if e.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("example {} has non-finite features", e.id)));
        }
        if e.main_label > manifest.n_foreground {
            return Err(Error::Config(format!(
                "example {} has label {} beyond N = {}",
                e.id, e.main_label, manifest.n_foreground
            )));
        }
    }
    if config.use_aux {
        let k = manifest.k_aux.ok_or_else(|| {
            Error::Config(String::from(
                "auxiliary loss enabled but the manifest has no pseudo-label count K",
            ))
        })?;
        for &i in &train {
            let e = &manifest.examples[i];
            match e.aux_label {
                Some(t) if t >= 1 && t <= k => {}
                Some(t) => {
                    return Err(Error::Config(format!(
                        "example {} has pseudo-label {t} outside 1..={k}",
                        e.id
                    )))
                }
                None => {
                    return Err(Error::Config(format!(
                        "auxiliary loss enabled but example {} has no pseudo-label",
                        e.id
                    )))
                }
            }
        }
    }
    Ok((d_in, train))
}

#[cfg(feature = "std")]
fn now_seconds() -> f64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[cfg(not(feature = "std"))]
fn now_seconds() -> f64 {
    0.0
}

fn run_epochs(
    params: &mut ModelParams,
    manifest: &DatasetManifest,
    train: &[usize],
    config: &TrainConfig,
    scope: GradScope,
) -> Result<TrainLog> {
    let mut state = MomentumState::zeros_like(params);
    let mut log = TrainLog::default();
    let steps_per_epoch = train.len().div_ceil(config.batch_size);

    let mut uniform_rng = ChaCha8Rng::seed_from_u64(config.seed);
    uniform_rng.set_stream(1);
    let mut balanced = match config.sampling {
        Sampling::ClassBalanced => Some(ClassBalancedSampler::new(
            &manifest.examples,
            manifest.n_foreground,
            config.seed,
        )?),
        Sampling::Uniform => None,
    };
    let mut order: Vec<usize> = train.to_vec();

    for _ in 0..config.epochs {
        let started = now_seconds();
        let mut main_sum = 0.0;
        let mut aux_sum = 0.0;
        let mut total_sum = 0.0;
        let mut seen = 0usize;

        let step = |params: &mut ModelParams, batch: &[usize], state: &mut MomentumState| -> Result<(f64, f64, f64, usize)> {
            let (grads, value) = loss_gradients_scoped(params, &manifest.examples, batch, config, scope)?;
            if !grads.is_finite() {
                return Err(Error::Divergence(String::from(
                    "gradient contains non-finite entries; aborting the run",
                )));
            }
            apply_update_scoped(params, &grads, config, state, scope)?;
            let b = batch.len() as f64;
            Ok((value.main * b, value.aux * b, value.total * b, batch.len()))
        };

        match &mut balanced {
            None => {
                shuffle_indices(&mut order, &mut uniform_rng);
                for batch in order.chunks(config.batch_size) {
                    let (m, a, t, n) = step(params, batch, &mut state)?;
                    main_sum += m;
                    aux_sum += a;
                    total_sum += t;
                    seen += n;
                }
            }
            Some(sampler) => {
                for _ in 0..steps_per_epoch {
                    let batch = sampler.next_batch(config.batch_size);
                    let (m, a, t, n) = step(params, &batch, &mut state)?;
                    main_sum += m;
                    aux_sum += a;
                    total_sum += t;
                    seen += n;
                }
            }
        }

        log.epochs.push(EpochRecord {
            mean_main: main_sum / seen as f64,
            mean_aux: aux_sum / seen as f64,
            mean_total: total_sum / seen as f64,
            examples_seen: seen,
            wall_seconds: now_seconds() - started,
        });
    }
    Ok(log)
}

/// Train a fresh model on the manifest's training split.
pub fn train(manifest: &DatasetManifest, config: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    let (d_in, train_idx) = check_manifest(manifest, config)?;
    let aux_classes = if config.use_aux {
        manifest.k_aux.unwrap_or(0)
    } else {
        0
    };
    let mut params = init_params(
        d_in,
        &config.trunk_shape,
        manifest.n_foreground,
        aux_classes,
        config.use_thresholding.then_some(config.b0),
        config.seed,
    )?;
    let log = run_epochs(&mut params, manifest, &train_idx, config, GradScope::Full)?;
    Ok((params, log))
}

/// Freeze the trunk (and auxiliary head) of a trained model, re-initialize
/// the main head for the manifest's foreground classes, and train the head
/// alone with the main loss.
pub fn freeze_trunk_and_retrain_head(
    trained: &ModelParams,
    manifest: &DatasetManifest,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    let head_config = TrainConfig {
        use_aux: false,
        ..config.clone()
    };
    let (d_in, train_idx) = check_manifest(manifest, &head_config)?;
    if d_in != trained.d_in {
        return Err(Error::Config(format!(
            "manifest features have dimension {d_in}, trunk expects {}",
            trained.d_in
        )));
    }

    let fresh = init_params(
        trained.feature_dim(),
        &[],
        manifest.n_foreground,
        0,
        head_config.use_thresholding.then_some(head_config.b0),
        head_config.seed,
    )?;

    let mut params = ModelParams {
        d_in: trained.d_in,
        trunk: trained.trunk.clone(),
        main: fresh.main,
        aux: trained.aux.clone(),
        background_clamp: head_config.use_thresholding.then_some(head_config.b0),
    };
    params.apply_clamp();

    let log = run_epochs(
        &mut params,
        manifest,
        &train_idx,
        &head_config,
        GradScope::MainHeadOnly,
    )?;
    Ok((params, log))
}

//! The trainable model: a shared MLP trunk feeding a main classification
//! head (slot 0 = background) and an optional auxiliary head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{self, ProbabilityVector};
use crate::math;
use crate::trainer::TrainConfig;

/// One affine map `y = W x + b`, weights stored row-major (`out_dim x in_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weight[r * self.in_dim..(r + 1) * self.in_dim]
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for r in 0..self.out_dim {
            let row = self.row(r);
            let mut acc = self.bias[r];
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            out[r] = acc;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out);
        out
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Parameters of the full model.
///
/// `background_clamp: Some(b0)` means the main head's slot 0 is frozen to the
/// zero weight vector with bias `b0`; the invariant is restored after every
/// optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub d_in: usize,
    pub trunk: Vec<Affine>,
    pub main: Affine,
    pub aux: Option<Affine>,
    pub background_clamp: Option<f64>,
}

impl ModelParams {
    /// Number of foreground classes N (main head has N+1 slots).
    pub fn n_foreground(&self) -> usize {
        self.main.out_dim - 1
    }

    /// Dimension of the trunk output feeding the heads.
    pub fn feature_dim(&self) -> usize {
        self.trunk.last().map(|l| l.out_dim).unwrap_or(self.d_in)
    }

    /// Number of auxiliary classes, or 0 when no auxiliary head exists.
    pub fn aux_classes(&self) -> usize {
        self.aux.as_ref().map(|a| a.out_dim).unwrap_or(0)
    }

    /// Force the clamped background slot back to its exact values.
    pub fn apply_clamp(&mut self) {
        if let Some(b0) = self.background_clamp {
            for w in &mut self.main.weight[..self.main.in_dim] {
                *w = 0.0;
            }
            self.main.bias[0] = b0;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.trunk.iter().all(Affine::is_finite)
            && self.main.is_finite()
            && self.aux.as_ref().map(Affine::is_finite).unwrap_or(true)
    }

    /// Flatten every parameter in a fixed order (trunk weights/biases, main
    /// head, auxiliary head). Used by finite-difference checks.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.trunk.iter().chain(core::iter::once(&self.main)) {
            out.extend_from_slice(&layer.weight);
            out.extend_from_slice(&layer.bias);
        }
        if let Some(aux) = &self.aux {
            out.extend_from_slice(&aux.weight);
            out.extend_from_slice(&aux.bias);
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat); the layout must match.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        let mut fill = |dst: &mut [f64]| {
            for v in dst {
                *v = *it.next().expect("flat parameter vector too short");
            }
        };
        for layer in self.trunk.iter_mut() {
            fill(&mut layer.weight);
            fill(&mut layer.bias);
        }
        fill(&mut self.main.weight);
        fill(&mut self.main.bias);
        if let Some(aux) = &mut self.aux {
            fill(&mut aux.weight);
            fill(&mut aux.bias);
        }
        assert!(it.next().is_none(), "flat parameter vector too long");
    }
}

fn init_affine(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Affine {
    // Fan-in scaled uniform in +-sqrt(6 / fan_in); biases start at zero.
    let bound = math::sqrt(6.0 / in_dim as f64);
    let weight = (0..in_dim * out_dim)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Affine {
        weight,
        bias: vec![0.0; out_dim],
        in_dim,
        out_dim,
    }
}

/// Seeded parameter initialization.
///
/// `aux_classes = 0` builds no auxiliary head. Draw order is trunk, main
/// head, auxiliary head, so models that differ only in the auxiliary head
/// share identical trunk and main-head initializations for the same seed.
pub fn init_params(
    d_in: usize,
    trunk_shape: &[usize],
    n_foreground: usize,
    aux_classes: usize,
    background_clamp: Option<f64>,
    seed: u64,
) -> Result<ModelParams> {
    if d_in == 0 {
        return Err(Error::Config("input dimension must be positive".into()));
    }
    if n_foreground == 0 {
        return Err(Error::Config(
            "at least one foreground class is required".into(),
        ));
    }
    if let Some(w) = trunk_shape.iter().find(|&&w| w == 0) {
        return Err(Error::Config(format!("trunk layer width must be positive, got {w}")));
    }
    if let Some(b0) = background_clamp {
        if !b0.is_finite() {
            return Err(Error::Config(format!("clamp constant must be finite, got {b0}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trunk = Vec::with_capacity(trunk_shape.len());
    let mut prev = d_in;
    for &width in trunk_shape {
        trunk.push(init_affine(&mut rng, prev, width));
        prev = width;
    }
    let main = init_affine(&mut rng, prev, n_foreground + 1);
    let aux = (aux_classes > 0).then(|| init_affine(&mut rng, prev, aux_classes));

    let mut params = ModelParams {
        d_in,
        trunk,
        main,
        aux,
        background_clamp,
    };
    params.apply_clamp();
    Ok(params)
}

/// Activations cached during a trunk forward pass, for backpropagation.
#[derive(Debug, Default)]
pub struct TrunkCache {
    /// Pre-activation outputs of each trunk layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-ReLU outputs of each trunk layer.
    pub post: Vec<Vec<f64>>,
}

pub(crate) fn forward_trunk_cached(
    params: &ModelParams,
    x: &[f64],
    cache: &mut TrunkCache,
) -> Result<()> {
    if x.len() != params.d_in {
        return Err(Error::InvalidInput(format!(
            "input has dimension {}, model expects {}",
            x.len(),
            params.d_in
        )));
    }
    cache.pre.clear();
    cache.post.clear();
    let mut cur: &[f64] = x;
    for layer in &params.trunk {
        let pre = layer.forward(cur);
        let post: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        cache.pre.push(pre);
        cache.post.push(post);
        cur = cache.post.last().unwrap();
    }
    Ok(())
}

/// Shared trunk embedding: affine layers with a ReLU after each. An empty
/// trunk is the identity map.
pub fn forward_trunk(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    let mut cache = TrunkCache::default();
    forward_trunk_cached(params, x, &mut cache)?;
    Ok(cache.post.pop().unwrap_or_else(|| x.to_vec()))
}

/// Main-head logits for the trunk output `features`.
pub(crate) fn main_logits(params: &ModelParams, features: &[f64]) -> Vec<f64> {
    params.main.forward(features)
}

/// Score one example: main-class probabilities plus auxiliary-class
/// probabilities (empty when the model has no auxiliary head).
///
/// With `use_thresholding` the main head is scored by the thresholded
/// softmax with the clamp constant as background logit; otherwise by the
/// plain (N+1)-way softmax over all learned slots.
pub fn predict(
    params: &ModelParams,
    x: &[f64],
    config: &TrainConfig,
) -> Result<(ProbabilityVector, Vec<f64>)> {
    let features = forward_trunk(params, x)?;
    let logits = main_logits(params, &features);
    let main = if config.use_thresholding {
        let b0 = params.background_clamp.unwrap_or(config.b0);
        loss::bg_thresholded_softmax(&logits[1..], b0)?
    } else {
        loss::softmax(&logits)?
    };
    let aux = match &params.aux {
        Some(head) => loss::softmax_dense(&head.forward(&features)),
        None => Vec::new(),
    };
    Ok((main, aux))
}

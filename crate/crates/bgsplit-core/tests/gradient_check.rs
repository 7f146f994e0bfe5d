//! Finite-difference verification of the analytic gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bgsplit_core::dataset::{Example, Split};
use bgsplit_core::grad::loss_gradients;
use bgsplit_core::model::{init_params, ModelParams};
use bgsplit_core::trainer::TrainConfig;

const FD_STEP: f64 = 1e-5;

fn total_loss(
    params: &ModelParams,
    examples: &[Example],
    batch: &[usize],
    config: &TrainConfig,
) -> f64 {
    loss_gradients(params, examples, batch, config).unwrap().1.total
}

/// Central finite differences of the mean total loss, one parameter at a
/// time in flat order.
fn finite_difference(
    params: &ModelParams,
    examples: &[Example],
    batch: &[usize],
    config: &TrainConfig,
) -> Vec<f64> {
    let flat = params.to_flat();
    let mut out = Vec::with_capacity(flat.len());
    let mut work = params.clone();
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += FD_STEP;
        work.set_from_flat(&plus);
        let up = total_loss(&work, examples, batch, config);
        let mut minus = flat.clone();
        minus[i] -= FD_STEP;
        work.set_from_flat(&minus);
        let down = total_loss(&work, examples, batch, config);
        out.push((up - down) / (2.0 * FD_STEP));
    }
    out
}

/// Smallest |pre-activation| across all trunk layers and examples. The loss
/// is not differentiable at a ReLU kink, so instances evaluating close to
/// one (relative to the finite-difference step) are rejected.
fn min_abs_preactivation(params: &ModelParams, examples: &[Example]) -> f64 {
    let mut min = f64::INFINITY;
    for ex in examples {
        let mut cur = ex.features.clone();
        for layer in &params.trunk {
            let pre = layer.forward(&cur);
            for &v in &pre {
                min = min.min(v.abs());
            }
            cur = pre.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    min
}

fn random_instance(rng: &mut ChaCha8Rng) -> (ModelParams, Vec<Example>, Vec<usize>, TrainConfig) {
    let d_in = rng.random_range(2..=16);
    let n_fg = rng.random_range(1..=5);
    let k = rng.random_range(1..=8);
    let use_aux = rng.random_range(0..3) > 0;
    let use_thresholding = rng.random_range(0..2) == 1;
    let lambda_g = [0.0, 0.1, 0.7][rng.random_range(0..3)];
    let trunk_shape: Vec<usize> = match rng.random_range(0..3) {
        0 => vec![],
        1 => vec![rng.random_range(2..=8)],
        _ => vec![rng.random_range(2..=8), rng.random_range(2..=6)],
    };
    let batch_len = rng.random_range(1..=8);

    let config = TrainConfig {
        lambda_g,
        b0: rng.random_range(-0.5..0.5),
        use_thresholding,
        use_aux,
        trunk_shape: trunk_shape.clone(),
        ..TrainConfig::default()
    };
    let params = init_params(
        d_in,
        &trunk_shape,
        n_fg,
        if use_aux { k } else { 0 },
        use_thresholding.then_some(config.b0),
        rng.random_range(0..u64::MAX / 2),
    )
    .unwrap();

    let examples: Vec<Example> = (0..batch_len)
        .map(|i| Example {
            id: format!("e{i}"),
            features: (0..d_in).map(|_| rng.random_range(-2.0..2.0)).collect(),
            original_label: "src".into(),
            main_label: rng.random_range(0..=n_fg),
            aux_label: use_aux.then(|| rng.random_range(1..=k)),
            split: Split::Train,
        })
        .collect();
    let batch: Vec<usize> = (0..batch_len).collect();
    (params, examples, batch, config)
}

/// Relative mismatch with an absolute guard for near-zero entries, where
/// the finite-difference estimate itself is noise-limited (around 1e-9 for
/// losses of order 1 at step 1e-5).
fn mismatch(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff > 1e-4 * analytic.abs().max(numeric.abs()) && diff > 1e-8
}

#[test]
fn analytic_gradients_match_central_differences_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
    for instance in 0..100 {
        let (params, examples, batch, config) = loop {
            let candidate = random_instance(&mut rng);
            if min_abs_preactivation(&candidate.0, &candidate.1) > 1e-3 {
                break candidate;
            }
        };
        let (grads, _) = loss_gradients(&params, &examples, &batch, &config).unwrap();
        let analytic = grads.to_flat();
        let numeric = finite_difference(&params, &examples, &batch, &config);
        assert_eq!(analytic.len(), numeric.len());
        for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            assert!(
                !mismatch(a, n),
                "instance {instance} param {i}: analytic {a} vs numeric {n} \
                 (thresholding={}, aux={}, lambda_g={})",
                config.use_thresholding,
                config.use_aux,
                config.lambda_g
            );
        }
    }
}

#[test]
fn clamped_slot_gradient_is_exactly_zero_and_matches_fd() {
    let config = TrainConfig {
        use_thresholding: true,
        b0: 0.1,
        ..TrainConfig::default()
    };
    let params = init_params(4, &[5], 3, 0, Some(0.1), 42).unwrap();
    let examples = vec![Example {
        id: "e0".into(),
        features: vec![0.3, -1.2, 0.8, 0.1],
        original_label: "src".into(),
        main_label: 0,
        aux_label: None,
        split: Split::Train,
    }];
    let (grads, _) = loss_gradients(&params, &examples, &[0], &config).unwrap();
    assert!(grads.main.weight[..4].iter().all(|&g| g == 0.0));
    assert_eq!(grads.main.bias[0], 0.0);

    let numeric = finite_difference(&params, &examples, &[0], &config);
    // Flat layout: trunk 4->5 (20 weights + 5 biases), then the main head's
    // weights (4 slots x 5) and biases. Slot 0 occupies weights 25..30 and
    // bias 45.
    for i in 0..5 {
        assert_eq!(numeric[25 + i], 0.0);
    }
    assert_eq!(numeric[45], 0.0);
}

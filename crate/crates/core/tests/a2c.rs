use alliance_core::rng::stream_rng;
use alliance_core::training::*;
use alliance_core::verify::{a2c_gradient_error, toy_batch, TOY_COEFFICIENTS};
use proptest::prelude::*;

#[test]
fn full_loss_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let err = a2c_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn small_gradient_step_decreases_the_loss_on_a_frozen_batch() {
    for seed in 0..5 {
        let (net, params, traces) = toy_batch(seed);
        let refs: Vec<&AgentTrace> = traces.iter().collect();
        let targets = compute_targets(&net, &params, &refs, 0.9).unwrap();
        let mut grad = vec![0.0; params.len()];
        let before = loss_and_grad(&net, &params, &refs, &targets, &TOY_COEFFICIENTS, true, &mut grad)
            .unwrap()
            .total;
        let mut scratch = vec![0.0; params.len()];
        let mut decreased = false;
        let mut step = 1e-1;
        while step > 1e-9 {
            let moved: Vec<f64> = params.iter().zip(&grad).map(|(w, g)| w - step * g).collect();
            let after = loss_and_grad(&net, &moved, &refs, &targets, &TOY_COEFFICIENTS, true, &mut scratch)
                .unwrap()
                .total;
            if after < before {
                decreased = true;
                break;
            }
            step /= 2.0;
        }
        assert!(decreased, "seed {seed}: no step size decreased the loss");
    }
}

#[test]
fn rmsprop_first_step_closed_form() {
    let (lr, decay, eps) = (0.0005, 0.99, 0.001);
    let grad = [0.3, -2.0, 0.0, 1e-4];
    let mut params = [1.0, 1.0, 1.0, 1.0];
    let mut opt = RmsProp::new(4, lr, decay, eps, 0.0);
    opt.step(&mut params, &grad);
    for k in 0..4 {
        let g: f64 = grad[k];
        let expected = 1.0 - lr * g / ((1.0 - decay) * g * g + eps).sqrt();
        assert!((params[k] - expected).abs() <= 1e-12, "{k}: {} vs {expected}", params[k]);
    }
}

proptest! {
    #[test]
    fn zero_gradient_step_is_the_identity(
        params in prop::collection::vec(-10.0f64..10.0, 1..20),
        warmup in prop::collection::vec(-3.0f64..3.0, 20),
        momentum in prop_oneof![Just(0.0), Just(0.9)],
    ) {
        let n = params.len();
        let mut opt = RmsProp::new(n, 0.01, 0.99, 0.001, momentum);
        if momentum == 0.0 {
            // Accumulated curvature does not matter without velocity.
            let mut scratch = vec![0.0; n];
            opt.step(&mut scratch, &warmup[..n]);
        }
        let mut moved = params.clone();
        opt.step(&mut moved, &vec![0.0; n]);
        prop_assert_eq!(moved, params);
    }
}

#[test]
fn discounted_returns_recursion() {
    let rewards = [0.0, 0.0, -1.0, 0.0, 0.5];
    let returns = discounted_returns(&rewards, 0.9);
    let mut expected = 0.0;
    for t in (0..rewards.len()).rev() {
        expected = rewards[t] + 0.9 * expected;
        assert!((returns[t] - expected).abs() < 1e-15);
    }
    let (r, a) = returns_and_advantages(&rewards, &[0.1; 5], 1.0);
    assert!((r[0] + 0.5).abs() < 1e-15);
    assert!((a[0] + 0.6).abs() < 1e-15);
}

#[test]
fn update_on_real_rollouts_is_finite_and_moves_learners_only() {
    let mut config = TrainConfig::for_scenario("copybot").unwrap();
    config.width = 8;
    config.episodes_per_update = 4;
    let table = Table::from_config(&config).unwrap();
    let mut params = table.init_params(&mut stream_rng(0, 1));
    let before = params.clone();
    let mut optimizers: Vec<Option<RmsProp>> = params
        .iter()
        .map(|p| p.as_ref().map(|w| RmsProp::from_config(w.len(), &config)))
        .collect();
    let batch = collect_episodes(&table, &params, 4, RolloutMode::Train, false, &mut stream_rng(0, 0)).unwrap();
    a2c_update(&table, &mut params, &mut optimizers, &batch, &config, 0).unwrap();
    assert!(params[1].is_none());
    for p in [0, 2] {
        let (a, b) = (params[p].as_ref().unwrap(), before[p].as_ref().unwrap());
        assert!(a.iter().all(|w| w.is_finite()));
        assert_ne!(a, b);
    }
}

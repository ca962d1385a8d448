use gcde::fixtures::{kink_free_instance, rng};
use gcde::linalg::norm_rel_err;
use gcde::ode::integrate_forward;
use gcde::training::{
    adjoint_gradients, fit, forward_loss, grad_check, numeric_state_gradient, numeric_weight_gradient, Dataset,
    TrainConfig, KINK_THRESHOLD,
};
use gcde::{BackwardMode, GcdeModel, Matrix, SolverConfig};
use proptest::prelude::*;

fn instance(seed: u64, n: usize, c: usize) -> (GcdeModel, Dataset) {
    kink_free_instance(&mut rng(seed), n, c, &SolverConfig::rk4(200).unwrap(), KINK_THRESHOLD).unwrap()
}

fn final_state(model: &GcdeModel, h0: &Matrix, cfg: SolverConfig) -> Matrix {
    integrate_forward(model, h0, &cfg).unwrap().final_state().clone()
}

/// Ratios of successive errors against a fine RK4 reference as `steps` doubles.
fn convergence_ratios(make: fn(usize) -> SolverConfig, steps: &[usize]) -> Vec<f64> {
    let (model, ds) = instance(11, 3, 2);
    let reference = final_state(&model, &ds.h0, SolverConfig::rk4(10_000).unwrap());
    let errs: Vec<f64> = steps
        .iter()
        .map(|&s| final_state(&model, &ds.h0, make(s)).max_abs_diff(&reference).unwrap())
        .collect();
    errs.windows(2).map(|w| w[0] / w[1]).collect()
}

#[test]
fn euler_is_first_order() {
    for r in convergence_ratios(|s| SolverConfig::euler(s).unwrap(), &[50, 100, 200, 400]) {
        assert!((1.8..2.2).contains(&r), "ratio {r}");
    }
}

#[test]
fn rk4_is_fourth_order() {
    for r in convergence_ratios(|s| SolverConfig::rk4(s).unwrap(), &[5, 10, 20, 40]) {
        assert!((13.0..19.0).contains(&r), "ratio {r}");
    }
}

#[test]
fn backward_modes_agree() {
    let cfg = SolverConfig::rk4(100).unwrap();
    for seed in 0..10 {
        let (model, ds) = instance(seed, 1 + seed as usize % 4, 1 + seed as usize % 3);
        let (_, s) = adjoint_gradients(&model, &ds, &cfg, BackwardMode::StoredTrajectory).unwrap();
        let (_, a) = adjoint_gradients(&model, &ds, &cfg, BackwardMode::AugmentedRecompute).unwrap();
        assert!(norm_rel_err(&s.weight_grad, &a.weight_grad).unwrap() <= 1e-6);
        assert!(norm_rel_err(&s.state_grad, &a.state_grad).unwrap() <= 1e-6);
    }
}

#[test]
fn gradcheck_error_shrinks_as_steps_double() {
    // with Euler the adjoint/discretization gap sits well above FD noise
    for seed in 0..10 {
        let (model, ds) = instance(100 + seed, 2 + seed as usize % 3, 1 + seed as usize % 3);
        let errs: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&s| {
                let r = grad_check(&model, &ds, &SolverConfig::euler(s).unwrap(), 1e-5).unwrap();
                assert!(!r.kink_warning());
                r.norm_rel_err()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "seed {seed}: {errs:?}");
    }
}

#[test]
fn descent_with_small_enough_step() {
    let (model, ds) = instance(5, 4, 3);
    let solver = SolverConfig::rk4(50).unwrap();
    let mut lr = 2.0;
    for _ in 0..30 {
        let tc = TrainConfig {
            learning_rate: lr,
            epochs: 60,
            solver,
            seed: 0,
        };
        let (_, losses) = fit(&model, &ds, &tc).unwrap();
        if losses.windows(2).all(|w| w[1] <= w[0]) {
            assert!(losses.last().unwrap() < &losses[0]);
            return;
        }
        lr /= 2.0;
    }
    panic!("no learning rate gave monotone descent");
}

#[test]
fn trained_weights_reduce_loss() {
    let (model, ds) = instance(6, 3, 2);
    let solver = SolverConfig::rk4(50).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.2,
        epochs: 30,
        solver,
        seed: 0,
    };
    let (trained, losses) = fit(&model, &ds, &tc).unwrap();
    assert!(forward_loss(&trained, &ds.h0, &ds, &solver).unwrap() < losses[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adjoint_matches_finite_differences(seed in 0u64..10_000, n in 1usize..=4, c in 1usize..=3) {
        let (model, ds) = instance(seed, n, c);
        let cfg = SolverConfig::rk4(200).unwrap();
        let (_, back) = adjoint_gradients(&model, &ds, &cfg, BackwardMode::StoredTrajectory).unwrap();
        let nw = numeric_weight_gradient(&model, &ds, &cfg, 1e-5).unwrap();
        let nh = numeric_state_gradient(&model, &ds, &cfg, 1e-5).unwrap();
        prop_assert!(norm_rel_err(&back.weight_grad, &nw).unwrap() <= 1e-4);
        prop_assert!(norm_rel_err(&back.state_grad, &nh).unwrap() <= 1e-4);
    }

    #[test]
    fn fit_is_deterministic(seed in 0u64..10_000) {
        let (model, ds) = instance(seed, 3, 2);
        let tc = TrainConfig { learning_rate: 0.3, epochs: 10, solver: SolverConfig::rk4(20).unwrap(), seed };
        let (m1, l1) = fit(&model, &ds, &tc).unwrap();
        let (m2, l2) = fit(&model, &ds, &tc).unwrap();
        prop_assert_eq!(m1.weights(), m2.weights());
        prop_assert!(l1.iter().zip(&l2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

use polgrad::envs::FiniteChainEnv;
use polgrad::estimator::{gpomdp, olpomdp, OlpomdpConfig, StepSchedule};
use polgrad::optimizer::{conjpomdp, ExactChainOracle, GpomdpOracle, OptimizerConfig};
use polgrad::oracle::{average_reward_at, build_chain};
use polgrad::policy::ThreeStateSoftmax;
use polgrad::sim::simulate_average_reward;

const THETA: [f64; 4] = [1.0, 1.0, -1.0, -1.0];

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let n: f64 = b.iter().map(|y| y * y).sum();
    (d / n).sqrt()
}

#[test]
fn simulated_reward_matches_stationary_value() {
    let env = FiniteChainEnv::three_state();
    let exact = average_reward_at(env.model(), &ThreeStateSoftmax, &THETA).unwrap();
    let sim = simulate_average_reward(&env, &ThreeStateSoftmax, &THETA, 400_000, 3).unwrap();
    // Bernoulli-like rewards: sd of the mean is well under 2e-3 here.
    assert!((sim - exact).abs() < 5e-3, "{sim} vs {exact}");
}

#[test]
fn long_gpomdp_run_approaches_discounted_gradient() {
    let env = FiniteChainEnv::three_state();
    let truth = build_chain(env.model(), &ThreeStateSoftmax, &THETA)
        .unwrap()
        .exact_gradient()
        .unwrap();
    let est = gpomdp(&env, &ThreeStateSoftmax, &THETA, 0.9, 1 << 20, 5).unwrap();
    assert!(rel_err(&est.delta, &truth) < 0.1, "{:?} vs {truth:?}", est.delta);
}

#[test]
fn exact_conjugate_gradient_reaches_optimum() {
    let env = FiniteChainEnv::three_state();
    let mut oracle = ExactChainOracle::new(env.model(), &ThreeStateSoftmax);
    let cfg = OptimizerConfig {
        s0: 100.0,
        epsilon: 1e-8,
        max_cg_iterations: 50,
        ..OptimizerConfig::default()
    };
    let out = conjpomdp(&mut oracle, &[0.05, -0.02, 0.01, 0.07], &cfg).unwrap();
    let eta = average_reward_at(env.model(), &ThreeStateSoftmax, &out.theta).unwrap();
    assert!(eta > 0.79, "eta = {eta}");
    let values: Vec<f64> = out.log.iter().filter_map(|l| l.value).collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
}

#[test]
fn simulated_conjugate_gradient_improves_reward() {
    let env = FiniteChainEnv::three_state();
    let theta0 = [0.05, -0.02, 0.01, 0.07];
    let mut oracle = GpomdpOracle::new(&env, &ThreeStateSoftmax, 0.0);
    let cfg = OptimizerConfig {
        s0: 100.0,
        budget: 64,
        max_cg_iterations: 30,
        seed: 9,
        ..OptimizerConfig::default()
    };
    let out = conjpomdp(&mut oracle, &theta0, &cfg).unwrap();
    let before = average_reward_at(env.model(), &ThreeStateSoftmax, &theta0).unwrap();
    let after = average_reward_at(env.model(), &ThreeStateSoftmax, &out.theta).unwrap();
    assert!(after > before + 0.1, "{before} -> {after}");
}

#[test]
fn online_updates_improve_reward() {
    let env = FiniteChainEnv::three_state();
    let theta0 = [0.0; 4];
    let cfg = OlpomdpConfig::new(0.0, 10_000, StepSchedule::Constant(1.0));
    let run = olpomdp(&env, &ThreeStateSoftmax, &theta0, &cfg, 21).unwrap();
    let eta = average_reward_at(env.model(), &ThreeStateSoftmax, &run.theta).unwrap();
    assert!(eta > 0.79, "eta = {eta}");
}

//! The POMDP simulation contract: observe, act, transition, reward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_len, Error, Result};
use crate::policy::Policy;

/// The random stream threaded through every stochastic call.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for sub-stream `stream` of `base`. Pure and stable across
/// releases: replica and iteration seeds are all derived through here.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// A simulated POMDP.
///
/// Episodic tasks reset internally to their start distribution; the chain
/// never terminates. Rewards belong to the successor state, so `step`
/// returns `r(X_{t+1})`.
pub trait Environment: Send + Sync {
    type State: Clone + Send + std::fmt::Debug;

    fn num_controls(&self) -> usize;

    fn obs_dim(&self) -> usize;

    /// Declared bound `R` on `|r|`.
    fn reward_bound(&self) -> f64;

    fn reset(&self, rng: &mut SimRng) -> Self::State;

    /// Draws an observation of `state` into `obs` (length `obs_dim`).
    fn observe(&self, state: &Self::State, rng: &mut SimRng, obs: &mut [f64]);

    /// Applies `control`, advancing `state` in place; returns the reward of
    /// the successor state.
    fn step(&self, state: &mut Self::State, control: usize, rng: &mut SimRng) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub observation: Vec<f64>,
    pub control: usize,
    pub reward: f64,
    pub score_ratio: Vec<f64>,
}

pub fn check_compat<E: Environment, P: Policy + ?Sized>(
    env: &E,
    policy: &P,
    theta: &[f64],
) -> Result<()> {
    ensure_len("policy parameters", policy.num_params(), theta.len())?;
    ensure_len("observation dimension", env.obs_dim(), policy.obs_dim())?;
    ensure_len("control count", env.num_controls(), policy.num_controls())?;
    if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("theta[{i}] is not finite")));
    }
    Ok(())
}

/// One step of the controlled chain from `state`: observe, sample a control
/// from `μ(θ, Y)`, transition, and record the score ratio of the sampled
/// control.
pub fn rollout_step<E: Environment, P: Policy + ?Sized>(
    env: &E,
    state: &E::State,
    policy: &P,
    theta: &[f64],
    rng: &mut SimRng,
) -> Result<(E::State, TrajectoryStep)> {
    check_compat(env, policy, theta)?;
    let mut next = state.clone();
    let mut observation = vec![0.0; env.obs_dim()];
    let mut probs = vec![0.0; env.num_controls()];
    let mut score_ratio = vec![0.0; theta.len()];
    env.observe(&next, rng, &mut observation);
    let control = policy.act(theta, &observation, rng, &mut probs, &mut score_ratio)?;
    let reward = env.step(&mut next, control, rng);
    if !reward.is_finite() {
        return Err(Error::EnvironmentFault(format!(
            "non-finite reward {reward} after control {control}"
        )));
    }
    Ok((
        next,
        TrajectoryStep {
            observation,
            control,
            reward,
            score_ratio,
        },
    ))
}

/// A running sample path with reusable buffers; the hot loop behind every
/// estimator.
pub struct Rollout<'a, E: Environment, P: Policy + ?Sized> {
    env: &'a E,
    policy: &'a P,
    state: E::State,
    obs: Vec<f64>,
    probs: Vec<f64>,
    ratio: Vec<f64>,
    control: usize,
    steps: u64,
}

impl<'a, E: Environment, P: Policy + ?Sized> Rollout<'a, E, P> {
    /// Starts a path from `env.reset`.
    pub fn new(env: &'a E, policy: &'a P, theta: &[f64], rng: &mut SimRng) -> Result<Self> {
        check_compat(env, policy, theta)?;
        let state = env.reset(rng);
        Ok(Self::from_state(env, policy, state))
    }

    pub fn from_state(env: &'a E, policy: &'a P, state: E::State) -> Self {
        Rollout {
            env,
            policy,
            state,
            obs: vec![0.0; env.obs_dim()],
            probs: vec![0.0; env.num_controls()],
            ratio: vec![0.0; policy.num_params()],
            control: 0,
            steps: 0,
        }
    }

    /// Advances one step under `theta` and returns `r(X_{t+1})`. The score
    /// ratio of the sampled control is left in [`Rollout::score`].
    pub fn advance(&mut self, theta: &[f64], rng: &mut SimRng) -> Result<f64> {
        self.env.observe(&self.state, rng, &mut self.obs);
        self.control = self
            .policy
            .act(theta, &self.obs, rng, &mut self.probs, &mut self.ratio)?;
        let reward = self.env.step(&mut self.state, self.control, rng);
        self.steps += 1;
        if !reward.is_finite() {
            return Err(Error::EnvironmentFault(format!(
                "non-finite reward at step {}",
                self.steps
            )));
        }
        Ok(reward)
    }

    pub fn score(&self) -> &[f64] {
        &self.ratio
    }

    pub fn control(&self) -> usize {
        self.control
    }

    /// Observation that produced the last control.
    pub fn observation(&self) -> &[f64] {
        &self.obs
    }

    pub fn state(&self) -> &E::State {
        &self.state
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Long-run average reward of `θ` estimated from one simulated path.
pub fn simulate_average_reward<E: Environment, P: Policy + ?Sized>(
    env: &E,
    policy: &P,
    theta: &[f64],
    steps: u64,
    seed: u64,
) -> Result<f64> {
    if steps == 0 {
        return Err(Error::Config("evaluation needs at least one step".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut path = Rollout::new(env, policy, theta, &mut rng)?;
    let mut total = 0.0;
    for _ in 0..steps {
        total += path.advance(theta, &mut rng)?;
    }
    Ok(total / steps as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub probes: usize,
    pub max_abs_score_ratio: f64,
    pub max_abs_reward: f64,
    /// Observation/control pairs where `μ_u = 0` and `∇μ_u = 0`, so the
    /// ratio was taken as zero.
    pub zero_over_zero: usize,
    pub reward_bound_exceeded: bool,
    pub ratio_bound_exceeded: bool,
}

/// Probes the bounded-ratio and bounded-reward assumptions along a simulated
/// path, enumerating every control at each visited observation.
pub fn validate_assumptions<E: Environment, P: Policy + ?Sized>(
    env: &E,
    policy: &P,
    theta: &[f64],
    probes: usize,
    rng: &mut SimRng,
) -> Result<AssumptionReport> {
    if probes == 0 {
        return Err(Error::Config("probes must be >= 1".into()));
    }
    check_compat(env, policy, theta)?;
    let k = theta.len();
    let mut probs = vec![0.0; env.num_controls()];
    let mut ratio = vec![0.0; k];
    let mut grad = vec![0.0; k];
    let mut report = AssumptionReport {
        probes,
        max_abs_score_ratio: 0.0,
        max_abs_reward: 0.0,
        zero_over_zero: 0,
        reward_bound_exceeded: false,
        ratio_bound_exceeded: false,
    };
    let mut path = Rollout::new(env, policy, theta, rng)?;
    for _ in 0..probes {
        let reward = path.advance(theta, rng)?;
        report.max_abs_reward = report.max_abs_reward.max(reward.abs());
        let obs = path.observation().to_vec();
        policy.distribution(theta, &obs, &mut probs)?;
        for u in 0..probs.len() {
            policy.prob_gradient(theta, &obs, u, &mut grad)?;
            if probs[u] == 0.0 {
                if grad.iter().any(|g| *g != 0.0) {
                    return Err(Error::AssumptionViolation(format!(
                        "control {u} has zero probability but nonzero gradient at observation {obs:?}"
                    )));
                }
                report.zero_over_zero += 1;
                continue;
            }
            policy.score_ratio(theta, &obs, u, &mut ratio)?;
            let m = ratio.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            report.max_abs_score_ratio = report.max_abs_score_ratio.max(m);
        }
    }
    report.reward_bound_exceeded = report.max_abs_reward > env.reward_bound();
    if let Some(b) = policy.ratio_bound() {
        report.ratio_bound_exceeded = report.max_abs_score_ratio > b;
    }
    Ok(report)
}

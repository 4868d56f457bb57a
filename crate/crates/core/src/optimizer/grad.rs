use crate::error::{ensure_len, Result};
use crate::estimator::gpomdp;
use crate::oracle::{build_chain, FiniteChainModel};
use crate::policy::Policy;
use crate::sim::Environment;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSample {
    pub grad: Vec<f64>,
    /// Estimate of the objective at the same point, when available.
    pub value: Option<f64>,
}

/// A possibly noisy, possibly biased gradient source. Equal
/// `(θ, budget, seed)` must give equal samples.
pub trait GradOracle {
    fn dim(&self) -> usize;

    fn eval(&mut self, theta: &[f64], budget: u64, seed: u64) -> Result<OracleSample>;

    /// Environment steps consumed so far.
    fn env_steps(&self) -> u64 {
        0
    }
}

impl<G: GradOracle + ?Sized> GradOracle for &mut G {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&mut self, theta: &[f64], budget: u64, seed: u64) -> Result<OracleSample> {
        (**self).eval(theta, budget, seed)
    }
    fn env_steps(&self) -> u64 {
        (**self).env_steps()
    }
}

/// GPOMDP at a fixed β; the budget is the run length `T`, the value is the
/// path's mean reward.
pub struct GpomdpOracle<'a, E: Environment, P: Policy + ?Sized> {
    env: &'a E,
    policy: &'a P,
    pub beta: f64,
    steps: u64,
}

impl<'a, E: Environment, P: Policy + ?Sized> GpomdpOracle<'a, E, P> {
    pub fn new(env: &'a E, policy: &'a P, beta: f64) -> Self {
        GpomdpOracle {
            env,
            policy,
            beta,
            steps: 0,
        }
    }
}

impl<E: Environment, P: Policy + ?Sized> GradOracle for GpomdpOracle<'_, E, P> {
    fn dim(&self) -> usize {
        self.policy.num_params()
    }

    fn eval(&mut self, theta: &[f64], budget: u64, seed: u64) -> Result<OracleSample> {
        let est = gpomdp(self.env, self.policy, theta, self.beta, budget.max(1), seed)?;
        self.steps += est.steps;
        Ok(OracleSample {
            grad: est.delta,
            value: Some(est.mean_reward),
        })
    }

    fn env_steps(&self) -> u64 {
        self.steps
    }
}

/// Exact `∇η` and `η` of a finite chain; budget and seed are ignored.
pub struct ExactChainOracle<'a, P: Policy + ?Sized> {
    model: &'a FiniteChainModel,
    policy: &'a P,
    pub evaluations: usize,
}

impl<'a, P: Policy + ?Sized> ExactChainOracle<'a, P> {
    pub fn new(model: &'a FiniteChainModel, policy: &'a P) -> Self {
        ExactChainOracle {
            model,
            policy,
            evaluations: 0,
        }
    }
}

impl<P: Policy + ?Sized> GradOracle for ExactChainOracle<'_, P> {
    fn dim(&self) -> usize {
        self.policy.num_params()
    }

    fn eval(&mut self, theta: &[f64], _budget: u64, _seed: u64) -> Result<OracleSample> {
        let chain = build_chain(self.model, self.policy, theta)?;
        self.evaluations += 1;
        let pi = chain.stationary()?;
        let value = pi.dot(&chain.rewards);
        Ok(OracleSample {
            grad: chain.exact_gradient()?,
            value: Some(value),
        })
    }
}

/// Deterministic oracle from a closure returning `(gradient, value)`.
pub struct FnOracle<F> {
    dim: usize,
    f: F,
    pub calls: Vec<(Vec<f64>, u64, u64)>,
}

impl<F> FnOracle<F>
where
    F: FnMut(&[f64], u64, u64) -> (Vec<f64>, Option<f64>),
{
    pub fn new(dim: usize, f: F) -> Self {
        FnOracle {
            dim,
            f,
            calls: Vec::new(),
        }
    }
}

impl<F> GradOracle for FnOracle<F>
where
    F: FnMut(&[f64], u64, u64) -> (Vec<f64>, Option<f64>),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&mut self, theta: &[f64], budget: u64, seed: u64) -> Result<OracleSample> {
        ensure_len("oracle input", self.dim, theta.len())?;
        self.calls.push((theta.to_vec(), budget, seed));
        let (grad, value) = (self.f)(theta, budget, seed);
        ensure_len("oracle output", self.dim, grad.len())?;
        Ok(OracleSample { grad, value })
    }
}

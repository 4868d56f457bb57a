//! Off-line ascent on any gradient oracle: Polak-Ribière conjugate
//! gradients driving a gradient-sign line search.

mod grad;
mod gsearch;
mod penalty;

use std::io::Write;

pub use grad::{ExactChainOracle, FnOracle, GpomdpOracle, GradOracle, OracleSample};
pub use gsearch::{adaptive_sign_budget, gsearch, Bracket, Branch, LineSearchOutcome, SearchSettings, SignProbe};
pub use penalty::{apply_penalty, update_penalty_schedule, PenaltySchedule};

use crate::error::{ensure_len, Error, Result};
use crate::sim::derive_seed;
use gsearch::dot;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    /// Initial line-search step.
    pub s0: f64,
    /// Stops when `‖g‖² < epsilon`; also the line-search resolution.
    pub epsilon: f64,
    pub max_cg_iterations: usize,
    /// Oracle budget for the gradient evaluations (GPOMDP's `T`).
    pub budget: u64,
    /// Initial sign-test budget inside the line search; defaults to
    /// `max(1, budget / 10)`.
    pub search_budget: Option<u64>,
    pub max_doublings: usize,
    /// Cap on line-search halvings and doublings.
    pub max_search_steps: usize,
    pub sanity_drop: Option<f64>,
    pub penalty: Option<PenaltySchedule>,
    /// Stop between iterations once the oracle has used this many steps.
    pub max_env_steps: Option<u64>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            s0: 1.0,
            epsilon: 1e-4,
            max_cg_iterations: 1000,
            budget: 1000,
            search_budget: None,
            max_doublings: 4,
            max_search_steps: 40,
            sanity_drop: Some(0.5),
            penalty: None,
            max_env_steps: None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0) || !self.s0.is_finite() {
            return Err(Error::Config(format!("s0 = {} must be positive", self.s0)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon = {} must be >= 0", self.epsilon)));
        }
        if self.budget == 0 || self.search_budget == Some(0) {
            return Err(Error::Config("oracle budgets must be >= 1".into()));
        }
        if let Some(p) = &self.penalty {
            if !(p.weight >= 0.0) {
                return Err(Error::Config(format!("penalty weight {} must be >= 0", p.weight)));
            }
        }
        Ok(())
    }

    fn sign_budget(&self, budget: u64) -> u64 {
        self.search_budget.unwrap_or((budget / 10).max(1))
    }
}

/// Seed of the line search in CG iteration `k ≥ 1`.
pub fn search_seed(base: u64, k: usize) -> u64 {
    derive_seed(base, 2 * k as u64 - 1)
}

/// Seed of the gradient evaluation closing CG iteration `k` (`k = 0` is the
/// initial gradient).
pub fn gradient_seed(base: u64, k: usize) -> u64 {
    derive_seed(base, 2 * k as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub env_steps: u64,
    pub g_norm_sq: f64,
    pub step: f64,
    pub branch: Option<Branch>,
    pub penalty_weight: f64,
    pub value: Option<f64>,
    pub budget: u64,
    pub reversed: bool,
    /// Parameters after this iteration.
    pub theta: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    IterationLimit,
    StepBudget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConjOutcome {
    pub theta: Vec<f64>,
    pub log: Vec<IterationLog>,
    pub env_steps: u64,
    pub stop: StopReason,
}

/// Oracle wrapper subtracting the current quadratic penalty and keeping the
/// raw value of the last evaluation.
struct Penalized<'a, G: ?Sized> {
    inner: &'a mut G,
    weight: f64,
    last_raw: Option<f64>,
}

impl<G: GradOracle + ?Sized> GradOracle for Penalized<'_, G> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&mut self, theta: &[f64], budget: u64, seed: u64) -> Result<OracleSample> {
        let sample = self.inner.eval(theta, budget, seed)?;
        ensure_len("oracle output", theta.len(), sample.grad.len())?;
        self.last_raw = sample.value;
        if self.weight == 0.0 {
            return Ok(sample);
        }
        let (grad, value) = apply_penalty(&sample.grad, sample.value.unwrap_or(0.0), theta, self.weight)?;
        Ok(OracleSample {
            grad,
            value: sample.value.map(|_| value),
        })
    }

    fn env_steps(&self) -> u64 {
        self.inner.env_steps()
    }
}

/// CONJPOMDP. Within iteration `k` every line-search evaluation uses
/// [`search_seed`]`(seed, k)`; the closing gradient uses
/// [`gradient_seed`]`(seed, k)`. When the sign test still disagrees with
/// the search direction after all doublings, the search runs along the
/// reversed direction and the gradient budget doubles.
pub fn conjpomdp<G: GradOracle + ?Sized>(
    oracle: &mut G,
    theta0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<ConjOutcome> {
    cfg.validate()?;
    ensure_len("initial parameters", oracle.dim(), theta0.len())?;
    let mut sched = cfg.penalty;
    let mut oracle = Penalized {
        inner: oracle,
        weight: sched.map_or(0.0, |p| p.weight),
        last_raw: None,
    };
    let wrap = |iteration: usize| move |e: Error| Error::Iteration {
        iteration,
        source: Box::new(e),
    };

    let mut theta = theta0.to_vec();
    let mut budget = cfg.budget;
    let first = oracle
        .eval(&theta, budget, gradient_seed(cfg.seed, 0))
        .map_err(wrap(0))?;
    let mut g = first.grad;
    let mut h = g.clone();
    let mut g_sq = dot(&g, &g);
    let mut raw_values = vec![oracle.last_raw];
    let mut log = vec![IterationLog {
        iteration: 0,
        env_steps: oracle.env_steps(),
        g_norm_sq: g_sq,
        step: 0.0,
        branch: None,
        penalty_weight: oracle.weight,
        value: first.value,
        budget,
        reversed: false,
        theta: theta.clone(),
    }];

    let mut stop = StopReason::IterationLimit;
    for k in 1..=cfg.max_cg_iterations {
        if !(g_sq >= cfg.epsilon) || g_sq == 0.0 {
            stop = StopReason::Converged;
            break;
        }
        if cfg.max_env_steps.is_some_and(|m| oracle.env_steps() >= m) {
            stop = StopReason::StepBudget;
            break;
        }
        let seed = search_seed(cfg.seed, k);
        let probe = adaptive_sign_budget(
            &mut oracle,
            &theta,
            &h,
            cfg.sign_budget(budget),
            cfg.max_doublings,
            seed,
        )
        .map_err(wrap(k))?;
        if probe.reversed {
            h.iter_mut().for_each(|x| *x = -*x);
        }
        let settings = SearchSettings {
            budget: probe.budget,
            seed,
            max_steps: cfg.max_search_steps,
            sanity_drop: cfg.sanity_drop,
        };
        let outcome = gsearch(
            &mut oracle,
            &mut theta,
            &h,
            cfg.s0,
            cfg.epsilon,
            &settings,
            probe.sample.value,
        )
        .map_err(wrap(k))?;
        if probe.reversed {
            budget = budget.saturating_mul(2);
        }

        let sample = oracle
            .eval(&theta, budget, gradient_seed(cfg.seed, k))
            .map_err(wrap(k))?;
        let delta = sample.grad;
        let gamma = (dot(&delta, &delta) - dot(&g, &delta)) / g_sq;
        for (hi, di) in h.iter_mut().zip(&delta) {
            *hi = di + gamma * *hi;
        }
        if dot(&h, &delta) < 0.0 {
            h.clone_from(&delta);
        }
        g = delta;
        g_sq = dot(&g, &g);
        if !g_sq.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(wrap(k)(Error::Numerical("non-finite iterate".into())));
        }

        raw_values.push(oracle.last_raw);
        log.push(IterationLog {
            iteration: k,
            env_steps: oracle.env_steps(),
            g_norm_sq: g_sq,
            step: outcome.step,
            branch: Some(outcome.branch),
            penalty_weight: oracle.weight,
            value: sample.value,
            budget,
            reversed: probe.reversed,
            theta: theta.clone(),
        });

        if let Some(s) = sched {
            if k >= s.review_period && s.review_period > 0 {
                if let (Some(now), Some(before)) = (raw_values[k], raw_values[k - s.review_period]) {
                    let next = update_penalty_schedule(s, k, now, before);
                    oracle.weight = next.weight;
                    sched = Some(next);
                }
            }
        }
        if k == cfg.max_cg_iterations && g_sq < cfg.epsilon {
            stop = StopReason::Converged;
        }
    }
    Ok(ConjOutcome {
        theta,
        env_steps: oracle.env_steps(),
        log,
        stop,
    })
}

/// CSV rows `cg_iteration,total_env_steps,g_norm_sq,step,branch,penalty_weight,value_estimate`.
pub fn write_iteration_log<W: Write>(mut out: W, log: &[IterationLog]) -> Result<()> {
    writeln!(out, "cg_iteration,total_env_steps,g_norm_sq,step,branch,penalty_weight,value_estimate")?;
    for row in log {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.iteration,
            row.env_steps,
            row.g_norm_sq,
            row.step,
            row.branch.map_or("", |b| b.name()),
            row.penalty_weight,
            row.value.map(|v| v.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(curv: Vec<f64>, peak: Vec<f64>) -> FnOracle<impl FnMut(&[f64], u64, u64) -> (Vec<f64>, Option<f64>)> {
        let k = curv.len();
        FnOracle::new(k, move |t: &[f64], _, _| {
            let g = (0..k).map(|i| -2.0 * curv[i] * (t[i] - peak[i])).collect();
            let v = -(0..k).map(|i| curv[i] * (t[i] - peak[i]).powi(2)).sum::<f64>();
            (g, Some(v))
        })
    }

    #[test]
    fn isotropic_quadratic_in_one_search() {
        let mut oracle = quadratic(vec![1.0; 3], vec![1.0, -2.0, 0.5]);
        let cfg = OptimizerConfig {
            s0: 0.3,
            epsilon: 1e-20,
            ..OptimizerConfig::default()
        };
        let out = conjpomdp(&mut oracle, &[4.0, 4.0, 4.0], &cfg).unwrap();
        assert_eq!(out.stop, StopReason::Converged);
        assert_eq!(out.log.len(), 2);
        for (a, b) in out.theta.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn restart_keeps_direction_uphill() {
        let mut oracle = quadratic(vec![1.0, 4.0, 9.0, 0.5], vec![0.0; 4]);
        let cfg = OptimizerConfig {
            epsilon: 1e-16,
            ..OptimizerConfig::default()
        };
        let out = conjpomdp(&mut oracle, &[1.0, 1.0, 1.0, 1.0], &cfg).unwrap();
        assert!(out.log.len() <= 6);
        let values: Vec<f64> = out.log.iter().map(|l| l.value.unwrap()).collect();
        assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn seeds_are_constant_within_a_search() {
        let mut oracle = quadratic(vec![1.0, 3.0], vec![2.0, -1.0]);
        let cfg = OptimizerConfig {
            epsilon: 1e-18,
            seed: 5,
            ..OptimizerConfig::default()
        };
        let out = conjpomdp(&mut oracle, &[0.0, 0.0], &cfg).unwrap();
        let seeds: Vec<u64> = oracle.calls.iter().map(|c| c.2).collect();
        assert_eq!(seeds[0], gradient_seed(5, 0));
        let mut at = 1;
        for k in 1..out.log.len() {
            while seeds[at] == search_seed(5, k) {
                at += 1;
            }
            assert_eq!(seeds[at], gradient_seed(5, k));
            at += 1;
        }
        assert_eq!(at, seeds.len());
    }

    #[test]
    fn reversed_direction_doubles_budget() {
        // Gradient evaluations with the initial seed point the wrong way.
        let mut oracle = FnOracle::new(1, |t: &[f64], _, seed| {
            let g = -2.0 * (t[0] - 3.0);
            (vec![if seed == gradient_seed(0, 0) { -g } else { g }], None)
        });
        let cfg = OptimizerConfig {
            epsilon: 1e-18,
            s0: 0.1,
            budget: 100,
            max_cg_iterations: 1,
            ..OptimizerConfig::default()
        };
        let out = conjpomdp(&mut oracle, &[0.0], &cfg).unwrap();
        assert!(out.log[1].reversed);
        assert_eq!(out.log[1].budget, 200);
        assert!((out.theta[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn iteration_errors_carry_context() {
        let mut oracle = FnOracle::new(1, |_: &[f64], _, _| (vec![1.0], None));
        let err = conjpomdp(&mut oracle, &[0.0], &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Iteration { iteration: 1, .. }));
    }

    #[test]
    fn penalty_shrinks_on_stalled_progress() {
        // Each seed shifts the peak slightly so the search never settles;
        // the raw value never improves.
        let mut oracle = FnOracle::new(2, |t: &[f64], _, seed| {
            let shift = ((seed % 1000) as f64 / 1000.0 - 0.5) * 0.1;
            (vec![-2.0 * (t[0] - 2.0 - shift), -2.0 * (t[1] + 1.0)], Some(-1.0))
        });
        let cfg = OptimizerConfig {
            epsilon: 0.0,
            max_cg_iterations: 25,
            sanity_drop: None,
            penalty: Some(PenaltySchedule::new(0.5)),
            ..OptimizerConfig::default()
        };
        let out = conjpomdp(&mut oracle, &[0.0, 0.0], &cfg).unwrap();
        let w: Vec<f64> = out.log.iter().map(|l| l.penalty_weight).collect();
        assert_eq!(w[10], 0.5);
        assert!((w[11] - 0.05).abs() < 1e-15);
        assert!((w[21] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn log_csv_layout() {
        let log = vec![IterationLog {
            iteration: 1,
            env_steps: 20,
            g_norm_sq: 0.25,
            step: 3.0,
            branch: Some(Branch::Quadratic),
            penalty_weight: 0.0,
            value: None,
            budget: 10,
            reversed: false,
            theta: vec![1.0],
        }];
        let mut buf = Vec::new();
        write_iteration_log(&mut buf, &log).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("\n1,20,0.25,3,quadratic,0,\n"));
    }
}

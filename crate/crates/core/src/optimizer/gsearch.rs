use super::grad::{GradOracle, OracleSample};
use crate::error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn offset(theta0: &[f64], dir: &[f64], s: f64) -> Vec<f64> {
    theta0.iter().zip(dir).map(|(t, d)| t + s * d).collect()
}

/// Step sizes `s₋ < s₊` with the directional derivatives measured there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub p_lower: f64,
    pub p_upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Quadratic,
    Midpoint,
}

impl Branch {
    pub fn name(&self) -> &'static str {
        match self {
            Branch::Quadratic => "quadratic",
            Branch::Midpoint => "midpoint",
        }
    }
}

impl Bracket {
    pub fn is_proper(&self) -> bool {
        self.p_lower > 0.0 && self.p_upper < 0.0
    }

    /// Zero of the line through the two derivative samples when the bracket
    /// is proper, the midpoint otherwise.
    pub fn interpolate(&self) -> (f64, Branch) {
        if self.is_proper() {
            let s = self.lower - self.p_lower * (self.upper - self.lower) / (self.p_upper - self.p_lower);
            (s, Branch::Quadratic)
        } else {
            (0.5 * (self.lower + self.upper), Branch::Midpoint)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchSettings {
    /// Budget passed to every oracle call.
    pub budget: u64,
    /// Seed shared by every oracle call in this search.
    pub seed: u64,
    /// Cap on halvings and on doublings.
    pub max_steps: usize,
    /// Reject a step whose value estimate falls by more than this fraction
    /// of the starting value's magnitude.
    pub sanity_drop: Option<f64>,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            budget: 1,
            seed: 0,
            max_steps: 40,
            sanity_drop: Some(0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSearchOutcome {
    pub step: f64,
    pub bracket: Bracket,
    pub branch: Branch,
    pub oracle_calls: usize,
    /// Sum of the budgets of all oracle calls.
    pub budget_used: u64,
    /// Steps halved by the value sanity check.
    pub sanity_rejections: usize,
}

/// Gradient-sign line search. Brackets the maximum along `dir` from
/// `theta0` by halving or doubling the step, interpolates, and moves
/// `theta0` to the chosen point.
///
/// `start_value` is the objective estimate at `theta0`, used by the sanity
/// check when the oracle reports values.
pub fn gsearch<G: GradOracle + ?Sized>(
    oracle: &mut G,
    theta0: &mut [f64],
    dir: &[f64],
    s0: f64,
    epsilon: f64,
    settings: &SearchSettings,
    start_value: Option<f64>,
) -> Result<LineSearchOutcome> {
    if !(s0 > 0.0) || !s0.is_finite() {
        return Err(Error::Domain(format!("initial step {s0} must be positive")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} must be >= 0")));
    }
    let mut calls = 0usize;
    let mut eval = |oracle: &mut G, s: f64| -> Result<OracleSample> {
        calls += 1;
        oracle.eval(&offset(theta0, dir, s), settings.budget, settings.seed)
    };

    let mut s = s0;
    let mut sample = eval(oracle, s)?;
    let mut p = dot(&sample.grad, dir);
    let bracket = if p < 0.0 {
        let (mut upper, mut p_upper);
        let mut n = 0;
        loop {
            upper = s;
            p_upper = p;
            s /= 2.0;
            sample = eval(oracle, s)?;
            p = dot(&sample.grad, dir);
            n += 1;
            if p > -epsilon {
                break;
            }
            if n >= settings.max_steps {
                return Err(Error::BracketFailure {
                    lower: s,
                    upper,
                    evaluations: n + 1,
                });
            }
        }
        Bracket {
            lower: s,
            upper,
            p_lower: p,
            p_upper,
        }
    } else {
        let (mut lower, mut p_lower);
        let mut n = 0;
        loop {
            lower = s;
            p_lower = p;
            s *= 2.0;
            sample = eval(oracle, s)?;
            p = dot(&sample.grad, dir);
            n += 1;
            if p < epsilon {
                break;
            }
            if n >= settings.max_steps {
                return Err(Error::BracketFailure {
                    lower,
                    upper: s,
                    evaluations: n + 1,
                });
            }
        }
        Bracket {
            lower,
            upper: s,
            p_lower,
            p_upper: p,
        }
    };
    let (mut step, branch) = bracket.interpolate();

    let mut rejections = 0;
    if let (Some(frac), Some(v0)) = (settings.sanity_drop, start_value) {
        let floor = v0 - frac * v0.abs();
        while rejections < settings.max_steps {
            match eval(oracle, step)?.value {
                Some(v) if v < floor => {
                    step /= 2.0;
                    rejections += 1;
                }
                _ => break,
            }
        }
    }

    for (t, d) in theta0.iter_mut().zip(dir) {
        *t += step * d;
    }
    Ok(LineSearchOutcome {
        step,
        bracket,
        branch,
        oracle_calls: calls,
        budget_used: calls as u64 * settings.budget,
        sanity_rejections: rejections,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignProbe {
    pub sample: OracleSample,
    pub budget: u64,
    pub doublings: usize,
    /// Still a negative inner product after every doubling.
    pub reversed: bool,
}

/// Estimates the gradient at `theta` with budget `t0`, doubling the budget
/// while its inner product with `dir` is negative, at most `max_doublings`
/// times.
pub fn adaptive_sign_budget<G: GradOracle + ?Sized>(
    oracle: &mut G,
    theta: &[f64],
    dir: &[f64],
    t0: u64,
    max_doublings: usize,
    seed: u64,
) -> Result<SignProbe> {
    if t0 == 0 {
        return Err(Error::Domain("sign-test budget must be >= 1".into()));
    }
    let mut budget = t0;
    let mut sample = oracle.eval(theta, budget, seed)?;
    let mut doublings = 0;
    while dot(&sample.grad, dir) < 0.0 && doublings < max_doublings {
        budget = budget.saturating_mul(2);
        doublings += 1;
        sample = oracle.eval(theta, budget, seed)?;
    }
    let reversed = dot(&sample.grad, dir) < 0.0;
    Ok(SignProbe {
        sample,
        budget,
        doublings,
        reversed,
    })
}

#[cfg(test)]
mod tests {
    use super::super::grad::FnOracle;
    use super::*;

    fn parabola() -> FnOracle<impl FnMut(&[f64], u64, u64) -> (Vec<f64>, Option<f64>)> {
        FnOracle::new(1, |t: &[f64], _, _| (vec![-2.0 * (t[0] - 3.0)], Some(-(t[0] - 3.0).powi(2))))
    }

    #[test]
    fn forward_bracket_lands_on_parabola_peak() {
        let mut oracle = parabola();
        let mut theta = [0.0];
        let out = gsearch(&mut oracle, &mut theta, &[1.0], 1.0, 1e-9, &SearchSettings::default(), None)
            .unwrap();
        assert_eq!(out.bracket.lower, 2.0);
        assert_eq!(out.bracket.upper, 4.0);
        assert_eq!((out.bracket.p_lower, out.bracket.p_upper), (2.0, -2.0));
        assert_eq!(out.branch, Branch::Quadratic);
        assert_eq!(out.step, 3.0);
        assert_eq!(theta[0], 3.0);
        let probed: Vec<f64> = oracle.calls.iter().map(|c| c.0[0]).collect();
        assert_eq!(probed, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn backward_bracket_halves() {
        let mut oracle = parabola();
        let mut theta = [0.0];
        let out = gsearch(&mut oracle, &mut theta, &[1.0], 16.0, 1e-9, &SearchSettings::default(), None)
            .unwrap();
        assert_eq!((out.bracket.lower, out.bracket.upper), (2.0, 4.0));
        assert_eq!(theta[0], 3.0);
    }

    #[test]
    fn interpolation_examples() {
        let b = Bracket {
            lower: 0.0,
            upper: 1.0,
            p_lower: 1.0,
            p_upper: -1.0,
        };
        assert_eq!(b.interpolate(), (0.5, Branch::Quadratic));
        let b = Bracket {
            lower: 2.0,
            upper: 4.0,
            p_lower: -0.1,
            p_upper: 0.05,
        };
        assert_eq!(b.interpolate(), (3.0, Branch::Midpoint));
    }

    #[test]
    fn every_call_in_a_search_shares_seed_and_budget() {
        let mut oracle = parabola();
        let mut theta = [0.0];
        let settings = SearchSettings {
            budget: 17,
            seed: 99,
            ..SearchSettings::default()
        };
        let out = gsearch(&mut oracle, &mut theta, &[1.0], 0.01, 0.0, &settings, Some(-9.0)).unwrap();
        assert!(oracle.calls.iter().all(|c| c.1 == 17 && c.2 == 99));
        assert_eq!(out.oracle_calls, oracle.calls.len());
    }

    #[test]
    fn unbounded_direction_fails_to_bracket() {
        let mut oracle = FnOracle::new(1, |_: &[f64], _, _| (vec![1.0], None));
        let mut theta = [0.0];
        let err = gsearch(&mut oracle, &mut theta, &[1.0], 1.0, 0.0, &SearchSettings::default(), None)
            .unwrap_err();
        assert!(matches!(err, Error::BracketFailure { evaluations: 41, .. }));
        assert_eq!(theta[0], 0.0);
    }

    #[test]
    fn sanity_check_halves_overshoot() {
        // Gradient sign says "peak at 3", values say the far side collapses.
        let mut oracle = FnOracle::new(1, |t: &[f64], _, _| {
            let v = if t[0] > 1.0 { -100.0 } else { 1.0 };
            (vec![-2.0 * (t[0] - 3.0)], Some(v))
        });
        let mut theta = [0.0];
        let out = gsearch(&mut oracle, &mut theta, &[1.0], 1.0, 1e-9, &SearchSettings::default(), Some(1.0))
            .unwrap();
        assert_eq!(out.sanity_rejections, 2);
        assert_eq!(theta[0], 0.75);
    }

    #[test]
    fn sign_budget_stops_when_positive() {
        let mut oracle = FnOracle::new(1, |_: &[f64], b, _| (vec![if b < 40 { -1.0 } else { 1.0 }], None));
        let probe = adaptive_sign_budget(&mut oracle, &[0.0], &[1.0], 10, 4, 0).unwrap();
        assert_eq!((probe.budget, probe.doublings, probe.reversed), (40, 2, false));

        let mut oracle = FnOracle::new(1, |_: &[f64], _, _| (vec![1.0], None));
        let probe = adaptive_sign_budget(&mut oracle, &[0.0], &[1.0], 10, 4, 0).unwrap();
        assert_eq!((probe.budget, probe.doublings), (10, 0));
    }

    #[test]
    fn sign_budget_flags_reversal() {
        let mut oracle = FnOracle::new(1, |_: &[f64], _, _| (vec![-1.0], None));
        let probe = adaptive_sign_budget(&mut oracle, &[0.0], &[1.0], 3, 4, 0).unwrap();
        assert!(probe.reversed);
        assert_eq!(probe.doublings, 4);
        assert_eq!(probe.budget, 48);
        assert_eq!(oracle.calls.len(), 5);
    }
}

//! Exact analysis of finite chains: the controlled transition matrix, its
//! parameter derivatives, the stationary distribution, the average reward
//! and its exact gradient.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, Error, Result};
use crate::policy::Policy;

const ROW_SUM_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;

/// A finite POMDP whose observation in state `i` is the feature vector
/// `features[i]` with probability one.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteChainModel {
    /// One row-stochastic `n × n` matrix per control.
    pub transitions: Vec<DMatrix<f64>>,
    pub rewards: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

impl FiniteChainModel {
    pub fn new(transitions: Vec<DMatrix<f64>>, rewards: Vec<f64>, features: Vec<Vec<f64>>) -> Result<Self> {
        let model = FiniteChainModel {
            transitions,
            rewards,
            features,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn num_states(&self) -> usize {
        self.rewards.len()
    }

    pub fn num_controls(&self) -> usize {
        self.transitions.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_states();
        if n == 0 || self.transitions.is_empty() {
            return Err(Error::Config("finite chain needs at least one state and one control".into()));
        }
        ensure_len("feature rows", n, self.features.len())?;
        let d = self.feature_dim();
        for f in &self.features {
            ensure_len("feature dimension", d, f.len())?;
        }
        for (u, p) in self.transitions.iter().enumerate() {
            if p.nrows() != n || p.ncols() != n {
                return Err(Error::Config(format!(
                    "transition matrix {u} is {}x{}, expected {n}x{n}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            check_stochastic(p).map_err(|e| Error::Config(format!("control {u}: {e}")))?;
        }
        Ok(())
    }

    /// Writes the model in its text form. Numbers use shortest round-trip
    /// formatting, so [`FiniteChainModel::read`] restores it bit for bit.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.num_states();
        writeln!(out, "states {n}")?;
        writeln!(out, "controls {}", self.num_controls())?;
        writeln!(out, "features {}", self.feature_dim())?;
        for (u, p) in self.transitions.iter().enumerate() {
            writeln!(out, "transition {u}")?;
            for i in 0..n {
                write_row(&mut out, p.row(i).iter())?;
            }
        }
        writeln!(out, "rewards")?;
        write_row(&mut out, self.rewards.iter())?;
        writeln!(out, "phi")?;
        for f in &self.features {
            write_row(&mut out, f.iter())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim().to_string();
            if !body.is_empty() {
                lines.push((i + 1, body));
            }
        }
        let mut cursor = lines.into_iter();
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (no, text) = cursor.next().ok_or(Error::Parse {
                line: 0,
                message: format!("unexpected end of file, expected `{key}`"),
            })?;
            let rest = text.strip_prefix(key).ok_or_else(|| Error::Parse {
                line: no,
                message: format!("expected `{key}`, found `{text}`"),
            })?;
            Ok((no, rest.trim().to_string()))
        };
        let count = |(no, s): (usize, String)| -> Result<usize> {
            s.parse().map_err(|e| Error::Parse {
                line: no,
                message: format!("bad count `{s}`: {e}"),
            })
        };
        let n = count(header("states")?)?;
        let m = count(header("controls")?)?;
        let d = count(header("features")?)?;
        let mut transitions = Vec::with_capacity(m);
        for u in 0..m {
            let (no, idx) = header("transition")?;
            if idx != u.to_string() {
                return Err(Error::Parse {
                    line: no,
                    message: format!("expected transition {u}, found {idx}"),
                });
            }
            let mut rows = Vec::with_capacity(n * n);
            for _ in 0..n {
                rows.extend(parse_row(header("")?, n)?);
            }
            transitions.push(DMatrix::from_row_slice(n, n, &rows));
        }
        header("rewards")?;
        let rewards = parse_row(header("")?, n)?;
        header("phi")?;
        let mut features = Vec::with_capacity(n);
        for _ in 0..n {
            features.push(parse_row(header("")?, d)?);
        }
        FiniteChainModel::new(transitions, rewards, features)
    }
}

fn write_row<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let row: Vec<String> = values.map(|v| format!("{v:?}")).collect();
    writeln!(out, "{}", row.join(" "))?;
    Ok(())
}

fn parse_row((no, text): (usize, String), expected: usize) -> Result<Vec<f64>> {
    let values = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line: no,
                message: format!("bad number `{t}`: {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::Parse {
            line: no,
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    for (i, row) in p.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!("row {i} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Domain(format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// `P(θ)` and its partial derivatives `∂P(θ)/∂θ_k`.
#[derive(Clone, Debug)]
pub struct ParameterizedChain {
    pub transition: DMatrix<f64>,
    pub gradient: Vec<DMatrix<f64>>,
    pub rewards: DVector<f64>,
}

/// `p_ij(θ) = Σ_u μ_u(θ, φ(i)) p_ij(u)` and
/// `∂_k p_ij(θ) = Σ_u μ_u(θ, φ(i)) (∇μ_u/μ_u)_k p_ij(u)`.
pub fn build_chain<P: Policy + ?Sized>(
    model: &FiniteChainModel,
    policy: &P,
    theta: &[f64],
) -> Result<ParameterizedChain> {
    model.validate()?;
    ensure_len("policy parameters", policy.num_params(), theta.len())?;
    ensure_len("observation dimension", model.feature_dim(), policy.obs_dim())?;
    ensure_len("control count", model.num_controls(), policy.num_controls())?;
    let n = model.num_states();
    let k = theta.len();
    let mut transition = DMatrix::zeros(n, n);
    let mut gradient = vec![DMatrix::zeros(n, n); k];
    let mut probs = vec![0.0; model.num_controls()];
    let mut dmu = vec![0.0; k];
    for i in 0..n {
        let phi = &model.features[i];
        policy.distribution(theta, phi, &mut probs)?;
        for (u, pu) in model.transitions.iter().enumerate() {
            policy.prob_gradient(theta, phi, u, &mut dmu)?;
            for j in 0..n {
                let p = pu[(i, j)];
                if p == 0.0 {
                    continue;
                }
                transition[(i, j)] += probs[u] * p;
                for (g, d) in gradient.iter_mut().zip(&dmu) {
                    g[(i, j)] += d * p;
                }
            }
        }
    }
    Ok(ParameterizedChain {
        transition,
        gradient,
        rewards: DVector::from_column_slice(&model.rewards),
    })
}

/// Unique `π` with `πP = π`, `Σπ = 1`.
///
/// Uniqueness is checked by the rank of `[Pᵀ − I; 1ᵀ]`; the solve replaces
/// one (redundant) balance equation by the normalization row and uses an LU
/// factorization with partial pivoting.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Domain(format!("transition matrix must be square, got {}x{}", n, p.ncols())));
    }
    check_stochastic(p)?;
    let mut augmented = DMatrix::zeros(n + 1, n);
    augmented
        .view_mut((0, 0), (n, n))
        .copy_from(&(p.transpose() - DMatrix::identity(n, n)));
    augmented.row_mut(n).fill(1.0);
    let sv = augmented.clone().svd(false, false).singular_values;
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if sv.len() < n || smallest < RANK_TOL {
        return Err(Error::AssumptionViolation(format!(
            "chain has no unique stationary distribution (smallest singular value {smallest:e})"
        )));
    }
    let mut a = augmented.rows(0, n).into_owned();
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular balance system".into()))?;
    Ok(pi.map(|v| if v < 0.0 && v > -1e-15 { 0.0 } else { v }))
}

/// `η = Σ_i π_i r(i)`.
pub fn exact_average_reward(pi: &DVector<f64>, rewards: &DVector<f64>) -> Result<f64> {
    ensure_len("reward vector", pi.len(), rewards.len())?;
    Ok(pi.dot(rewards))
}

impl ParameterizedChain {
    pub fn stationary(&self) -> Result<DVector<f64>> {
        stationary_distribution(&self.transition)
    }

    pub fn average_reward(&self) -> Result<f64> {
        exact_average_reward(&self.stationary()?, &self.rewards)
    }

    /// `∇η = π' ∇P [I − P + eπ']⁻¹ r`.
    pub fn exact_gradient(&self) -> Result<Vec<f64>> {
        let pi = self.stationary()?;
        let n = pi.len();
        let mut fundamental = DMatrix::identity(n, n) - &self.transition;
        for mut row in fundamental.row_iter_mut() {
            row += pi.transpose();
        }
        let v = fundamental
            .lu()
            .solve(&self.rewards)
            .ok_or_else(|| Error::Numerical("singular fundamental matrix".into()))?;
        Ok(self
            .gradient
            .iter()
            .map(|dp| (pi.transpose() * dp * &v)[(0, 0)])
            .collect())
    }
}

pub fn exact_gradient(chain: &ParameterizedChain) -> Result<Vec<f64>> {
    chain.exact_gradient()
}

/// Exact `η(θ)` of `policy` on `model`.
pub fn average_reward_at<P: Policy + ?Sized>(model: &FiniteChainModel, policy: &P, theta: &[f64]) -> Result<f64> {
    build_chain(model, policy, theta)?.average_reward()
}

/// Central differences `(f(θ + h e_k) − f(θ − h e_k)) / 2h`.
pub fn finite_difference_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step {h} must be positive")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        probe[k] = theta[k] + h;
        let up = f(&probe)?;
        probe[k] = theta[k] - h;
        let down = f(&probe)?;
        probe[k] = theta[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!("non-finite evaluation along component {k}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::three_state_model;
    use crate::policy::ThreeStateSoftmax;
    use crate::sim::rng_from_seed;
    use rand::Rng;

    /// Stationary distribution by iterating the lazy chain `(P + I)/2`,
    /// independent of the linear solve.
    fn lazy_power_iteration(p: &DMatrix<f64>) -> DVector<f64> {
        let n = p.nrows();
        let lazy = (p + DMatrix::identity(n, n)) * 0.5;
        let mut pi = DVector::from_element(n, 1.0 / n as f64);
        for _ in 0..20_000 {
            pi = (pi.transpose() * &lazy).transpose();
        }
        pi
    }

    fn random_stochastic(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let mut p = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.01..1.0));
        for mut row in p.row_iter_mut() {
            let s: f64 = row.iter().sum();
            row /= s;
        }
        p
    }

    #[test]
    fn two_cycle_is_uniform() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let pi = stationary_distribution(&p).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15 && (pi[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_has_no_unique_distribution() {
        let p = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            stationary_distribution(&p),
            Err(Error::AssumptionViolation(_))
        ));
    }

    #[test]
    fn non_stochastic_input_is_rejected() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 1.0, 0.0]);
        assert!(stationary_distribution(&p).is_err());
        let bad = FiniteChainModel::new(vec![p], vec![0.0, 1.0], vec![vec![1.0], vec![0.0]]);
        assert!(bad.is_err());
    }

    #[test]
    fn balance_holds_for_random_chains() {
        let mut rng = rng_from_seed(99);
        for trial in 0..100 {
            let n = 2 + trial % 6;
            let p = random_stochastic(&mut rng, n);
            let pi = stationary_distribution(&p).unwrap();
            let residual = (pi.transpose() * &p - pi.transpose()).amax();
            assert!(residual < 1e-12, "residual {residual}");
            assert!((pi.sum() - 1.0).abs() < 1e-12);
            assert!((pi.clone() - lazy_power_iteration(&p)).amax() < 1e-10);
        }
    }

    #[test]
    fn uniform_policy_averages_action_rows() {
        let chain = build_chain(&three_state_model(), &ThreeStateSoftmax, &[0.0; 4]).unwrap();
        let row_a: Vec<f64> = chain.transition.row(0).iter().cloned().collect();
        assert_eq!(row_a, vec![0.0, 0.5, 0.5]);
        for g in &chain.gradient {
            for row in g.row_iter() {
                assert!(row.sum().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn saturated_policy_reproduces_action_rows() {
        let model = three_state_model();
        // θ pushing all probability onto a1 (s1 ≫ s2 for every feature vector).
        let chain = build_chain(&model, &ThreeStateSoftmax, &[2000.0, 2000.0, -2000.0, -2000.0]).unwrap();
        assert_eq!(chain.transition, model.transitions[0]);
        assert!(chain.gradient.iter().all(|g| g.amax() == 0.0));
    }

    #[test]
    fn always_a2_is_optimal_with_reward_point_eight() {
        let model = three_state_model();
        let chain = build_chain(&model, &ThreeStateSoftmax, &[-2000.0, -2000.0, 2000.0, 2000.0]).unwrap();
        let pi = chain.stationary().unwrap();
        for (got, want) in pi.iter().zip([1.0 / 30.0, 1.0 / 6.0, 0.8]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((exact_average_reward(&pi, &chain.rewards).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn average_reward_edge_cases() {
        let pi = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        assert_eq!(exact_average_reward(&pi, &DVector::zeros(3)).unwrap(), 0.0);
        let c = exact_average_reward(&pi, &DVector::from_element(3, 2.5)).unwrap();
        assert!((c - 2.5).abs() < 1e-15);
        assert!(exact_average_reward(&pi, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let model = three_state_model();
        let mut rng = rng_from_seed(7);
        let mut thetas = vec![vec![1.0, 1.0, -1.0, -1.0]];
        thetas.extend((0..19).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()));
        for theta in thetas {
            let exact = build_chain(&model, &ThreeStateSoftmax, &theta)
                .unwrap()
                .exact_gradient()
                .unwrap();
            let fd = finite_difference_gradient(
                |t| average_reward_at(&model, &ThreeStateSoftmax, t),
                &theta,
                1e-6,
            )
            .unwrap();
            let err: f64 = exact.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(err / norm < 1e-6, "relative error {}", err / norm);
            assert!((exact[2] + exact[0]).abs() < 1e-15 && (exact[3] + exact[1]).abs() < 1e-15);
        }
    }

    /// Fixed 30/70 mix that ignores its single parameter.
    struct ConstantMix;

    impl Policy for ConstantMix {
        fn num_params(&self) -> usize {
            1
        }
        fn num_controls(&self) -> usize {
            2
        }
        fn obs_dim(&self) -> usize {
            2
        }
        fn distribution(&self, _: &[f64], _: &[f64], probs: &mut [f64]) -> Result<()> {
            probs.copy_from_slice(&[0.3, 0.7]);
            Ok(())
        }
        fn score_ratio(&self, _: &[f64], _: &[f64], _: usize, ratio: &mut [f64]) -> Result<()> {
            ratio.fill(0.0);
            Ok(())
        }
    }

    #[test]
    fn theta_independent_policy_has_zero_gradient() {
        let model = three_state_model();
        let chain = build_chain(&model, &ConstantMix, &[0.4]).unwrap();
        assert_eq!(chain.exact_gradient().unwrap(), vec![0.0]);
    }

    #[test]
    fn finite_differences_of_simple_functions() {
        let c = [1.5, -2.0, 0.25];
        let g = finite_difference_gradient(|t| Ok(t.iter().zip(&c).map(|(a, b)| a * b).sum()), &[0.3, 0.1, -4.0], 1e-3)
            .unwrap();
        for (a, b) in g.iter().zip(&c) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = finite_difference_gradient(|t| Ok(t[0] * t[0] + t[1] * t[1]), &[1.0, 2.0], 1e-6).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        assert!(finite_difference_gradient(|_| Ok(0.0), &[1.0], 0.0).is_err());
        assert!(finite_difference_gradient(|_| Ok(f64::NAN), &[1.0], 1e-3).is_err());
    }

    #[test]
    fn text_form_round_trips_exactly() {
        let model = three_state_model();
        let mut buf = Vec::new();
        model.write(&mut buf).unwrap();
        let back = FiniteChainModel::read(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn malformed_model_text_is_rejected() {
        assert!(FiniteChainModel::read("states 2\ncontrols 1\n".as_bytes()).is_err());
        assert!(FiniteChainModel::read("states x\n".as_bytes()).is_err());
    }
}

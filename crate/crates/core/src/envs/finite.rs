use nalgebra::DMatrix;
use rand::Rng;

use crate::oracle::FiniteChainModel;
use crate::sim::{Environment, SimRng};

/// The three-state, two-action MDP. States are A, B, C (indices 0..3);
/// controls a1, a2. Only C pays.
pub fn three_state_model() -> FiniteChainModel {
    #[rustfmt::skip]
    let a1 = DMatrix::from_row_slice(3, 3, &[
        0.0, 0.8, 0.2,
        0.8, 0.0, 0.2,
        0.0, 0.8, 0.2,
    ]);
    #[rustfmt::skip]
    let a2 = DMatrix::from_row_slice(3, 3, &[
        0.0, 0.2, 0.8,
        0.2, 0.0, 0.8,
        0.0, 0.2, 0.8,
    ]);
    FiniteChainModel {
        transitions: vec![a1, a2],
        rewards: vec![0.0, 0.0, 1.0],
        features: vec![
            vec![12.0 / 18.0, 6.0 / 18.0],
            vec![6.0 / 18.0, 12.0 / 18.0],
            vec![5.0 / 18.0, 5.0 / 18.0],
        ],
    }
}

/// Simulator for a [`FiniteChainModel`]: observations are the state's
/// feature vector, starting states are uniform.
#[derive(Clone, Debug)]
pub struct FiniteChainEnv {
    model: FiniteChainModel,
    reward_bound: f64,
}

impl FiniteChainEnv {
    pub fn new(model: FiniteChainModel) -> crate::Result<Self> {
        model.validate()?;
        let reward_bound = model.rewards.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        Ok(FiniteChainEnv {
            model,
            reward_bound,
        })
    }

    pub fn three_state() -> Self {
        FiniteChainEnv::new(three_state_model()).expect("three-state model is valid")
    }

    pub fn model(&self) -> &FiniteChainModel {
        &self.model
    }

    /// Samples the successor of `state` under `control` and returns it with
    /// its reward.
    pub fn transition(&self, state: usize, control: usize, rng: &mut SimRng) -> (usize, f64) {
        let row = self.model.transitions[control].row(state);
        let x: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = state;
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                next = j;
                if x < acc {
                    break;
                }
            }
        }
        (next, self.model.rewards[next])
    }
}

impl Environment for FiniteChainEnv {
    type State = usize;

    fn num_controls(&self) -> usize {
        self.model.num_controls()
    }

    fn obs_dim(&self) -> usize {
        self.model.feature_dim()
    }

    fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    fn reset(&self, rng: &mut SimRng) -> usize {
        rng.random_range(0..self.model.num_states())
    }

    fn observe(&self, state: &usize, _rng: &mut SimRng, obs: &mut [f64]) {
        obs.copy_from_slice(&self.model.features[*state]);
    }

    fn step(&self, state: &mut usize, control: usize, rng: &mut SimRng) -> f64 {
        let (next, reward) = self.transition(*state, control, rng);
        *state = next;
        reward
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng_from_seed;

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;

    #[test]
    fn b_under_a1_never_stays() {
        let env = FiniteChainEnv::three_state();
        let mut rng = rng_from_seed(1);
        for _ in 0..10_000 {
            let (next, _) = env.transition(B, 0, &mut rng);
            assert_ne!(next, B);
        }
    }

    #[test]
    fn rewards_follow_successor() {
        let env = FiniteChainEnv::three_state();
        let mut rng = rng_from_seed(2);
        for _ in 0..10_000 {
            let (next, r) = env.transition(C, 1, &mut rng);
            assert_eq!(r, if next == C { 1.0 } else { 0.0 });
        }
    }

    /// Pearson chi-square against every Table row at 10⁵ draws. With 2
    /// degrees of freedom the 0.999 quantile is 13.82.
    #[test]
    fn empirical_frequencies_match_transition_rows() {
        let env = FiniteChainEnv::three_state();
        let mut rng = rng_from_seed(3);
        let n = 100_000;
        for state in [A, B, C] {
            for control in 0..2 {
                let mut counts = [0usize; 3];
                for _ in 0..n {
                    counts[env.transition(state, control, &mut rng).0] += 1;
                }
                let row = env.model().transitions[control].row(state);
                let mut chi2 = 0.0;
                for j in 0..3 {
                    let expected = row[j] * n as f64;
                    if expected == 0.0 {
                        assert_eq!(counts[j], 0);
                    } else {
                        chi2 += (counts[j] as f64 - expected).powi(2) / expected;
                        // 3σ binomial band per cell
                        let sd = (n as f64 * row[j] * (1.0 - row[j])).sqrt();
                        assert!((counts[j] as f64 - expected).abs() < 3.0 * sd + 1.0);
                    }
                }
                assert!(chi2 < 13.82, "state {state} control {control}: chi2 {chi2}");
            }
        }
    }
}

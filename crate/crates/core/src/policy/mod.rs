//! Differentiable stochastic policies with exact score ratios.

mod admission;
mod checkpoint;
mod mlp;
mod three_state;

pub use admission::{
    admission_accept_prob, AdmissionObservation, LogisticAdmission, ThresholdAdmission,
    ACCEPT, REJECT,
};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use mlp::{MlpController, SwitchedController};
pub use three_state::{three_state_score_ratio, three_state_scores, ThreeStateSoftmax};

use rand::Rng;

use crate::error::{Error, Result};
use crate::sim::SimRng;

/// A purely reactive randomized policy `μ(θ, y)` over a finite control set.
pub trait Policy: Send + Sync {
    /// Parameter count `K`.
    fn num_params(&self) -> usize;

    fn num_controls(&self) -> usize;

    fn obs_dim(&self) -> usize;

    /// Writes `μ(θ, obs)` into `probs`.
    fn distribution(&self, theta: &[f64], obs: &[f64], probs: &mut [f64]) -> Result<()>;

    /// Writes `∇_θ μ_u / μ_u` into `ratio`; zero where `μ_u = 0 = ∇μ_u`.
    fn score_ratio(&self, theta: &[f64], obs: &[f64], control: usize, ratio: &mut [f64])
        -> Result<()>;

    /// Uniform bound `B` on the score-ratio components, when one is known.
    fn ratio_bound(&self) -> Option<f64> {
        None
    }

    /// Writes `∇_θ μ_u`. Policies whose probabilities can vanish must
    /// override this with the analytic gradient so the 0/0 convention can be
    /// audited.
    fn prob_gradient(
        &self,
        theta: &[f64],
        obs: &[f64],
        control: usize,
        grad: &mut [f64],
    ) -> Result<()> {
        let mut probs = vec![0.0; self.num_controls()];
        self.distribution(theta, obs, &mut probs)?;
        self.score_ratio(theta, obs, control, grad)?;
        let p = probs[control];
        grad.iter_mut().for_each(|g| *g *= p);
        Ok(())
    }

    /// Samples a control from `μ(θ, obs)` and writes its score ratio.
    fn act(
        &self,
        theta: &[f64],
        obs: &[f64],
        rng: &mut SimRng,
        probs: &mut [f64],
        ratio: &mut [f64],
    ) -> Result<usize> {
        self.distribution(theta, obs, probs)?;
        let u = sample_control(probs, rng);
        self.score_ratio(theta, obs, u, ratio)?;
        Ok(u)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn num_params(&self) -> usize {
        (**self).num_params()
    }
    fn num_controls(&self) -> usize {
        (**self).num_controls()
    }
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn distribution(&self, theta: &[f64], obs: &[f64], probs: &mut [f64]) -> Result<()> {
        (**self).distribution(theta, obs, probs)
    }
    fn score_ratio(
        &self,
        theta: &[f64],
        obs: &[f64],
        control: usize,
        ratio: &mut [f64],
    ) -> Result<()> {
        (**self).score_ratio(theta, obs, control, ratio)
    }
    fn ratio_bound(&self) -> Option<f64> {
        (**self).ratio_bound()
    }
    fn prob_gradient(
        &self,
        theta: &[f64],
        obs: &[f64],
        control: usize,
        grad: &mut [f64],
    ) -> Result<()> {
        (**self).prob_gradient(theta, obs, control, grad)
    }
    fn act(
        &self,
        theta: &[f64],
        obs: &[f64],
        rng: &mut SimRng,
        probs: &mut [f64],
        ratio: &mut [f64],
    ) -> Result<usize> {
        (**self).act(theta, obs, rng, probs, ratio)
    }
}

/// Inverse-CDF draw from `probs`. Zero-probability controls are never
/// returned.
pub fn sample_control(probs: &[f64], rng: &mut SimRng) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (u, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = u;
            if x < acc {
                return u;
            }
        }
    }
    last_positive
}

/// `exp(s_i) / Σ_j exp(s_j)` with max-subtraction.
pub fn softmax_distribution(scores: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; scores.len()];
    softmax_into(scores, &mut out)?;
    Ok(out)
}

pub(crate) fn softmax_into(scores: &[f64], out: &mut [f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Domain("softmax of an empty score vector".into()));
    }
    let mut max = f64::NEG_INFINITY;
    for &s in scores {
        if !s.is_finite() {
            return Err(Error::Domain(format!("non-finite score {s}")));
        }
        max = max.max(s);
    }
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_distribution(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax_distribution(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        // 1/(1+e^-2) = 0.8807970779778823
        let p = softmax_distribution(&[1.0, -1.0]).unwrap();
        assert!((p[0] - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!((p[1] - 0.119_202_922_022_117_7).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax_distribution(&[0.0, f64::NAN]),
            Err(Error::Domain(_))
        ));
        assert!(softmax_distribution(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn sampling_skips_zero_probability_controls() {
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            assert_eq!(sample_control(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }

    proptest! {
        #[test]
        fn softmax_is_normalized_and_finite(scores in prop::collection::vec(-1000.0f64..1000.0, 1..8)) {
            let p = softmax_distribution(&scores).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}

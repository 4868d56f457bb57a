use super::{softmax_into, Policy};
use crate::error::{ensure_len, Error, Result};

/// Linear scores over the two state features:
/// `s1 = θ1 φ1 + θ2 φ2`, `s2 = θ3 φ1 + θ4 φ2`.
pub fn three_state_scores(theta: &[f64], phi: &[f64]) -> Result<(f64, f64)> {
    ensure_len("three-state parameters", 4, theta.len())?;
    ensure_len("three-state features", 2, phi.len())?;
    Ok((
        theta[0] * phi[0] + theta[1] * phi[1],
        theta[2] * phi[0] + theta[3] * phi[1],
    ))
}

/// `∇μ_u / μ_u` for the two-action softmax. For `a1` this is
/// `μ_{a2}·(φ1, φ2, −φ1, −φ2)`; for `a2`, `μ_{a1}·(−φ1, −φ2, φ1, φ2)`.
pub fn three_state_score_ratio(theta: &[f64], phi: &[f64], control: usize) -> Result<[f64; 4]> {
    let (s1, s2) = three_state_scores(theta, phi)?;
    let mut mu = [0.0; 2];
    softmax_into(&[s1, s2], &mut mu)?;
    let (w, sign) = match control {
        0 => (mu[1], 1.0),
        1 => (mu[0], -1.0),
        _ => return Err(Error::Domain(format!("control {control} out of range for 2 actions"))),
    };
    let a = sign * w * phi[0];
    let b = sign * w * phi[1];
    Ok([a, b, -a, -b])
}

/// Two-action softmax over linear scores of the observation features.
#[derive(Clone, Copy, Debug, Default)]
pub struct ThreeStateSoftmax;

impl Policy for ThreeStateSoftmax {
    fn num_params(&self) -> usize {
        4
    }

    fn num_controls(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn distribution(&self, theta: &[f64], obs: &[f64], probs: &mut [f64]) -> Result<()> {
        let (s1, s2) = three_state_scores(theta, obs)?;
        softmax_into(&[s1, s2], probs)
    }

    fn score_ratio(
        &self,
        theta: &[f64],
        obs: &[f64],
        control: usize,
        ratio: &mut [f64],
    ) -> Result<()> {
        ensure_len("score ratio buffer", 4, ratio.len())?;
        ratio.copy_from_slice(&three_state_score_ratio(theta, obs, control)?);
        Ok(())
    }

    /// Features lie in `[0, 1]`, so every component is at most 1.
    fn ratio_bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scores_examples() {
        let phi_a = [12.0 / 18.0, 6.0 / 18.0];
        let (s1, s2) = three_state_scores(&[1.0, 1.0, -1.0, -1.0], &phi_a).unwrap();
        assert!((s1 - 1.0).abs() < 1e-15 && (s2 + 1.0).abs() < 1e-15);
        assert_eq!(three_state_scores(&[0.0; 4], &[0.3, 0.7]).unwrap(), (0.0, 0.0));
        assert_eq!(
            three_state_scores(&[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0]).unwrap(),
            (1.0, 1.0)
        );
        assert!(matches!(
            three_state_scores(&[1.0; 3], &[1.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn score_ratio_at_uniform_policy() {
        let phi = [2.0 / 3.0, 1.0 / 3.0];
        let r1 = three_state_score_ratio(&[0.0; 4], &phi, 0).unwrap();
        let r2 = three_state_score_ratio(&[0.0; 4], &phi, 1).unwrap();
        let e1 = [1.0 / 3.0, 1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0];
        for k in 0..4 {
            assert!((r1[k] - e1[k]).abs() < 1e-15);
            assert!((r2[k] + e1[k]).abs() < 1e-15);
        }
        assert!(three_state_score_ratio(&[0.0; 4], &phi, 2).is_err());
    }

    fn log_mu(theta: &[f64], phi: &[f64], u: usize) -> f64 {
        let mut p = [0.0; 2];
        ThreeStateSoftmax.distribution(theta, phi, &mut p).unwrap();
        p[u].ln()
    }

    proptest! {
        #[test]
        fn score_identity_and_redundancy(
            theta in prop::collection::vec(-5.0f64..5.0, 4),
            phi in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let mut p = [0.0; 2];
            ThreeStateSoftmax.distribution(&theta, &phi, &mut p).unwrap();
            let r1 = three_state_score_ratio(&theta, &phi, 0).unwrap();
            let r2 = three_state_score_ratio(&theta, &phi, 1).unwrap();
            for k in 0..4 {
                prop_assert!((p[0] * r1[k] + p[1] * r2[k]).abs() < 1e-10);
            }
            for r in [r1, r2] {
                prop_assert_eq!(r[2], -r[0]);
                prop_assert_eq!(r[3], -r[1]);
            }
        }

        #[test]
        fn score_ratio_matches_finite_differences(
            theta in prop::collection::vec(-3.0f64..3.0, 4),
            phi in prop::collection::vec(0.05f64..1.0, 2),
            u in 0usize..2,
        ) {
            let h = 1e-5;
            let r = three_state_score_ratio(&theta, &phi, u).unwrap();
            for k in 0..4 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                let fd = (log_mu(&tp, &phi, u) - log_mu(&tm, &phi, u)) / (2.0 * h);
                prop_assert!((fd - r[k]).abs() <= 1e-5 * r[k].abs().max(1e-3));
            }
        }
    }
}

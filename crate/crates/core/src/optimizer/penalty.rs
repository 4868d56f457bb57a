use crate::error::{ensure_len, Result};

/// Quadratic weight-decay penalty `γ_p ‖θ‖²` with a periodic review that
/// shrinks `γ_p` once progress stalls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltySchedule {
    pub weight: f64,
    pub review_period: usize,
    pub improvement_fraction: f64,
    pub decay_factor: f64,
}

impl PenaltySchedule {
    pub fn new(weight: f64) -> Self {
        PenaltySchedule {
            weight,
            review_period: 10,
            improvement_fraction: 0.10,
            decay_factor: 10.0,
        }
    }
}

/// `Δ'_i = Δ_i − 2γθ_i`, `value' = value − γ‖θ‖²`.
pub fn apply_penalty(delta: &[f64], value: f64, theta: &[f64], weight: f64) -> Result<(Vec<f64>, f64)> {
    ensure_len("penalized gradient", theta.len(), delta.len())?;
    let grad = delta
        .iter()
        .zip(theta)
        .map(|(d, t)| d - 2.0 * weight * t)
        .collect();
    let sq: f64 = theta.iter().map(|t| t * t).sum();
    Ok((grad, value - weight * sq))
}

/// On every `review_period`-th iteration, divides the weight by
/// `decay_factor` if the value improved by less than `improvement_fraction`
/// of `|value_before|` since the previous review.
pub fn update_penalty_schedule(
    sched: PenaltySchedule,
    iteration: usize,
    value: f64,
    value_before: f64,
) -> PenaltySchedule {
    if sched.review_period == 0 || iteration == 0 || iteration % sched.review_period != 0 {
        return sched;
    }
    if value - value_before < sched.improvement_fraction * value_before.abs() {
        PenaltySchedule {
            weight: sched.weight / sched.decay_factor,
            ..sched
        }
    } else {
        sched
    }
}

use super::Policy;
use crate::error::{ensure_len, Error, Result};

pub const ACCEPT: usize = 0;
pub const REJECT: usize = 1;

const DEFAULT_CAPACITY: f64 = 10.0;
const DEFAULT_SLOPE: f64 = 1.5;

/// Observation seen at a call-admission decision point, encoded as
/// `[used bandwidth, class (1..=3, or 0 when no call is waiting), demand]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmissionObservation {
    pub used: f64,
    /// 1-based call class of the pending arrival; `None` for departures and
    /// other events that need no decision.
    pub class: Option<usize>,
    pub demand: f64,
}

impl AdmissionObservation {
    pub const DIM: usize = 3;

    pub fn encode(&self, out: &mut [f64]) {
        out[0] = self.used;
        out[1] = self.class.map_or(0.0, |m| m as f64);
        out[2] = self.demand;
    }

    pub fn decode(obs: &[f64]) -> Result<Self> {
        ensure_len("admission observation", Self::DIM, obs.len())?;
        let code = obs[1];
        let class = if code == 0.0 {
            None
        } else if code >= 1.0 && code.fract() == 0.0 {
            Some(code as usize)
        } else {
            return Err(Error::Domain(format!("invalid call class code {code}")));
        };
        Ok(AdmissionObservation {
            used: obs[0],
            class,
            demand: obs[2],
        })
    }
}

/// Returns `(μ, 1 − μ)` for the logistic `μ = 1/(1 + exp(z))` without
/// cancellation.
fn logistic_pair(z: f64) -> (f64, f64) {
    if z > 0.0 {
        let e = (-z).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    } else {
        let e = z.exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    }
}

/// Acceptance probability of the logistic admission controller on a link of
/// 10 units: `1/(1 + exp(1.5(b − θ_m)))` when the call fits, 0 otherwise.
/// `class` is 1-based.
pub fn admission_accept_prob(theta: &[f64], used: f64, class: usize, demand: f64) -> Result<f64> {
    LogisticAdmission::default().accept_prob(theta, used, class, demand)
}

/// One logistic threshold per call class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticAdmission {
    pub capacity: f64,
    pub slope: f64,
    pub classes: usize,
}

impl Default for LogisticAdmission {
    fn default() -> Self {
        LogisticAdmission {
            capacity: DEFAULT_CAPACITY,
            slope: DEFAULT_SLOPE,
            classes: 3,
        }
    }
}

impl LogisticAdmission {
    fn check(&self, theta: &[f64], used: f64, class: usize) -> Result<()> {
        ensure_len("admission parameters", self.classes, theta.len())?;
        if class == 0 || class > self.classes {
            return Err(Error::Domain(format!(
                "call class {class} outside 1..={}",
                self.classes
            )));
        }
        if used.is_nan() || used < 0.0 {
            return Err(Error::Domain(format!("used bandwidth {used} must be >= 0")));
        }
        Ok(())
    }

    /// `(μ, 1 − μ)`, both exactly zero/one when the call does not fit.
    fn accept_pair(&self, theta: &[f64], used: f64, class: usize, demand: f64) -> Result<(f64, f64)> {
        self.check(theta, used, class)?;
        if used + demand > self.capacity {
            return Ok((0.0, 1.0));
        }
        Ok(logistic_pair(self.slope * (used - theta[class - 1])))
    }

    pub fn accept_prob(&self, theta: &[f64], used: f64, class: usize, demand: f64) -> Result<f64> {
        Ok(self.accept_pair(theta, used, class, demand)?.0)
    }
}

impl Policy for LogisticAdmission {
    fn num_params(&self) -> usize {
        self.classes
    }

    fn num_controls(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        AdmissionObservation::DIM
    }

    fn distribution(&self, theta: &[f64], obs: &[f64], probs: &mut [f64]) -> Result<()> {
        let o = AdmissionObservation::decode(obs)?;
        let (accept, reject) = match o.class {
            // Nothing to decide; the control is ignored by the environment.
            None => (1.0, 0.0),
            Some(m) => self.accept_pair(theta, o.used, m, o.demand)?,
        };
        probs[ACCEPT] = accept;
        probs[REJECT] = reject;
        Ok(())
    }

    fn score_ratio(
        &self,
        theta: &[f64],
        obs: &[f64],
        control: usize,
        ratio: &mut [f64],
    ) -> Result<()> {
        ensure_len("score ratio buffer", self.classes, ratio.len())?;
        ratio.iter_mut().for_each(|r| *r = 0.0);
        let o = AdmissionObservation::decode(obs)?;
        let Some(m) = o.class else {
            return Ok(());
        };
        let (mu, one_minus) = self.accept_pair(theta, o.used, m, o.demand)?;
        if o.used + o.demand > self.capacity {
            // Forced rejection: μ and ∇μ both vanish.
            return Ok(());
        }
        // dμ/dθ_m = slope·μ(1 − μ)
        ratio[m - 1] = match control {
            ACCEPT => self.slope * one_minus,
            REJECT => -self.slope * mu,
            _ => return Err(Error::Domain(format!("control {control} out of range"))),
        };
        Ok(())
    }

    fn ratio_bound(&self) -> Option<f64> {
        Some(self.slope)
    }

    fn prob_gradient(
        &self,
        theta: &[f64],
        obs: &[f64],
        control: usize,
        grad: &mut [f64],
    ) -> Result<()> {
        ensure_len("probability gradient buffer", self.classes, grad.len())?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let o = AdmissionObservation::decode(obs)?;
        let Some(m) = o.class else {
            return Ok(());
        };
        if o.used + o.demand > self.capacity {
            self.check(theta, o.used, m)?;
            return Ok(());
        }
        let (mu, one_minus) = self.accept_pair(theta, o.used, m, o.demand)?;
        let d = self.slope * mu * one_minus;
        grad[m - 1] = if control == ACCEPT { d } else { -d };
        Ok(())
    }
}

/// Deterministic trunk-reservation admission: accept class `m` when at least
/// `reserve[m]` units are free (and the call fits). Has no parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdAdmission {
    pub capacity: f64,
    pub reserve: Vec<f64>,
}

impl ThresholdAdmission {
    pub fn always_accept() -> Self {
        ThresholdAdmission {
            capacity: DEFAULT_CAPACITY,
            reserve: vec![0.0; 3],
        }
    }

    pub fn always_reject() -> Self {
        ThresholdAdmission {
            capacity: DEFAULT_CAPACITY,
            reserve: vec![f64::INFINITY; 3],
        }
    }

    /// Accepts classes 2 and 3 whenever they fit, class 1 only with at least
    /// `free` units available.
    pub fn reserve_class_one(free: f64) -> Self {
        ThresholdAdmission {
            capacity: DEFAULT_CAPACITY,
            reserve: vec![free, 0.0, 0.0],
        }
    }

    fn accepts(&self, o: &AdmissionObservation) -> Result<bool> {
        let Some(m) = o.class else {
            return Ok(true);
        };
        let reserve = self
            .reserve
            .get(m - 1)
            .ok_or_else(|| Error::Domain(format!("call class {m} has no reserve")))?;
        Ok(o.used + o.demand <= self.capacity && self.capacity - o.used >= *reserve)
    }
}

impl Policy for ThresholdAdmission {
    fn num_params(&self) -> usize {
        0
    }

    fn num_controls(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        AdmissionObservation::DIM
    }

    fn distribution(&self, _theta: &[f64], obs: &[f64], probs: &mut [f64]) -> Result<()> {
        let accept = self.accepts(&AdmissionObservation::decode(obs)?)?;
        probs[ACCEPT] = if accept { 1.0 } else { 0.0 };
        probs[REJECT] = 1.0 - probs[ACCEPT];
        Ok(())
    }

    fn score_ratio(&self, _: &[f64], _: &[f64], _: usize, _: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn ratio_bound(&self) -> Option<f64> {
        Some(0.0)
    }

    fn prob_gradient(&self, _: &[f64], _: &[f64], _: usize, _: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

//! One-hidden-layer networks with softmax outputs.
//!
//! Parameter layout (flattened, in order):
//! 1. input-to-hidden weights, row-major by hidden unit (`w1[h][i]`),
//! 2. hidden offsets `b1[h]`,
//! 3. hidden-to-output weights, row-major by output unit (`w2[o][h]`),
//! 4. output offsets `b2[o]`.

use super::{sample_control, softmax_into, Policy};
use crate::error::{ensure_len, Error, Result};
use crate::sim::SimRng;

/// Shape of a `tanh` hidden layer feeding linear outputs that are
/// exponentiated and normalized into control probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpController {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

struct Forward {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl MlpController {
    pub fn new(inputs: usize, hidden: usize, outputs: usize) -> Self {
        MlpController {
            inputs,
            hidden,
            outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        (self.inputs + 1) * self.hidden + (self.hidden + 1) * self.outputs
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.inputs * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.outputs;
        (b1, w2, b2)
    }

    /// Splits `theta` into `(w1, b1, w2, b2)` views.
    pub fn split<'t>(&self, theta: &'t [f64]) -> Result<(&'t [f64], &'t [f64], &'t [f64], &'t [f64])> {
        ensure_len("network parameters", self.param_count(), theta.len())?;
        let (b1, w2, b2) = self.offsets();
        Ok((
            &theta[..b1],
            &theta[b1..w2],
            &theta[w2..b2],
            &theta[b2..],
        ))
    }

    /// Inverse of [`MlpController::split`].
    pub fn flatten(&self, w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64]) -> Result<Vec<f64>> {
        ensure_len("w1", self.inputs * self.hidden, w1.len())?;
        ensure_len("b1", self.hidden, b1.len())?;
        ensure_len("w2", self.hidden * self.outputs, w2.len())?;
        ensure_len("b2", self.outputs, b2.len())?;
        Ok([w1, b1, w2, b2].concat())
    }

    fn forward(&self, theta: &[f64], obs: &[f64]) -> Result<Forward> {
        ensure_len("network input", self.inputs, obs.len())?;
        let (w1, b1, w2, b2) = self.split(theta)?;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &w1[h * self.inputs..(h + 1) * self.inputs];
                let a: f64 = row.iter().zip(obs).map(|(w, x)| w * x).sum::<f64>() + b1[h];
                a.tanh()
            })
            .collect();
        let scores: Vec<f64> = (0..self.outputs)
            .map(|o| {
                let row = &w2[o * self.hidden..(o + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + b2[o]
            })
            .collect();
        let mut probs = vec![0.0; self.outputs];
        softmax_into(&scores, &mut probs)?;
        Ok(Forward { hidden, probs })
    }

    /// `∇_θ log μ_u` by reverse accumulation through the softmax, the linear
    /// output layer and the `tanh` hidden layer.
    fn backward(&self, theta: &[f64], obs: &[f64], fwd: &Forward, control: usize, grad: &mut [f64]) {
        let (b1_at, w2_at, b2_at) = self.offsets();
        let w2 = &theta[w2_at..b2_at];
        // d log μ_u / d score_o = [o == u] − μ_o
        let d_out: Vec<f64> = fwd
            .probs
            .iter()
            .enumerate()
            .map(|(o, p)| if o == control { 1.0 - p } else { -p })
            .collect();
        for o in 0..self.outputs {
            for h in 0..self.hidden {
                grad[w2_at + o * self.hidden + h] = d_out[o] * fwd.hidden[h];
            }
            grad[b2_at + o] = d_out[o];
        }
        for h in 0..self.hidden {
            let back: f64 = (0..self.outputs).map(|o| d_out[o] * w2[o * self.hidden + h]).sum();
            let d_pre = back * (1.0 - fwd.hidden[h] * fwd.hidden[h]);
            for i in 0..self.inputs {
                grad[h * self.inputs + i] = d_pre * obs[i];
            }
            grad[b1_at + h] = d_pre;
        }
    }

    pub fn distribution_vec(&self, theta: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(theta, obs)?.probs)
    }
}

impl Policy for MlpController {
    fn num_params(&self) -> usize {
        self.param_count()
    }

    fn num_controls(&self) -> usize {
        self.outputs
    }

    fn obs_dim(&self) -> usize {
        self.inputs
    }

    fn distribution(&self, theta: &[f64], obs: &[f64], probs: &mut [f64]) -> Result<()> {
        ensure_len("probability buffer", self.outputs, probs.len())?;
        probs.copy_from_slice(&self.forward(theta, obs)?.probs);
        Ok(())
    }

    fn score_ratio(
        &self,
        theta: &[f64],
        obs: &[f64],
        control: usize,
        ratio: &mut [f64],
    ) -> Result<()> {
        ensure_len("score ratio buffer", self.param_count(), ratio.len())?;
        if control >= self.outputs {
            return Err(Error::Domain(format!("control {control} out of range")));
        }
        let fwd = self.forward(theta, obs)?;
        self.backward(theta, obs, &fwd, control, ratio);
        Ok(())
    }

    fn act(
        &self,
        theta: &[f64],
        obs: &[f64],
        rng: &mut SimRng,
        probs: &mut [f64],
        ratio: &mut [f64],
    ) -> Result<usize> {
        ensure_len("score ratio buffer", self.param_count(), ratio.len())?;
        let fwd = self.forward(theta, obs)?;
        probs.copy_from_slice(&fwd.probs);
        let u = sample_control(probs, rng);
        self.backward(theta, obs, &fwd, u, ratio);
        Ok(u)
    }
}

/// Two networks over the same observation; the second acts whenever
/// `obs[switch_index] > switch_above`. Parameters are the first network's
/// followed by the second's.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchedController {
    pub first: MlpController,
    pub second: MlpController,
    pub switch_index: usize,
    pub switch_above: f64,
}

impl SwitchedController {
    pub fn new(first: MlpController, second: MlpController, switch_index: usize, switch_above: f64) -> Result<Self> {
        ensure_len("switched controller inputs", first.inputs, second.inputs)?;
        ensure_len("switched controller outputs", first.outputs, second.outputs)?;
        if switch_index >= first.inputs {
            return Err(Error::Config(format!(
                "switch index {switch_index} outside {} inputs",
                first.inputs
            )));
        }
        Ok(SwitchedController {
            first,
            second,
            switch_index,
            switch_above,
        })
    }

    /// Whether the second network acts on `obs`.
    pub fn uses_second(&self, obs: &[f64]) -> bool {
        obs[self.switch_index] > self.switch_above
    }

    fn route<'t>(&self, theta: &'t [f64], obs: &[f64]) -> Result<(MlpController, &'t [f64], usize)> {
        ensure_len("switched controller parameters", self.num_params(), theta.len())?;
        ensure_len("switched controller input", self.first.inputs, obs.len())?;
        let split = self.first.param_count();
        Ok(if self.uses_second(obs) {
            (self.second, &theta[split..], split)
        } else {
            (self.first, &theta[..split], 0)
        })
    }
}

impl Policy for SwitchedController {
    fn num_params(&self) -> usize {
        self.first.param_count() + self.second.param_count()
    }

    fn num_controls(&self) -> usize {
        self.first.outputs
    }

    fn obs_dim(&self) -> usize {
        self.first.inputs
    }

    fn distribution(&self, theta: &[f64], obs: &[f64], probs: &mut [f64]) -> Result<()> {
        let (net, params, _) = self.route(theta, obs)?;
        net.distribution(params, obs, probs)
    }

    fn score_ratio(
        &self,
        theta: &[f64],
        obs: &[f64],
        control: usize,
        ratio: &mut [f64],
    ) -> Result<()> {
        ensure_len("score ratio buffer", self.num_params(), ratio.len())?;
        let (net, params, at) = self.route(theta, obs)?;
        ratio.iter_mut().for_each(|r| *r = 0.0);
        net.score_ratio(params, obs, control, &mut ratio[at..at + net.param_count()])
    }

    fn act(
        &self,
        theta: &[f64],
        obs: &[f64],
        rng: &mut SimRng,
        probs: &mut [f64],
        ratio: &mut [f64],
    ) -> Result<usize> {
        ensure_len("score ratio buffer", self.num_params(), ratio.len())?;
        let (net, params, at) = self.route(theta, obs)?;
        ratio.iter_mut().for_each(|r| *r = 0.0);
        net.act(params, obs, rng, probs, &mut ratio[at..at + net.param_count()])
    }
}

use std::io::Write;

use polgrad::{Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Angle between two non-zero vectors, in degrees.
pub fn angle_between(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!("vector lengths {} and {} differ", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if !(nu > 0.0) || !(nv > 0.0) {
        return Err(Error::Domain("angle with a zero vector".into()));
    }
    // Half-angle form: arccos loses half the digits near 0° and 180°.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a / nu, b / nv);
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

/// `‖est − truth‖ / ‖truth‖`.
pub fn relative_error(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::Domain(format!("vector lengths {} and {} differ", est.len(), truth.len())));
    }
    let nt = norm(truth);
    if !(nt > 0.0) {
        return Err(Error::Domain("relative error against a zero vector".into()));
    }
    let diff: Vec<f64> = est.iter().zip(truth).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / nt)
}

/// Mean plus the population standard deviations of the samples at or above
/// the mean and of those below it. An empty bin has deviation 0.
pub fn split_bin_error_bars(samples: &[f64]) -> Result<(f64, f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {}", samples.len())));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let pop_std = |bin: Vec<f64>| {
        if bin.is_empty() {
            return 0.0;
        }
        let m = bin.iter().sum::<f64>() / bin.len() as f64;
        (bin.iter().map(|x| (x - m).powi(2)).sum::<f64>() / bin.len() as f64).sqrt()
    };
    let above = pop_std(samples.iter().copied().filter(|&x| x >= mean).collect());
    let below = pop_std(samples.iter().copied().filter(|&x| x < mean).collect());
    Ok((mean, above, below))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub replica: usize,
    pub env_steps: u64,
    pub beta: Option<f64>,
    pub t: Option<u64>,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(replica: usize, env_steps: u64, metric: impl Into<String>, value: f64) -> Self {
        MetricRow {
            replica,
            env_steps,
            beta: None,
            t: None,
            metric: metric.into(),
            value,
        }
    }

    pub fn beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn t(mut self, t: u64) -> Self {
        self.t = Some(t);
        self
    }
}

pub const METRICS_HEADER: &str = "replica,env_steps,beta,T,metric,value";

/// Writes the header and rows sorted by `(replica, env_steps)`, keeping the
/// emission order within ties.
pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[MetricRow]) -> Result<()> {
    let mut order: Vec<&MetricRow> = rows.iter().collect();
    order.sort_by_key(|r| (r.replica, r.env_steps));
    writeln!(out, "{METRICS_HEADER}")?;
    for r in order {
        let beta = r.beta.map(|b| b.to_string()).unwrap_or_default();
        let t = r.t.map(|t| t.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", r.replica, r.env_steps, beta, t, r.metric, r.value)?;
    }
    Ok(())
}

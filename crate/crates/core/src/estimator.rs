//! Single-sample-path gradient estimators: GPOMDP, the online OLPOMDP
//! update, and a multi-β probe for choosing the discount and run length.

use std::io::Write;

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::sim::{check_compat, rng_from_seed, Environment, Rollout};

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("beta {beta} outside [0, 1)")))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Angle between two vectors in degrees. Zero vectors are at 90° to
/// everything except another zero vector.
pub fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { 90.0 };
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Discounted sum of score ratios, `z ← βz + ∇μ/μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct EligibilityTrace {
    z: Vec<f64>,
    beta: f64,
}

impl EligibilityTrace {
    pub fn new(k: usize, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(EligibilityTrace {
            z: vec![0.0; k],
            beta,
        })
    }

    #[inline]
    pub fn update(&mut self, ratio: &[f64]) {
        for (z, r) in self.z.iter_mut().zip(ratio) {
            *z = self.beta * *z + r;
        }
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reset(&mut self) {
        self.z.iter_mut().for_each(|z| *z = 0.0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate {
    pub delta: Vec<f64>,
    pub steps: u64,
    pub beta: f64,
    pub seed: u64,
    pub mean_reward: f64,
}

/// Per-step view handed to a [`gpomdp_observed`] observer.
#[derive(Debug)]
pub struct TraceStep<'a> {
    /// Zero-based index of the step just taken.
    pub t: u64,
    pub observation: &'a [f64],
    pub control: usize,
    pub reward: f64,
    pub score: &'a [f64],
    /// Trace after absorbing `score`.
    pub trace: &'a [f64],
}

/// GPOMDP: `T` steps of a single path from `env.reset`, returning
/// `Δ_T / T` with `Δ_{t+1} = Δ_t + r(X_{t+1}) z_{t+1}`.
pub fn gpomdp<E: Environment, P: Policy + ?Sized>(
    env: &E,
    policy: &P,
    theta: &[f64],
    beta: f64,
    steps: u64,
    seed: u64,
) -> Result<GradEstimate> {
    gpomdp_observed(env, policy, theta, beta, steps, seed, |_| {})
}

/// [`gpomdp`] with a callback after every step.
pub fn gpomdp_observed<E, P, F>(
    env: &E,
    policy: &P,
    theta: &[f64],
    beta: f64,
    steps: u64,
    seed: u64,
    mut observer: F,
) -> Result<GradEstimate>
where
    E: Environment,
    P: Policy + ?Sized,
    F: FnMut(&TraceStep<'_>),
{
    check_beta(beta)?;
    if steps == 0 {
        return Err(Error::Domain("T must be >= 1".into()));
    }
    check_compat(env, policy, theta)?;
    let mut rng = rng_from_seed(seed);
    let mut path = Rollout::new(env, policy, theta, &mut rng)?;
    let mut trace = EligibilityTrace::new(theta.len(), beta)?;
    let mut delta = vec![0.0; theta.len()];
    let mut total_reward = 0.0;
    for t in 0..steps {
        let r = path.advance(theta, &mut rng)?;
        trace.update(path.score());
        let mut finite = true;
        for (d, z) in delta.iter_mut().zip(trace.z()) {
            *d += r * z;
            finite &= d.is_finite();
        }
        if !finite {
            return Err(Error::NonFinite { step: t });
        }
        total_reward += r;
        observer(&TraceStep {
            t,
            observation: path.observation(),
            control: path.control(),
            reward: r,
            score: path.score(),
            trace: trace.z(),
        });
    }
    let n = steps as f64;
    delta.iter_mut().for_each(|d| *d /= n);
    Ok(GradEstimate {
        delta,
        steps,
        beta,
        seed,
        mean_reward: total_reward / n,
    })
}

/// Step sizes `γ_t` for the online update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `γ_t = c / (t + 1)` for zero-based `t`.
    Decreasing(f64),
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let c = match *self {
            StepSchedule::Constant(c) | StepSchedule::Decreasing(c) => c,
        };
        if c.is_finite() && c >= 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!("step size {c} must be finite and >= 0")))
        }
    }

    #[inline]
    pub fn gamma(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant(c) => c,
            StepSchedule::Decreasing(c) => c / (t as f64 + 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlpomdpConfig {
    pub beta: f64,
    pub steps: u64,
    pub schedule: StepSchedule,
    /// Step counts after which `θ` is recorded (0 records `θ₀`).
    pub snapshots: Vec<u64>,
    /// Fault when `‖θ‖∞` exceeds this.
    pub divergence_cap: f64,
}

impl OlpomdpConfig {
    pub fn new(beta: f64, steps: u64, schedule: StepSchedule) -> Self {
        OlpomdpConfig {
            beta,
            steps,
            schedule,
            snapshots: Vec::new(),
            divergence_cap: 1e6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlpomdpRun {
    pub theta: Vec<f64>,
    pub snapshots: Vec<(u64, Vec<f64>)>,
    pub mean_reward: f64,
}

/// OLPOMDP: `θ_{t+1} = θ_t + γ_t r(X_{t+1}) z_{t+1}` along one path.
pub fn olpomdp<E: Environment, P: Policy + ?Sized>(
    env: &E,
    policy: &P,
    theta0: &[f64],
    cfg: &OlpomdpConfig,
    seed: u64,
) -> Result<OlpomdpRun> {
    olpomdp_observed(env, policy, theta0, cfg, seed, |_, _, _| {})
}

/// [`olpomdp`] with a callback `(steps done, θ after the update, reward)`.
pub fn olpomdp_observed<E, P, F>(
    env: &E,
    policy: &P,
    theta0: &[f64],
    cfg: &OlpomdpConfig,
    seed: u64,
    mut observer: F,
) -> Result<OlpomdpRun>
where
    E: Environment,
    P: Policy + ?Sized,
    F: FnMut(u64, &[f64], f64),
{
    check_beta(cfg.beta)?;
    cfg.schedule.validate()?;
    if cfg.steps == 0 {
        return Err(Error::Domain("T must be >= 1".into()));
    }
    check_compat(env, policy, theta0)?;
    let mut snapshot_at: Vec<u64> = cfg.snapshots.clone();
    snapshot_at.sort_unstable();
    snapshot_at.dedup();
    let mut next_snap = snapshot_at.iter().peekable();
    let mut snapshots = Vec::new();
    if next_snap.peek() == Some(&&0) {
        snapshots.push((0, theta0.to_vec()));
        next_snap.next();
    }

    let mut rng = rng_from_seed(seed);
    let mut theta = theta0.to_vec();
    let mut path = Rollout::new(env, policy, &theta, &mut rng)?;
    let mut trace = EligibilityTrace::new(theta.len(), cfg.beta)?;
    let mut total_reward = 0.0;
    for t in 0..cfg.steps {
        let r = path.advance(&theta, &mut rng)?;
        trace.update(path.score());
        let step = cfg.schedule.gamma(t) * r;
        let mut sup = 0.0_f64;
        for (th, z) in theta.iter_mut().zip(trace.z()) {
            *th += step * z;
            sup = sup.max(th.abs());
        }
        if !sup.is_finite() {
            return Err(Error::NonFinite { step: t });
        }
        if sup > cfg.divergence_cap {
            return Err(Error::Divergence { step: t, norm: sup });
        }
        total_reward += r;
        let done = t + 1;
        observer(done, &theta, r);
        while next_snap.peek().is_some_and(|&&s| s <= done) {
            let s = *next_snap.next().unwrap();
            if s == done {
                snapshots.push((done, theta.clone()));
            }
        }
    }
    Ok(OlpomdpRun {
        theta,
        snapshots,
        mean_reward: total_reward / cfg.steps as f64,
    })
}

/// Gradient directions for several β from one shared simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaProbeReport {
    pub betas: Vec<f64>,
    pub checkpoints: Vec<u64>,
    /// `estimates[b][c]` is `Δ_t / t` for `betas[b]` at `checkpoints[c]`.
    pub estimates: Vec<Vec<Vec<f64>>>,
}

impl BetaProbeReport {
    /// Unit-length direction of `estimates[b][c]` (zero stays zero).
    pub fn direction(&self, b: usize, c: usize) -> Vec<f64> {
        let v = &self.estimates[b][c];
        let n = norm(v);
        if n == 0.0 {
            v.clone()
        } else {
            v.iter().map(|x| x / n).collect()
        }
    }

    /// Largest pairwise angle among the directions of `betas[b]` over
    /// checkpoints `from..`.
    pub fn dispersion(&self, b: usize, from: usize) -> f64 {
        let series = &self.estimates[b][from..];
        let mut worst = 0.0_f64;
        for i in 0..series.len() {
            for j in i + 1..series.len() {
                worst = worst.max(angle_deg(&series[i], &series[j]));
            }
        }
        worst
    }

    pub fn final_angle(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let last = self.checkpoints.len() - 1;
        angle_deg(&self.estimates[a][last], &self.estimates[b][last])
    }
}

/// Runs one path of `steps` steps maintaining a trace and accumulator per β.
pub fn multi_beta_probe<E: Environment, P: Policy + ?Sized>(
    env: &E,
    policy: &P,
    theta: &[f64],
    betas: &[f64],
    steps: u64,
    checkpoints: &[u64],
    seed: u64,
) -> Result<BetaProbeReport> {
    if betas.is_empty() {
        return Err(Error::Config("beta list is empty".into()));
    }
    for (i, &b) in betas.iter().enumerate() {
        check_beta(b)?;
        if betas[..i].contains(&b) {
            return Err(Error::Config(format!("beta {b} listed twice")));
        }
    }
    if steps == 0 {
        return Err(Error::Domain("T must be >= 1".into()));
    }
    let mut checkpoints = checkpoints.to_vec();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    if checkpoints.first() == Some(&0) || checkpoints.last().is_some_and(|&c| c > steps) {
        return Err(Error::Config(format!("checkpoints must lie in 1..={steps}")));
    }
    check_compat(env, policy, theta)?;

    let k = theta.len();
    let mut rng = rng_from_seed(seed);
    let mut path = Rollout::new(env, policy, theta, &mut rng)?;
    let mut traces = betas
        .iter()
        .map(|&b| EligibilityTrace::new(k, b))
        .collect::<Result<Vec<_>>>()?;
    let mut deltas = vec![vec![0.0; k]; betas.len()];
    let mut estimates = vec![Vec::with_capacity(checkpoints.len()); betas.len()];
    let mut next = 0;
    for t in 0..steps {
        let r = path.advance(theta, &mut rng)?;
        for (trace, delta) in traces.iter_mut().zip(deltas.iter_mut()) {
            trace.update(path.score());
            for (d, z) in delta.iter_mut().zip(trace.z()) {
                *d += r * z;
            }
        }
        let done = t + 1;
        if next < checkpoints.len() && checkpoints[next] == done {
            for (b, delta) in deltas.iter().enumerate() {
                if delta.iter().any(|d| !d.is_finite()) {
                    return Err(Error::NonFinite { step: t });
                }
                estimates[b].push(delta.iter().map(|d| d / done as f64).collect());
            }
            next += 1;
        }
    }
    Ok(BetaProbeReport {
        betas: betas.to_vec(),
        checkpoints,
        estimates,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionConfig {
    /// Closeness to the reference direction required of the working β.
    pub angle_threshold_deg: f64,
    /// Trailing checkpoints inspected by the settling test.
    pub variance_window: usize,
    /// Largest pairwise angle allowed within a settled window.
    pub variance_bound_deg: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            angle_threshold_deg: 15.0,
            variance_window: 5,
            variance_bound_deg: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaSelection {
    pub reference_beta: f64,
    pub working_beta: f64,
    /// Chosen run length `T` for the working β.
    pub steps: u64,
    /// First checkpoint after which the reference direction stays settled.
    pub settling_time: u64,
}

fn settled_from(report: &BetaProbeReport, b: usize, bound: f64) -> usize {
    let n = report.checkpoints.len();
    let mut from = n - 1;
    while from > 0 && report.dispersion(b, from - 1) < bound {
        from -= 1;
    }
    from
}

/// Picks the reference β (largest β settled over the trailing window), the
/// working β (smallest β whose final direction is within the angle
/// threshold of the reference) and the run length at which the working
/// direction settles.
pub fn select_beta_and_t(report: &BetaProbeReport, cfg: &SelectionConfig) -> Result<BetaSelection> {
    let n = report.checkpoints.len();
    if n < 2 {
        return Err(Error::Config("beta selection needs at least two checkpoints".into()));
    }
    if cfg.variance_window < 2 {
        return Err(Error::Config("variance window must be >= 2".into()));
    }
    let window_start = n - cfg.variance_window.min(n);
    let mut order: Vec<usize> = (0..report.betas.len()).collect();
    order.sort_by(|&a, &b| report.betas[a].total_cmp(&report.betas[b]));

    let reference = order
        .iter()
        .rev()
        .copied()
        .find(|&b| report.dispersion(b, window_start) < cfg.variance_bound_deg)
        .ok_or_else(|| {
            Error::InconclusiveProbe(format!(
                "no beta settles within {}° over the last {} checkpoints",
                cfg.variance_bound_deg, cfg.variance_window
            ))
        })?;
    let working = order
        .iter()
        .copied()
        .find(|&b| report.final_angle(b, reference) <= cfg.angle_threshold_deg)
        .unwrap_or(reference);
    let steps = report.checkpoints[settled_from(report, working, cfg.variance_bound_deg)];
    let settling_time = report.checkpoints[settled_from(report, reference, cfg.variance_bound_deg)];
    Ok(BetaSelection {
        reference_beta: report.betas[reference],
        working_beta: report.betas[working],
        steps,
        settling_time,
    })
}

/// Decides when a fresh β/T probe is due because `θ` has moved far from
/// where the last one ran. Disabled when `threshold` is `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeRetrigger {
    pub threshold: Option<f64>,
}

impl ProbeRetrigger {
    /// True when `‖θ − θ_probe‖ / max(‖θ_probe‖, 1)` exceeds the threshold.
    pub fn due(&self, theta_at_probe: &[f64], theta: &[f64]) -> bool {
        let Some(limit) = self.threshold else {
            return false;
        };
        let moved = theta_at_probe
            .iter()
            .zip(theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        moved / norm(theta_at_probe).max(1.0) > limit
    }
}

/// CSV rows `seed,beta,T,component,value`.
pub fn write_estimates_csv<W: Write>(mut out: W, estimates: &[GradEstimate]) -> Result<()> {
    writeln!(out, "seed,beta,T,component,value")?;
    for e in estimates {
        for (i, v) in e.delta.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", e.seed, e.beta, e.steps, i, v)?;
        }
    }
    Ok(())
}

/// CSV rows `beta,checkpoint,angle_to_reference,c0,c1,...` where the
/// reference is the final estimate of `betas[reference]`.
pub fn write_probe_csv<W: Write>(mut out: W, report: &BetaProbeReport, reference: usize) -> Result<()> {
    let k = report.estimates.first().and_then(|s| s.first()).map_or(0, Vec::len);
    write!(out, "beta,checkpoint,angle_to_reference")?;
    for i in 0..k {
        write!(out, ",c{i}")?;
    }
    writeln!(out)?;
    let last = report.checkpoints.len() - 1;
    let target = &report.estimates[reference][last];
    for (b, series) in report.estimates.iter().enumerate() {
        for (c, est) in series.iter().enumerate() {
            write!(out, "{},{},{}", report.betas[b], report.checkpoints[c], angle_deg(est, target))?;
            for v in est {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use polgrad::estimator::{
    multi_beta_probe, olpomdp, select_beta_and_t, OlpomdpConfig, SelectionConfig, StepSchedule,
};
use polgrad::optimizer::{conjpomdp, ExactChainOracle, GpomdpOracle, GradOracle};
use polgrad::oracle::{build_chain, FiniteChainModel};
use polgrad::policy::Policy;
use polgrad::sim::simulate_average_reward;
use polgrad::{derive_seed, rng_from_seed, Environment, Error, Result};
use rayon::prelude::*;

use crate::config::{AnyEnv, ExperimentConfig, ExperimentKind};
use crate::metrics::{angle_between, relative_error, write_metrics_csv, MetricRow};

/// Seed streams derived from a replica seed.
const INIT_STREAM: u64 = 0;
const RUN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

pub fn replica_seed(base: u64, replica: usize) -> u64 {
    derive_seed(base, replica as u64)
}

#[derive(Debug)]
pub struct ReplicaResult {
    pub replica: usize,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    pub fault: Option<String>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub replicas: Vec<ReplicaResult>,
    pub metrics_path: Option<PathBuf>,
    pub manifest_path: Option<PathBuf>,
}

impl RunSummary {
    pub fn rows(&self) -> Vec<MetricRow> {
        self.replicas.iter().flat_map(|r| r.rows.iter().cloned()).collect()
    }

    pub fn faults(&self) -> impl Iterator<Item = (usize, &str)> {
        self.replicas
            .iter()
            .filter_map(|r| r.fault.as_deref().map(|f| (r.replica, f)))
    }
}

/// Exact average reward on finite chains, a rollout elsewhere.
enum Evaluator {
    Exact(FiniteChainModel),
    Rollout(u64),
}

impl Evaluator {
    fn reward<E: Environment>(&self, env: &E, policy: &dyn Policy, theta: &[f64], seed: u64) -> Result<f64> {
        match self {
            Evaluator::Exact(model) => build_chain(model, policy, theta)?.average_reward(),
            Evaluator::Rollout(steps) => simulate_average_reward(env, policy, theta, *steps, seed),
        }
    }

    fn gradient(&self, policy: &dyn Policy, theta: &[f64]) -> Result<Option<Vec<f64>>> {
        match self {
            Evaluator::Exact(model) => Ok(Some(build_chain(model, policy, theta)?.exact_gradient()?)),
            Evaluator::Rollout(_) => Ok(None),
        }
    }
}

struct Ctx<'a, E> {
    cfg: &'a ExperimentConfig,
    env: &'a E,
    policy: &'a dyn Policy,
    eval: &'a Evaluator,
}

/// Runs every replica, writes `metrics.csv` and `manifest.toml` under the
/// configured output directory (if any) and returns the rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let env = cfg.environment()?;
    let policy = cfg.policy()?;
    let eval = match cfg.finite_model()? {
        Some(model) => Evaluator::Exact(model),
        None => Evaluator::Rollout(cfg.evaluation.steps),
    };
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
    }

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cfg.workers {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::Config(e.to_string()))?
    };
    let replicas = pool.install(|| match &env {
        AnyEnv::Finite(e) => run_all(&Ctx { cfg, env: e, policy: &*policy, eval: &eval }),
        AnyEnv::Admission(e) => run_all(&Ctx { cfg, env: e, policy: &*policy, eval: &eval }),
        AnyEnv::Puck(e) => run_all(&Ctx { cfg, env: e, policy: &*policy, eval: &eval }),
    });

    let mut summary = RunSummary {
        replicas,
        metrics_path: None,
        manifest_path: None,
    };
    if let Some(out) = &cfg.out {
        let metrics = out.join("metrics.csv");
        write_metrics_csv(BufWriter::new(create(&metrics)?), &summary.rows())?;
        let manifest = out.join("manifest.toml");
        fs::write(&manifest, manifest_text(cfg, &summary)?)?;
        summary.metrics_path = Some(metrics);
        summary.manifest_path = Some(manifest);
    }
    Ok(summary)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn run_all<E: Environment>(ctx: &Ctx<'_, E>) -> Vec<ReplicaResult> {
    (0..ctx.cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let seed = replica_seed(ctx.cfg.base_seed, i);
            let mut rows = Vec::new();
            let fault = run_replica(ctx, i, seed, &mut rows).err().map(|e| e.to_string());
            if fault.is_some() {
                rows.push(MetricRow::new(i, 0, "fault", 1.0));
            }
            ReplicaResult {
                replica: i,
                seed,
                rows,
                fault,
            }
        })
        .collect()
}

fn run_replica<E: Environment>(ctx: &Ctx<'_, E>, i: usize, seed: u64, rows: &mut Vec<MetricRow>) -> Result<()> {
    let cfg = ctx.cfg;
    let k = ctx.policy.num_params();
    let theta0 = cfg.init_theta(k, &mut rng_from_seed(derive_seed(seed, INIT_STREAM)))?;
    let run_seed = derive_seed(seed, RUN_STREAM);
    let eval_seed = derive_seed(seed, EVAL_STREAM);
    let betas = &cfg.estimator.betas;
    let ts = &cfg.estimator.steps;
    let t_max = *ts.iter().max().expect("validated");

    match cfg.kind()? {
        ExperimentKind::GradientSweep => {
            let truth = ctx.eval.gradient(ctx.policy, &theta0)?;
            let report = multi_beta_probe(ctx.env, ctx.policy, &theta0, betas, t_max, ts, run_seed)?;
            for (b, &beta) in report.betas.iter().enumerate() {
                for (c, &t) in report.checkpoints.iter().enumerate() {
                    let est = &report.estimates[b][c];
                    let row = |name: String, v: f64| MetricRow::new(i, t, name, v).beta(beta).t(t);
                    for (j, v) in est.iter().enumerate() {
                        rows.push(row(format!("delta_{j}"), *v));
                    }
                    if let Some(g) = &truth {
                        rows.push(row("relative_error".into(), relative_error(est, g)?));
                        if est.iter().any(|&x| x != 0.0) {
                            rows.push(row("angle_deg".into(), angle_between(est, g)?));
                        }
                    }
                }
            }
        }
        ExperimentKind::BetaProbe => {
            let report = multi_beta_probe(ctx.env, ctx.policy, &theta0, betas, t_max, ts, run_seed)?;
            let reference = (0..betas.len())
                .max_by(|&a, &b| betas[a].total_cmp(&betas[b]))
                .expect("validated");
            for (b, &beta) in report.betas.iter().enumerate() {
                for (c, &t) in report.checkpoints.iter().enumerate() {
                    let angle = polgrad::estimator::angle_deg(&report.estimates[b][c], &report.estimates[reference][c]);
                    rows.push(MetricRow::new(i, t, "angle_to_reference", angle).beta(beta).t(t));
                }
            }
            match select_beta_and_t(&report, &SelectionConfig::default()) {
                Ok(sel) => {
                    rows.push(MetricRow::new(i, t_max, "reference_beta", sel.reference_beta));
                    rows.push(MetricRow::new(i, t_max, "working_beta", sel.working_beta));
                    rows.push(MetricRow::new(i, t_max, "selected_T", sel.steps as f64));
                    rows.push(MetricRow::new(i, t_max, "settling_time", sel.settling_time as f64));
                }
                Err(Error::InconclusiveProbe(_)) => {
                    rows.push(MetricRow::new(i, t_max, "inconclusive", 1.0));
                }
                Err(e) => return Err(e),
            }
        }
        ExperimentKind::ConjpomdpTrain => {
            let opt = cfg.optimizer_config(run_seed)?;
            let outcome = match (&ctx.eval, cfg.optimizer.exact) {
                (Evaluator::Exact(model), true) => {
                    let mut oracle = ExactChainOracle::new(model, ctx.policy);
                    conjpomdp(&mut oracle, &theta0, &opt)?
                }
                _ => {
                    let mut oracle = GpomdpOracle::new(ctx.env, ctx.policy, betas[0]);
                    let out = conjpomdp(&mut oracle, &theta0, &opt)?;
                    debug_assert_eq!(out.env_steps, oracle.env_steps());
                    out
                }
            };
            let last = outcome.log.len() - 1;
            for (n, entry) in outcome.log.iter().enumerate() {
                let row = |name: &str, v: f64| MetricRow::new(i, entry.env_steps, name, v).beta(betas[0]).t(entry.budget);
                rows.push(row("g_norm_sq", entry.g_norm_sq));
                rows.push(row("step", entry.step));
                rows.push(row("penalty_weight", entry.penalty_weight));
                if let Some(v) = entry.value {
                    rows.push(row("value_estimate", v));
                }
                if n == last || cfg.evaluation.curve || matches!(ctx.eval, Evaluator::Exact(_)) {
                    rows.push(row("reward", ctx.eval.reward(ctx.env, ctx.policy, &entry.theta, eval_seed)?));
                }
            }
        }
        ExperimentKind::OlpomdpTrain => {
            let steps = ts[0];
            let every = cfg.olpomdp.snapshot_every.unwrap_or((steps / 10).max(1));
            let schedule = match cfg.olpomdp.schedule.as_str() {
                "decreasing" => StepSchedule::Decreasing(cfg.olpomdp.step_size),
                _ => StepSchedule::Constant(cfg.olpomdp.step_size),
            };
            let mut run_cfg = OlpomdpConfig::new(betas[0], steps, schedule);
            run_cfg.snapshots = (0..=steps / every).map(|n| n * every).collect();
            if run_cfg.snapshots.last() != Some(&steps) {
                run_cfg.snapshots.push(steps);
            }
            let run = olpomdp(ctx.env, ctx.policy, &theta0, &run_cfg, run_seed)?;
            for (t, theta) in &run.snapshots {
                let r = ctx.eval.reward(ctx.env, ctx.policy, theta, eval_seed)?;
                rows.push(MetricRow::new(i, *t, "reward", r).beta(betas[0]));
            }
        }
        ExperimentKind::BaselineEval => {
            let r = ctx.eval.reward(ctx.env, ctx.policy, &theta0, eval_seed)?;
            let steps = match ctx.eval {
                Evaluator::Exact(_) => 0,
                Evaluator::Rollout(n) => *n,
            };
            rows.push(MetricRow::new(i, steps, "reward", r));
        }
    }
    Ok(())
}

fn manifest_text(cfg: &ExperimentConfig, summary: &RunSummary) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "# polgrad {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        s,
        "seed_streams = {{ init = {INIT_STREAM}, run = {RUN_STREAM}, evaluation = {EVAL_STREAM} }}\n"
    );
    for r in &summary.replicas {
        let _ = writeln!(s, "[[replica]]\nindex = {}\nseed = {}", r.replica, r.seed);
        if let Some(f) = &r.fault {
            let _ = writeln!(s, "fault = {:?}", f);
        }
        s.push('\n');
    }
    let _ = writeln!(s, "[config]");
    let body = cfg.to_toml()?;
    // Re-root the echoed tables under `config.`.
    for line in body.lines() {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let _ = writeln!(s, "[config.{name}]");
        } else {
            let _ = writeln!(s, "{line}");
        }
    }
    Ok(s)
}

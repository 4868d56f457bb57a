use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use polgrad::envs::{
    three_state_model, CallAdmissionConfig, CallAdmissionEnv, CountingConvention, FiniteChainEnv, HoldingParameter,
    PuckConfig, PuckEnv,
};
use polgrad::oracle::FiniteChainModel;
use polgrad::policy::{
    read_checkpoint, LogisticAdmission, MlpController, Policy, SwitchedController, ThreeStateSoftmax,
    ThresholdAdmission,
};
use polgrad::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GradientSweep,
    ConjpomdpTrain,
    OlpomdpTrain,
    BetaProbe,
    BaselineEval,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::GradientSweep => "gradient-sweep",
            ExperimentKind::ConjpomdpTrain => "conjpomdp-train",
            ExperimentKind::OlpomdpTrain => "olpomdp-train",
            ExperimentKind::BetaProbe => "beta-probe",
            ExperimentKind::BaselineEval => "baseline-eval",
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Fixed by the subcommand when absent.
    pub kind: Option<ExperimentKind>,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Worker threads; all cores when absent.
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub environment: EnvironmentSpec,
    pub policy: PolicySpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub olpomdp: OlpomdpSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    /// `three-state`, `finite-chain`, `call-admission`, `puck-flat` or
    /// `puck-mountain`.
    pub id: String,
    /// Model file for `finite-chain`.
    pub model: Option<PathBuf>,
    pub counting: Option<String>,
    pub holding: Option<String>,
    pub thrust: Option<f64>,
    pub episode_secs: Option<f64>,
    pub drag: Option<f64>,
    pub restitution: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    /// `three-state-softmax`, `logistic-admission`, `threshold-admission`,
    /// `mlp` or `switched-mlp`.
    pub id: String,
    pub hidden: Option<usize>,
    /// Per-class free units required by `threshold-admission`.
    pub reserve: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub uniform: Option<[f64; 2]>,
    pub checkpoint: Option<PathBuf>,
    pub values: Option<Vec<f64>>,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            uniform: Some([-0.1, 0.1]),
            checkpoint: None,
            values: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSpec {
    pub betas: Vec<f64>,
    /// Run lengths `T`; sweeps and probes report at each.
    pub steps: Vec<u64>,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            betas: vec![0.0],
            steps: vec![1000],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub s0: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub search_budget: Option<u64>,
    pub max_doublings: usize,
    pub max_search_steps: usize,
    /// Fraction for the value sanity check; 0 disables it.
    pub sanity_drop: f64,
    pub penalty: f64,
    pub penalty_review_period: usize,
    pub max_env_steps: Option<u64>,
    /// Use the exact oracle instead of GPOMDP on finite chains.
    pub exact: bool,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            s0: 1.0,
            epsilon: 1e-4,
            max_iterations: 1000,
            search_budget: None,
            max_doublings: 4,
            max_search_steps: 40,
            sanity_drop: 0.5,
            penalty: 0.0,
            penalty_review_period: 10,
            max_env_steps: None,
            exact: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OlpomdpSpec {
    pub step_size: f64,
    /// `constant` or `decreasing`.
    pub schedule: String,
    /// Snapshot spacing in steps; ten snapshots when absent.
    pub snapshot_every: Option<u64>,
}

impl Default for OlpomdpSpec {
    fn default() -> Self {
        OlpomdpSpec {
            step_size: 1.0,
            schedule: "constant".into(),
            snapshot_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSpec {
    /// Rollout length for environments without an exact oracle.
    pub steps: u64,
    /// Evaluate every optimizer iterate, not only the final one.
    pub curve: bool,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec {
            steps: 100_000,
            curve: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.kind
            .ok_or_else(|| Error::Config("experiment kind not set".into()))
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        let env = self.environment()?;
        let policy = self.policy()?;
        if env.obs_dim() != policy.obs_dim() || env.num_controls() != policy.num_controls() {
            return Err(Error::Config(format!(
                "policy `{}` does not fit environment `{}`",
                self.policy.id, self.environment.id
            )));
        }
        let init = &self.init;
        let sources = [init.uniform.is_some(), init.checkpoint.is_some(), init.values.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::Config(
                "init needs exactly one of `uniform`, `checkpoint`, `values`".into(),
            ));
        }
        if let Some([lo, hi]) = init.uniform {
            if !(lo <= hi) {
                return Err(Error::Config(format!("empty init range [{lo}, {hi}]")));
            }
        }
        let est = &self.estimator;
        if est.betas.is_empty() || est.steps.is_empty() {
            return Err(Error::Config("estimator needs at least one beta and one T".into()));
        }
        if let Some(b) = est.betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::Config(format!("beta {b} outside [0, 1)")));
        }
        if est.steps.contains(&0) {
            return Err(Error::Config("T must be >= 1".into()));
        }
        if matches!(kind, ExperimentKind::BetaProbe) && est.steps.len() < 2 {
            return Err(Error::Config("beta-probe needs at least two checkpoints".into()));
        }
        if self.optimizer.exact && self.finite_model()?.is_none() {
            return Err(Error::Config("exact oracle needs a finite-chain environment".into()));
        }
        self.optimizer_config(0)?.validate()?;
        if !matches!(self.olpomdp.schedule.as_str(), "constant" | "decreasing") {
            return Err(Error::Config(format!("unknown schedule `{}`", self.olpomdp.schedule)));
        }
        if self.olpomdp.snapshot_every == Some(0) {
            return Err(Error::Config("snapshot_every must be >= 1".into()));
        }
        if self.evaluation.steps == 0 {
            return Err(Error::Config("evaluation steps must be >= 1".into()));
        }
        Ok(())
    }

    /// The finite model behind the environment, when it has one.
    pub fn finite_model(&self) -> Result<Option<FiniteChainModel>> {
        match self.environment.id.as_str() {
            "three-state" => Ok(Some(three_state_model())),
            "finite-chain" => {
                let path = self
                    .environment
                    .model
                    .as_ref()
                    .ok_or_else(|| Error::Config("finite-chain needs `model`".into()))?;
                let file = File::open(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                Ok(Some(FiniteChainModel::read(BufReader::new(file))?))
            }
            _ => Ok(None),
        }
    }

    pub fn environment(&self) -> Result<AnyEnv> {
        let spec = &self.environment;
        match spec.id.as_str() {
            "three-state" | "finite-chain" => {
                let model = self.finite_model()?.expect("finite id");
                Ok(AnyEnv::Finite(FiniteChainEnv::new(model)?))
            }
            "call-admission" => {
                let mut cfg = CallAdmissionConfig::default();
                if let Some(c) = &spec.counting {
                    cfg.counting = CountingConvention::parse(c)?;
                }
                if let Some(h) = &spec.holding {
                    cfg.holding = HoldingParameter::parse(h)?;
                }
                Ok(AnyEnv::Admission(CallAdmissionEnv::new(cfg)?))
            }
            "puck-flat" | "puck-mountain" => {
                let mut cfg = if spec.id == "puck-flat" {
                    PuckConfig::flat()
                } else {
                    PuckConfig::mountain()
                };
                if let Some(v) = spec.thrust {
                    cfg.thrust = v;
                }
                if let Some(v) = spec.episode_secs {
                    cfg.episode_secs = v;
                }
                if let Some(v) = spec.drag {
                    cfg.drag = v;
                }
                if let Some(v) = spec.restitution {
                    cfg.restitution = v;
                }
                Ok(AnyEnv::Puck(PuckEnv::new(cfg)?))
            }
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }

    pub fn policy(&self) -> Result<Box<dyn Policy>> {
        let spec = &self.policy;
        let obs = self.environment()?.obs_dim();
        let hidden = spec.hidden.unwrap_or(8);
        match spec.id.as_str() {
            "three-state-softmax" => Ok(Box::new(ThreeStateSoftmax)),
            "logistic-admission" => Ok(Box::new(LogisticAdmission::default())),
            "threshold-admission" => {
                let mut p = ThresholdAdmission::always_accept();
                if let Some(r) = &spec.reserve {
                    p.reserve = r.clone();
                }
                Ok(Box::new(p))
            }
            "mlp" => Ok(Box::new(MlpController::new(obs, hidden, 4))),
            "switched-mlp" => {
                let net = MlpController::new(obs, hidden, 4);
                // Second network acts on the plateau: y > 75.
                Ok(Box::new(SwitchedController::new(net, net, 1, 0.5)?))
            }
            other => Err(Error::Config(format!("unknown policy `{other}`"))),
        }
    }

    pub fn optimizer_config(&self, seed: u64) -> Result<polgrad::optimizer::OptimizerConfig> {
        let o = &self.optimizer;
        let penalty = (o.penalty > 0.0).then(|| polgrad::optimizer::PenaltySchedule {
            review_period: o.penalty_review_period,
            ..polgrad::optimizer::PenaltySchedule::new(o.penalty)
        });
        Ok(polgrad::optimizer::OptimizerConfig {
            s0: o.s0,
            epsilon: o.epsilon,
            max_cg_iterations: o.max_iterations,
            budget: *self.estimator.steps.first().unwrap_or(&1000),
            search_budget: o.search_budget,
            max_doublings: o.max_doublings,
            max_search_steps: o.max_search_steps,
            sanity_drop: (o.sanity_drop > 0.0).then_some(o.sanity_drop),
            penalty,
            max_env_steps: o.max_env_steps,
            seed,
        })
    }

    pub fn init_theta<R: rand::Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<f64>> {
        let theta = if let Some(v) = &self.init.values {
            v.clone()
        } else if let Some(path) = &self.init.checkpoint {
            let file = File::open(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            read_checkpoint(BufReader::new(file))?
        } else {
            let [lo, hi] = self.init.uniform.unwrap_or([-0.1, 0.1]);
            (0..k).map(|_| rng.random_range(lo..=hi)).collect()
        };
        if theta.len() != k {
            return Err(Error::Config(format!(
                "initial parameters have length {}, policy needs {k}",
                theta.len()
            )));
        }
        Ok(theta)
    }
}

/// The environments the harness can build.
pub enum AnyEnv {
    Finite(FiniteChainEnv),
    Admission(CallAdmissionEnv),
    Puck(PuckEnv),
}

impl AnyEnv {
    pub fn obs_dim(&self) -> usize {
        use polgrad::Environment;
        match self {
            AnyEnv::Finite(e) => e.obs_dim(),
            AnyEnv::Admission(e) => e.obs_dim(),
            AnyEnv::Puck(e) => e.obs_dim(),
        }
    }

    pub fn num_controls(&self) -> usize {
        use polgrad::Environment;
        match self {
            AnyEnv::Finite(e) => e.num_controls(),
            AnyEnv::Admission(e) => e.num_controls(),
            AnyEnv::Puck(e) => e.num_controls(),
        }
    }
}

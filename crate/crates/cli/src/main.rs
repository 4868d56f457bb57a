use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polgrad::Error;
use polgrad_cli::{run_experiment, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "polgrad", version, about = "Seeded policy-gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// GPOMDP estimates against the exact gradient over β and T.
    GradientSweep(Flags),
    /// Conjugate-gradient training.
    ConjpomdpTrain(Flags),
    /// Online stochastic-gradient training.
    OlpomdpTrain(Flags),
    /// Multi-β probe with automatic β and T selection.
    BetaProbe(Flags),
    /// Average reward of a fixed policy.
    BaselineEval(Flags),
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(kind: ExperimentKind, flags: Flags) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&flags.config)?;
    match cfg.kind {
        Some(k) if k != kind => {
            return Err(Error::Config(format!(
                "config is a `{}` experiment, not `{}`",
                k.name(),
                kind.name()
            )))
        }
        _ => cfg.kind = Some(kind),
    }
    if let Some(s) = flags.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = flags.replicas {
        cfg.replicas = r;
    }
    if let Some(o) = flags.out {
        cfg.out = Some(o);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, flags) = match cli.command {
        Command::GradientSweep(f) => (ExperimentKind::GradientSweep, f),
        Command::ConjpomdpTrain(f) => (ExperimentKind::ConjpomdpTrain, f),
        Command::OlpomdpTrain(f) => (ExperimentKind::OlpomdpTrain, f),
        Command::BetaProbe(f) => (ExperimentKind::BetaProbe, f),
        Command::BaselineEval(f) => (ExperimentKind::BaselineEval, f),
    };
    let cfg = match load(kind, flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let summary = match run_experiment(&cfg) {
        Ok(s) => s,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(p) = &summary.metrics_path {
        eprintln!("wrote {}", p.display());
    }
    let mut faulted = false;
    for (replica, fault) in summary.faults() {
        eprintln!("replica {replica} failed: {fault}");
        faulted = true;
    }
    if faulted {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

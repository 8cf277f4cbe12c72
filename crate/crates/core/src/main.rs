use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use led_cmaes::harness::{emit, run_experiment, ExperimentConfig};
use led_cmaes::Result;

#[derive(Parser)]
#[command(name = "led-cmaes", version, about = "CMA-ES with effective-dimension estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of trials and write trace.csv / summary.csv.
    Run(RunArgs),
}

#[derive(Parser)]
struct RunArgs {
    /// key=value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// cmaes | led | led-hyper | led-norm
    #[arg(long)]
    algo: Option<String>,
    /// csa | tpa
    #[arg(long)]
    stepsize: Option<String>,
    /// none | ipop
    #[arg(long)]
    restart: Option<String>,
    /// Benchmark id, 1..9
    #[arg(long = "fn")]
    function: Option<u32>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long = "eff-dim")]
    eff_dim: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample size; defaults to 4 + ⌊3 ln N⌋.
    #[arg(long)]
    lambda: Option<usize>,
    /// Evaluation budget per dimension.
    #[arg(long = "budget-multiplier")]
    budget_multiplier: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "no-rotation")]
    no_rotation: bool,
    /// Also write per-coordinate led_trace.csv.
    #[arg(long = "trace-led")]
    trace_led: bool,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Apply the max-iteration stop rule to evaluations.
    #[arg(long = "maxiter-as-evals")]
    maxiter_as_evals: bool,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_config_file(p)?,
        None => ExperimentConfig::default(),
    };
    let pairs = [
        ("algo", args.algo.clone()),
        ("stepsize", args.stepsize.clone()),
        ("restart", args.restart.clone()),
        ("fn", args.function.map(|v| v.to_string())),
        ("dim", args.dim.map(|v| v.to_string())),
        ("eff-dim", args.eff_dim.map(|v| v.to_string())),
        ("trials", args.trials.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("lambda", args.lambda.map(|v| v.to_string())),
        ("budget-multiplier", args.budget_multiplier.map(|v| v.to_string())),
        ("jobs", args.jobs.map(|v| v.to_string())),
    ];
    for (key, value) in pairs {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    if args.dim.is_some() && args.eff_dim.is_none() && args.config.is_none() {
        cfg.eff_dim = cfg.dim;
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    if args.no_rotation {
        cfg.rotate = false;
    }
    if args.trace_led {
        cfg.trace_led = true;
    }
    if args.maxiter_as_evals {
        cfg.max_iter_as_evals = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let result = run_experiment(&cfg)?;
    let s = &result.summary;
    println!(
        "{} {} {} f{} N={} Neff={}: {}/{} successful, median evals {}, evals/success-rate {}",
        cfg.algorithm,
        cfg.mode.name(),
        cfg.restart.name(),
        cfg.function,
        cfg.dim,
        cfg.eff_dim,
        s.successes,
        s.trials,
        s.median_evals.map_or("-".into(), |v| format!("{v:.0}")),
        s.evals_per_success.map_or("-".into(), |v| format!("{v:.0}")),
    );
    if let Some(dir) = &cfg.out {
        emit(&result, dir)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

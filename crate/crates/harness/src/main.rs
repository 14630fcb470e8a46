use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rectiflow_harness::acceptance::oracle_check;
use rectiflow_harness::sweep::SUMMARY_FILE;
use rectiflow_harness::{
    parse_config, run_experiment, run_sweep, ExperimentConfig, HarnessError, Result, RunManifest, RunOptions, Stages,
    SweepAxis, SweepOptions,
};

#[derive(Parser)]
#[command(name = "rectiflow", version, about = "Rectified flow experiments with boundary-enforced velocity fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write loss.csv and checkpoint.bin.
    Train(RunArgs),
    /// Sample from a trained checkpoint (or the oracle) with every configured sampler.
    Sample(RunArgs),
    /// Boundary, score and distribution metrics for a checkpoint (or the oracle).
    Eval(RunArgs),
    /// Train, sample and evaluate in one run.
    Run(RunArgs),
    /// Run the oracle acceptance checks, which need no training.
    OracleCheck,
    /// Run one child experiment per value of a single parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Load this backbone instead of training.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// boundary_function_set, overshoot_c or n_steps.
    #[arg(long)]
    axis: String,
    /// Comma-separated values; defaults to the axis's standard values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set output_dir".into()))?;
    Ok((config, out))
}

fn report(manifest: &RunManifest, out: &std::path::Path) {
    println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    if let Some(t) = &manifest.metrics.train {
        println!("train: {} steps, final loss {:.6}", t.steps, t.final_loss);
    }
    if let Some(b) = &manifest.metrics.boundary {
        println!(
            "boundary: right max {:.3e}, left max {:.3e}",
            b.right_violation_max_abs, b.left_violation_max_abs
        );
    }
    for s in &manifest.metrics.samplers {
        println!(
            "{}: energy distance {}, trace ratio {:.4}",
            s.sampler,
            s.energy_distance.map_or("-".to_string(), |e| format!("{e:.5}")),
            s.trace_ratio
        );
    }
}

fn run_stages(args: &RunArgs, stages: Stages) -> Result<()> {
    let (config, out) = load(args)?;
    let options = RunOptions {
        out_dir: out.clone(),
        checkpoint: args.checkpoint.clone(),
        stages,
    };
    let manifest = run_experiment(&config, &options)?;
    report(&manifest, &out);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            if args.checkpoint.is_some() {
                return Err(HarnessError::Config("train does not take --checkpoint".into()));
            }
            run_stages(&args, Stages::TRAIN)
        }
        Command::Sample(args) => run_stages(&args, Stages::SAMPLE),
        Command::Eval(args) => run_stages(&args, Stages::EVALUATE),
        Command::Run(args) => run_stages(&args, Stages::ALL),
        Command::OracleCheck => {
            let results = oracle_check();
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(HarnessError::Acceptance(format!("{failed} of {} criteria failed", results.len())));
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let (config, out) = load(&args.run)?;
            let axis: SweepAxis = args.axis.parse()?;
            let values = if args.values.is_empty() {
                axis.default_values()
            } else {
                args.values
            };
            let options = SweepOptions {
                workers: args.workers,
                checkpoint: args.run.checkpoint.clone(),
                ..SweepOptions::new(&out)
            };
            let outcome = run_sweep(&config, axis, &values, &options)?;
            for c in &outcome.children {
                let status = match &c.manifest {
                    Ok(_) => "completed".to_string(),
                    Err(e) => format!("failed: {e}"),
                };
                println!("{} = {}: {status}", axis, c.value);
            }
            println!(
                "{} of {} runs failed; summary in {}",
                outcome.failures(),
                outcome.children.len(),
                out.join(SUMMARY_FILE).display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `ssnno`: data generation, training, reduction, evaluation, Monte Carlo
//! sweeps and closed-loop MPC runs for the CSTR benchmark.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use commands::{EvaluateArgs, GenerateArgs, McArgs, MpcArgs, ReduceArgs, TrainArgs};
use manifest::{Run, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "ssnno", version, about = "Ordered state-space neural network identification and MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the CSTR and write a noisy identification record.
    Generate(GenerateArgs),
    /// Train a state-space network on a record.
    Train(TrainArgs),
    /// Drop the states whose variance is at or below a threshold.
    Reduce(ReduceArgs),
    /// Write the variance and MSE table for one or more models.
    Evaluate(EvaluateArgs),
    /// Noise-level by initialization sweep for SSNNO and the SSNN baseline.
    Montecarlo(McArgs),
    /// Closed-loop EKF + MPC on the CSTR.
    Mpc(MpcArgs),
    /// Re-run the command recorded in a manifest and compare output hashes.
    Replay {
        manifest: PathBuf,
    },
}

/// Marks a failure of the numerics rather than of the invocation.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use ssnno_core::Error as E;
    for cause in err.chain() {
        if cause.is::<NumericalFailure>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Divergence { .. }
                | E::Numerical(_)
                | E::InfeasibleTarget { .. }
                | E::EmptyReduction { .. }
                | E::TooFewSamples { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

/// Common shape of the artifact-writing commands.
pub trait Job: serde::Serialize {
    const NAME: &'static str;
    fn out_dir(&self) -> &Path;
    fn stem(&self) -> String;
    fn execute(&self, run: &mut Run) -> Result<()>;
}

fn run_job<J: Job>(job: &J, args: &[String]) -> Result<RunManifest> {
    std::fs::create_dir_all(job.out_dir()).with_context(|| format!("creating {}", job.out_dir().display()))?;
    let mut run = Run::new(J::NAME, args.to_vec(), serde_json::to_value(job)?);
    let result = job.execute(&mut run);
    let path = job.out_dir().join(format!("{}.manifest.json", job.stem()));
    let manifest = run.finish(&path, result.is_ok())?;
    result.map(|_| manifest)
}

fn dispatch(cli: Cli, args: &[String]) -> Result<Option<RunManifest>> {
    let m = match cli.command {
        Command::Generate(a) => run_job(&a, args)?,
        Command::Train(a) => run_job(&a, args)?,
        Command::Reduce(a) => run_job(&a, args)?,
        Command::Evaluate(a) => run_job(&a, args)?,
        Command::Montecarlo(a) => run_job(&a, args)?,
        Command::Mpc(a) => run_job(&a, args)?,
        Command::Replay { manifest } => {
            replay(&manifest)?;
            return Ok(None);
        }
    };
    Ok(Some(m))
}

fn replay(path: &Path) -> Result<()> {
    let original = RunManifest::load(path)?;
    if original.args.first().map(String::as_str) == Some("replay") {
        bail!("a replay manifest cannot be replayed");
    }
    std::env::set_current_dir(&original.working_dir)
        .with_context(|| format!("entering {}", original.working_dir.display()))?;
    let argv = std::iter::once("ssnno".to_string()).chain(original.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).context("manifest arguments no longer parse")?;
    let fresh = dispatch(cli, &original.args)?.expect("replay of a job");
    let mut mismatched = Vec::new();
    for entry in &original.outputs {
        match fresh.outputs.iter().find(|e| e.path == entry.path) {
            Some(e) if e.sha256 == entry.sha256 => {}
            _ => mismatched.push(entry.path.display().to_string()),
        }
    }
    if !mismatched.is_empty() {
        return Err(NumericalFailure(format!("outputs differ from the manifest: {}", mismatched.join(", "))).into());
    }
    println!("replay matches: {} outputs identical", original.outputs.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli, &args) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dspg::experiment::{
    run_diagnostics_to_dir, run_single_to_dir, run_sweep_to_dir, ExperimentConfig, Mode, SweepOptions,
};

/// Exit status when some grid cell lost every trial to divergence.
const EXIT_ALL_DIVERGED: u8 = 2;

#[derive(Parser)]
#[command(version, about = "Decentralized SPSA experiments over lossy channels", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial at the first (c, p_c) cell and write its trace
    Run(Common),
    /// Run every (c, p_c) cell for the configured number of trials
    Sweep(Common),
    /// Dump exact and sampled estimator moments at probe points
    Diagnose(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_path, then ./out
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write per-trial finals, traces and delivery logs
    #[arg(short, long)]
    verbose: bool,
    /// Worker threads for sweeps
    #[arg(short, long, default_value_t = 1)]
    parallel: usize,
}

impl Common {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let cfg = ExperimentConfig::from_path(&self.config)
            .with_context(|| format!("invalid config {}", self.config.display()))?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_path.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, out))
    }
}

fn report(out: &Path, what: &str) {
    eprintln!("wrote {what} to {}", out.display());
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let (cfg, out) = args.load()?;
            let result = run_single_to_dir(&cfg, &out, args.verbose)?;
            println!("final_norm={} status={}", result.final_norm, result.status.label());
            report(&out, "trace.csv and final.csv");
        }
        Command::Sweep(args) => {
            let (cfg, out) = args.load()?;
            if cfg.mode == Mode::Diagnostics {
                anyhow::bail!("mode = diagnostics is run with the diagnose command");
            }
            let opts = SweepOptions { verbose: args.verbose, threads: Some(args.parallel.max(1)) };
            let (output, files) = run_sweep_to_dir(&cfg, &out, opts)?;
            report(&files.summary, "summary");
            let dead: Vec<_> = output.summary.rows.iter().filter(|r| r.all_diverged()).collect();
            if !dead.is_empty() {
                for r in &dead {
                    eprintln!("all {} trials diverged at c={} p_c={}", r.trials, r.c, r.p_c);
                }
                return Ok(ExitCode::from(EXIT_ALL_DIVERGED));
            }
        }
        Command::Diagnose(args) => {
            let (cfg, out) = args.load()?;
            let rows = run_diagnostics_to_dir(&cfg, &out)?;
            println!("{} rows", rows.len());
            report(&out, "diagnostics.csv");
        }
    }
    Ok(ExitCode::SUCCESS)
}

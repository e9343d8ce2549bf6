use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fencesim::LatencyModel;
use fencesim_cli::config::{ExperimentConfig, Overrides};
use fencesim_cli::error::CliError;
use fencesim_cli::output::{csv_table, short_hash, write_atomic};
use fencesim_cli::{ablate, fit, sweep, verify, RunOptions};

/// Simulate put-with-signal protocols and write CSV summaries.
#[derive(Parser, Debug)]
#[command(name = "fencesim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Write full NDJSON traces next to the summaries.
    #[arg(long, global = true)]
    trace: bool,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Rerun points that already have results.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One run per grid point of the `[sweep]` section.
    Sweep,
    /// Vanilla, decoupled-only, NIC-ordering-only and combined on one workload.
    Ablate,
    /// Randomized ordering checks; exits 2 on an unexpected outcome.
    Verify {
        /// Defaults to `verify.trials` from the config, or 1000.
        #[arg(long)]
        trials: Option<u32>,
        /// Run every trial as vanilla with fences ignored.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Alpha-beta fits from sweep CSVs or sweep output directories.
    Fit {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
        }
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            trace: self.trace,
            jobs: self.jobs,
            force: self.force,
        }
    }

    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        ExperimentConfig::load(path, &self.overrides())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fencesim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Sweep => {
            let cfg = cli.load()?;
            let s = sweep::cmd_sweep(&cfg, &cli.options())?;
            println!(
                "sweep: {} points ({} run, {} reused) -> {}",
                s.rows.len(),
                s.ran,
                s.reused,
                s.csv.display()
            );
        }
        Command::Ablate => {
            let cfg = cli.load()?;
            let (rows, csv) = ablate::cmd_ablate(&cfg, &cli.options())?;
            for r in &rows {
                println!(
                    "{:<13} {:>12} ns  x{:.2}  {:>7.1} fences/PE ({})",
                    r.protocol, r.makespan_ns, r.speedup, r.fences_per_pe, r.fence_cost
                );
            }
            println!("ablate -> {}", csv.display());
        }
        Command::Verify {
            trials,
            inject_fault,
        } => verify_cmd(cli, *trials, *inject_fault)?,
        Command::Fit { inputs } => fit_cmd(cli, inputs)?,
    }
    Ok(())
}

fn verify_cmd(cli: &Cli, trials: Option<u32>, inject_fault: bool) -> Result<(), CliError> {
    let (lat, seed, default_trials, dir) = match &cli.config {
        Some(_) => {
            let cfg = cli.load()?;
            (
                cfg.latency.clone(),
                cfg.seed,
                cfg.verify.trials,
                cfg.run_dir(),
            )
        }
        None => (
            LatencyModel::default(),
            cli.seed.unwrap_or(0),
            1000,
            cli.out.clone().unwrap_or_else(|| PathBuf::from("results")),
        ),
    };
    let pool = sweep::thread_pool(cli.jobs)?;
    let report = verify::cmd_verify(
        &lat,
        seed,
        trials.unwrap_or(default_trials),
        inject_fault,
        &pool,
    )?;
    let path = dir.join("verify.json");
    write_atomic(&path, &serde_json::to_vec_pretty(&report)?)?;
    println!(
        "verify: {} trials{}, {} violations in safe modes; {} shows {} (expected >= 1) -> {}",
        report.trials,
        if report.fault_injected {
            " with fences removed"
        } else {
            ""
        },
        report.safe_violations,
        report.unsafe_protocol,
        report.unsafe_violations,
        path.display()
    );
    if !report.passed() {
        let first = report
            .failed_trials
            .first()
            .map(|t| format!("; first failure: trial {} ({})", t.trial, t.protocol))
            .unwrap_or_default();
        return Err(CliError::Verify(format!(
            "{} safe-mode violations, {} in the unsafe scenario{first}",
            report.safe_violations, report.unsafe_violations
        )));
    }
    Ok(())
}

fn fit_cmd(cli: &Cli, inputs: &[PathBuf]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for p in inputs {
        rows.extend(fit::read_inputs(p)?);
    }
    let table = fit::fit_table(&rows);
    let hash = short_hash(&serde_json::to_vec(&rows)?);
    let text = csv_table(fit::SCHEMA, &hash, &table)?;
    print!("{}", String::from_utf8_lossy(&text));
    if let Some(out) = &cli.out {
        write_atomic(&Path::new(out).join("fit.csv"), &text)?;
    }
    Ok(())
}

//! `riskstrat` command line: simulate synthetic bundles, validate study
//! configs, run the full pipeline, and export plot-ready data.
//!
//! Exit codes for `run`: 0 when every stratum passes diagnostics, 2 when
//! the run completed but some diagnostics failed (or were indeterminate),
//! 1 on any fatal error.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use riskstrat_core::data::write_bundle;
use riskstrat_core::sim::{simulate, SimulationSpec};
use riskstrat_core::study::{emit_plot_data, run_study, validate_config, Report};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "riskstrat", version, about = "Risk-stratified treatment effect estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bundle (plus ground truth) from a simulation spec.
    Simulate {
        /// Simulation spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for covariates.csv, cohort.csv, outcomes.csv, truth.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a study config and report every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the full pipeline and write the report bundle.
    Run(RunArgs),
    /// Derive plot-ready CSVs from a finished report.
    PlotData {
        /// report.json from a previous run.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of risk strata.
    #[arg(long)]
    risk_strata: Option<usize>,
    /// Override the number of propensity strata.
    #[arg(long)]
    ps_strata: Option<usize>,
    /// Override the matching caliper.
    #[arg(long)]
    caliper: Option<f64>,
    /// Override the cross-validation fold count.
    #[arg(long)]
    cv_folds: Option<usize>,
    /// Override the time-at-risk horizon in days.
    #[arg(long)]
    time_at_risk: Option<u32>,
    /// Override the bootstrap replicate count.
    #[arg(long)]
    bootstrap_reps: Option<usize>,
    /// Emit pooled Kaplan-Meier curves (km.csv).
    #[arg(long)]
    emit_km_curves: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("cannot read {}", spec.display()))?;
            let spec: SimulationSpec =
                serde_json::from_str(&text).context("invalid simulation spec")?;
            let (cov, cohort, truth) = simulate(&spec)?;
            write_bundle(&cov, &cohort, &out)?;
            truth
                .write_csv(out.join("truth.csv"))
                .context("writing truth.csv")?;
            println!(
                "wrote bundle for {} subjects to {}",
                cohort.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config } => match validate_config(&config) {
            Ok(c) => {
                println!(
                    "config ok: {} outcome(s), {} negative control(s), seed {}",
                    c.settings.outcome_ids.len(),
                    c.settings.negative_control_ids.len(),
                    c.settings.seed
                );
                Ok(ExitCode::SUCCESS)
            }
            Err(problems) => {
                for p in &problems {
                    eprintln!("config error: {p}");
                }
                bail!("{} problem(s) found", problems.len());
            }
        },
        Command::Run(args) => run_command(args),
        Command::PlotData { report, out } => {
            let text = std::fs::read_to_string(&report)
                .with_context(|| format!("cannot read {}", report.display()))?;
            let report: Report = serde_json::from_str(&text).context("invalid report.json")?;
            emit_plot_data(&report, &out)?;
            println!("wrote plot data to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_command(args: RunArgs) -> anyhow::Result<ExitCode> {
    let mut config = match validate_config(&args.config) {
        Ok(c) => c,
        Err(problems) => {
            for p in &problems {
                eprintln!("config error: {p}");
            }
            bail!("{} problem(s) found", problems.len());
        }
    };
    // Flags take precedence over config values.
    if let Some(seed) = args.seed {
        config.settings.seed = seed;
    }
    if let Some(k) = args.risk_strata {
        config.settings.risk_strata_count = k;
    }
    if let Some(k) = args.ps_strata {
        config.settings.ps_strata_count = k;
    }
    if let Some(c) = args.caliper {
        config.settings.caliper = c;
    }
    if let Some(f) = args.cv_folds {
        config.settings.cv_folds = f;
    }
    if let Some(t) = args.time_at_risk {
        config.settings.time_at_risk_days = t;
    }
    if let Some(r) = args.bootstrap_reps {
        config.report.bootstrap_reps = r;
    }
    if args.emit_km_curves {
        config.report.emit_km_curves = true;
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .context("no output directory: pass --out or set output_dir in the config")?;

    let bundle = run_study(&config)?;
    bundle.write(&out)?;

    let mut pass = 0usize;
    let mut total = 0usize;
    for outcome in &bundle.report.outcomes {
        for stratum in &outcome.strata {
            total += 1;
            if stratum.effect.diagnostics.passed() {
                pass += 1;
            }
        }
    }
    println!(
        "wrote {} outcome(s), {total} strata ({pass} passed diagnostics) to {}",
        bundle.report.outcomes.len(),
        out.display()
    );
    if pass == total {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

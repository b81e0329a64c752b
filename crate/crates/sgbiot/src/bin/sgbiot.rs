//! Command-line front end: single runs, parameter sweeps and config
//! inspection for the stochastic Galerkin poroelasticity solver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgbiot::cli::{
    apply_overrides, preset, run, sweep, write_report_csv, RunConfig, SweepGrid, REPORT_HEADER,
};

#[derive(Parser)]
#[command(name = "sgbiot", version, about = "Stochastic Galerkin mixed FEM for linear poroelasticity")]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble, solve and post-process one configuration
    Run(ConfigArgs),
    /// Run a cartesian parameter grid and write a report table
    Sweep(SweepArgs),
    /// Print the effective configuration as TOML
    PrintConfig(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// built-in configuration: example1, example2 or example3
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// configuration file (TOML)
    #[arg(long)]
    config: Option<PathBuf>,
    /// mesh level override
    #[arg(long)]
    level: Option<u32>,
    /// chaos total degree override
    #[arg(long)]
    degree: Option<usize>,
    /// solver tolerance override
    #[arg(long)]
    tol: Option<f64>,
    /// output directory override
    #[arg(long)]
    out: Option<String>,
    /// dotted-path overrides, e.g. --set physics.nu=0.499
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// grid axes, e.g. "kappa0=1,1e-5,1e-10;alpha=1,1e-2,1e-4;nu=0.4,0.499"
    #[arg(long)]
    grid: String,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig, sgbiot::Error> {
        let base = match (&self.preset, &self.config) {
            (Some(name), None) => preset(name)?,
            (None, Some(path)) => RunConfig::from_file(path)?,
            (None, None) => preset("example1")?,
            (Some(_), Some(_)) => unreachable!("clap forbids this combination"),
        };
        let mut sets: Vec<(String, String)> = Vec::new();
        if let Some(level) = self.level {
            sets.push(("discretization.level".into(), level.to_string()));
        }
        if let Some(degree) = self.degree {
            sets.push(("discretization.degree".into(), degree.to_string()));
        }
        if let Some(tol) = self.tol {
            sets.push(("solver.tol".into(), format!("{tol:e}")));
        }
        if let Some(out) = &self.out {
            sets.push(("output.dir".into(), out.clone()));
        }
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| sgbiot::Error::Config(format!("`--set {s}` is not KEY=VALUE")))?;
            sets.push((k.to_string(), v.to_string()));
        }
        if sets.is_empty() {
            Ok(base)
        } else {
            apply_overrides(&base, &sets)
        }
    }
}

fn main() -> ExitCode {
    let args = CliArgs::parse();
    match dispatch(args) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(args: CliArgs) -> Result<bool, sgbiot::Error> {
    match args.command {
        Command::PrintConfig(cfg) => {
            let config = cfg.build()?;
            print!("{}", config.to_toml()?);
            Ok(true)
        }
        Command::Run(cfg) => {
            let config = cfg.build()?;
            let artifacts = run(&config)?;
            for w in &artifacts.warnings {
                eprintln!("warning: {w}");
            }
            println!("{REPORT_HEADER}");
            println!("{}", artifacts.report.csv_row());
            for path in &artifacts.exported {
                eprintln!("wrote {}", path.display());
            }
            Ok(artifacts.report.converged)
        }
        Command::Sweep(sw) => {
            let config = sw.config.build()?;
            let grid = SweepGrid::parse(&sw.grid)?;
            let rows = sweep(&config, &grid);
            let mut all_ok = true;
            println!("{REPORT_HEADER}");
            for row in &rows {
                println!("{}", row.report.csv_row());
                if let Some(err) = &row.error {
                    eprintln!(
                        "cell (nu={}, alpha={}, kappa0={}, e0={}, level={}) failed: {err}",
                        row.report.nu,
                        row.report.alpha,
                        row.report.kappa0,
                        row.report.e0,
                        row.report.level
                    );
                    all_ok = false;
                } else if !row.report.converged {
                    all_ok = false;
                }
            }
            let out_dir = if config.output.dir.is_empty() {
                None
            } else {
                Some(PathBuf::from(&config.output.dir))
            };
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                let path = dir.join("sweep_report.csv");
                write_report_csv(&rows, &path)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(all_ok)
        }
    }
}

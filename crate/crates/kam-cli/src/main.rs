use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kam_engine::cli::{
    execute, parse_sweep, run_sweep, write_outputs, write_sweep, Overrides, RunConfig,
};
use kam_engine::error::CliError;

/// KAM iteration for the nonlinear wave equation on the circle.
#[derive(Debug, Parser)]
#[command(name = "kam-wave", version)]
struct Args {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Sweep instead of a single run, e.g. `kappa=1e-4,2e-4`.
    #[arg(long, value_name = "AXIS=v1,v2,...")]
    sweep: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match drive(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("kam-wave: {e}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` when a run finished but some check failed.
fn drive(args: &Args) -> Result<bool, CliError> {
    let over = Overrides {
        seed: args.seed,
        k_max: args.k_max,
        out: args.out.clone(),
    };
    let cfg = RunConfig::load(&args.config, &over)?;
    if let Some(spec) = &args.sweep {
        let (axis, values) = parse_sweep(spec)?;
        let table = run_sweep(&cfg, axis, &values)?;
        let path = write_sweep(&table, &cfg.out)?;
        if args.verbose {
            eprintln!("{} rows written to {}", table.rows.len(), path.display());
        }
        return Ok(true);
    }
    let outcome = execute(&cfg, args.verbose)?;
    write_outputs(&outcome, &cfg.out)?;
    let report = &outcome.report;
    for c in report.checks.iter().filter(|c| !c.pass || args.verbose) {
        let mark = if c.pass { "ok  " } else { "FAIL" };
        eprintln!(
            "{mark} {}: {:.3e} {} {:.3e}",
            c.name, c.measured, c.relation, c.tolerance
        );
    }
    println!("run {} written to {}", report.run_id, cfg.out.display());
    Ok(report.all_pass)
}

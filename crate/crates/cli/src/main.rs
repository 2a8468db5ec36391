use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coupled_diffusion_cli::{
    run_simulate, run_spectrum, run_sweep, run_verify, Artifacts, CliError, SimConfig,
};

#[derive(Parser)]
#[command(
    name = "cdiff",
    version,
    about = "Coupled local/nonlocal diffusion: simulate, inspect, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the initial profile and write the time series, snapshots and decay fit.
    Simulate(Common),
    /// Spectral gap and energy-control estimate for the configured operator.
    Spectrum(Common),
    /// Distance to the heat flow as the kernel shrinks.
    SweepEpsilon(Common),
    /// Invariant checklist; exits 1 if any check fails.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config entry, e.g. `--set grid.n_local=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<SimConfig, CliError> {
        let mut cfg = SimConfig::load(&self.config)?;
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn report(art: &Artifacts) {
    for f in &art.files {
        println!("wrote {}", f.display());
    }
    for n in &art.notes {
        eprintln!("note: {n}");
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Simulate(c) => report(&run_simulate(&c.load()?, c.svg)?),
        Command::Spectrum(c) => report(&run_spectrum(&c.load()?)?),
        Command::SweepEpsilon(c) => report(&run_sweep(&c.load()?, c.svg)?),
        Command::Verify(c) => {
            let rows = run_verify(&c.load()?)?;
            let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in &rows {
                let verdict = if r.pass { "PASS" } else { "FAIL" };
                println!("{:width$}  {verdict}  {}", r.name, r.detail);
            }
            if rows.iter().any(|r| !r.pass) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

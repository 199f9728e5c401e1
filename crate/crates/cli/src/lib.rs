//! Command-line front end: reads a TOML run configuration, runs one solver,
//! optimizer or verification command, and writes CSV, JSON and binary
//! field outputs.
//!
//! Exit codes: `0` on success, `1` when a solve or optimization fails, `2`
//! when the configuration is invalid. The configuration is checked before
//! any output is created.

pub mod commands;
pub mod config;
pub mod error;
pub mod fieldfile;
pub mod output;
pub mod registry;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;

pub use commands::{Command, Context};
pub use config::RunConfig;
pub use error::CliError;
pub use fieldfile::{FieldFile, FieldKind};

#[derive(Debug, Parser)]
#[command(name = "venttsel", version, about = "Boundary control with Venttsel boundary conditions")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `solver.normal_stencil`.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub normal_stencil: Option<u8>,
    /// Also write every output field as a binary `.vtf` file.
    #[arg(long)]
    pub dump_fields: bool,
    /// Suppress the summary line on stdout.
    #[arg(long)]
    pub quiet: bool,
}

/// Load and check the configuration, applying flag overrides.
pub fn prepare(cli: &Cli) -> Result<Context, CliError> {
    let mut config = RunConfig::from_path(&cli.config)?;
    if let Some(s) = cli.normal_stencil {
        config.solver.normal_stencil = s;
    }
    let seed = cli.seed.unwrap_or(config.seed);
    cli.command.check_config(&config)?;
    Context::new(config, seed)
}

fn write_outputs(out: &Path, outcome: &commands::Outcome, dump: bool) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    for (name, field) in &outcome.fields {
        let csv = out.join(format!("{name}.csv"));
        match field {
            commands::Field::State(s) => {
                output::write_state_csv(&csv, s)?;
                if dump {
                    FieldFile::from_state(s).write(&out.join(format!("{name}.vtf")))?;
                }
            }
            commands::Field::Boundary(b) => {
                output::write_boundary_csv(&csv, b)?;
                if dump {
                    FieldFile::from_boundary(b).write(&out.join(format!("{name}.vtf")))?;
                }
            }
        }
    }
    output::write_json(&out.join("report.json"), &outcome.report)
}

/// Run one command and return the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let ctx = match prepare(cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let outcome = match commands::run(cli.command, &ctx) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Err(e) = write_outputs(&cli.out, &outcome, cli.dump_fields) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    if !cli.quiet {
        let mut stdout = std::io::stdout().lock();
        let _ = writeln!(
            stdout,
            "{}: wrote {}",
            cli.command.name(),
            cli.out.join("report.json").display()
        );
    }
    match &outcome.failure {
        Some(msg) => {
            eprintln!("error: {msg}");
            1
        }
        None => 0,
    }
}

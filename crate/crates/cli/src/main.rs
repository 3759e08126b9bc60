use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod error;
mod output;
mod report;
mod run;
mod spec;

use error::CliError;
use output::{CsvSink, Format, JsonSink, Sink};
use run::{Integrator, Overrides, Settings};

#[derive(Parser)]
#[command(name = "geomint", version, about = "Geometric integrators for systems with linear velocity constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a system and write its trajectory.
    Simulate(RunArgs),
    /// Compare nonholonomic and vakonomic dynamics along a nonholonomic run.
    Compare(RunArgs),
    /// Symplecticity, convergence and drift checks for one integrator.
    Diagnose(RunArgs),
    /// Print the spec file of a built-in system.
    Catalog { name: String },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum)]
    integrator: Option<Integrator>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trajectory format for `simulate`; reports are always JSON.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl RunArgs {
    fn settings(&self, spec: &spec::LoadedSpec, default: Integrator) -> Result<Settings, CliError> {
        let o = Overrides { integrator: self.integrator, h: self.h, steps: self.steps, seed: self.seed };
        Settings::resolve(spec, &o, default)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let spec = spec::load(&args.spec)?;
            let set = args.settings(&spec, Integrator::Verlet)?;
            let w = output::open(args.out.as_deref()).map_err(|e| CliError::io(out_name(&args.out, e)))?;
            let mut sink: Box<dyn Sink> = match args.format {
                Format::Csv => Box::new(CsvSink::new(w)),
                Format::Json => Box::new(JsonSink::new(w)),
            };
            run::simulate(&spec, &set, sink.as_mut())
        }
        Command::Compare(args) => {
            let spec = spec::load(&args.spec)?;
            let set = args.settings(&spec, Integrator::OracleRk4)?;
            let doc = report::compare(&spec, &set)?;
            output::write_report(args.out.as_deref(), &doc).map_err(|e| CliError::io(out_name(&args.out, e)))
        }
        Command::Diagnose(args) => {
            let spec = spec::load(&args.spec)?;
            let set = args.settings(&spec, Integrator::Verlet)?;
            let doc = report::diagnose(&spec, &set)?;
            output::write_report(args.out.as_deref(), &doc).map_err(|e| CliError::io(out_name(&args.out, e)))
        }
        Command::Catalog { name } => {
            print!("{}", spec::catalog_spec(&name)?);
            Ok(())
        }
    }
}

fn out_name(out: &Option<PathBuf>, e: std::io::Error) -> String {
    match out {
        Some(p) => format!("{}: {e}", p.display()),
        None => format!("stdout: {e}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("geomint: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

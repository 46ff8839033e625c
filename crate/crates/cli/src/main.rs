use clap::Parser;
use relay_dof_cli::{
    cmd_bounds, cmd_simulate, cmd_verify, emit, render_bounds, Cli, CliError, Command,
    ExperimentConfig, EXIT_ERROR,
};
use std::process::ExitCode;

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let config = ExperimentConfig::resolve(&args)?;
            let doc = cmd_simulate(&config);
            emit(&doc.render(config.format)?, config.out.as_deref())?;
            if let Some(e) = &doc.error {
                eprintln!(
                    "error: {} in trial {} (seed {}): {}",
                    e.kind, e.trial, e.seed, e.message
                );
            }
            Ok(doc.exit_code())
        }
        Command::Bounds(args) => {
            let rows = cmd_bounds(args.from, args.to)?;
            emit(&render_bounds(&rows, args.format)?, args.out.as_deref())?;
            Ok(0)
        }
        Command::Verify(args) => {
            let config = ExperimentConfig::resolve(&args.experiment)?;
            let report = cmd_verify(&config, args.mutate.map(Into::into), args.tolerance)?;
            emit(&report.render(), config.out.as_deref())?;
            Ok(report.exit_code())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

mod args;
mod commands;
mod exit;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::{Cli, Command};
use exit::Failure;

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(Command::Demo { dir }) = &cli.command {
        return commands::cmd_demo(dir);
    }
    let cfg = commands::resolve_config(&cli.config)?;
    if cli.config.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        Cli::command()
            .error(ErrorKind::MissingSubcommand, "a subcommand is required")
            .exit();
    };
    match command {
        Command::Plan { source, image, out } => commands::cmd_plan(&cfg, source, image.as_deref(), out.as_deref()),
        Command::Run {
            batch: Some(manifest),
            workers,
            ..
        } => commands::cmd_batch(&cfg, manifest, *workers),
        Command::Run {
            image,
            source,
            session,
            dry_run,
            ..
        } => {
            let image = image.as_deref().expect("clap requires --image without --batch");
            commands::cmd_run(&cfg, image, source, session.as_deref(), *dry_run)
        }
        Command::Step { trace, from } => commands::cmd_step(&cfg, trace, *from),
        Command::Inspect { trace, index } => commands::cmd_inspect(trace, *index),
        Command::Serve { addr, workers } => commands::cmd_serve(&cfg, addr, *workers),
        Command::Demo { .. } => unreachable!("handled before config resolution"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            for v in e.violations() {
                eprintln!("  - {v}");
            }
            e.exit_code()
        }
    }
}

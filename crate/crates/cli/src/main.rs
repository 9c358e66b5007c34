use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serfloop_cli::{load_config, run, CliError, Command, ConfigSource};

#[derive(Debug, Parser)]
#[command(name = "serfloop", version, about = "Magnetometer feedback-loop simulations and analyses")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Shipped configuration, e.g. suppress-high.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory; overrides output_dir from the configuration.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

fn execute(args: Args) -> Result<(), CliError> {
    let source = match (args.config, args.preset) {
        (Some(p), _) => ConfigSource::File(p),
        (None, Some(n)) => ConfigSource::Preset(n),
        (None, None) => ConfigSource::Preset(args.command.default_preset().into()),
    };
    let (mut cfg, base) = load_config(&source)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out_dir = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("serfloop-out").join(args.command.name()));
    let outcome = run(args.command, &cfg, &base, &out_dir)?;
    log::info!("wrote {} files to {}", outcome.manifest.outputs.len() + 1, out_dir.display());
    println!("{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

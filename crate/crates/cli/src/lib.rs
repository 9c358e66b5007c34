//! Command-line front end: strict configuration, presets and reproducible
//! result directories for the simulation toolkit.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

use serde_json::Value;

pub use config::{ExperimentConfig, Scenario};
pub use error::CliError;
pub use output::RunManifest;

use commands::RunContext;
use output::{sha256_hex, write_atomic, OutputSet, MANIFEST_NAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    DcResponse,
    Bode,
    Suppress,
    Sensitivity,
    Sql,
    Fit,
    Tune,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::DcResponse => "dc-response",
            Command::Bode => "bode",
            Command::Suppress => "suppress",
            Command::Sensitivity => "sensitivity",
            Command::Sql => "sql",
            Command::Fit => "fit",
            Command::Tune => "tune",
        }
    }

    pub fn accepts(self, s: Scenario) -> bool {
        matches!(
            (self, s),
            (Command::DcResponse, Scenario::DcResponse)
                | (Command::Bode, Scenario::BodeOpen | Scenario::BodeClosed)
                | (Command::Suppress, Scenario::SuppressNoise)
                | (Command::Sensitivity, Scenario::SensitivitySweep)
                | (Command::Sql, Scenario::Sql)
                | (Command::Fit, Scenario::Fit)
                | (Command::Tune, Scenario::Tune)
        )
    }

    /// Preset used when neither a config file nor a preset is given.
    pub fn default_preset(self) -> &'static str {
        match self {
            Command::DcResponse => "dc-response",
            Command::Bode => "bode-closed",
            Command::Suppress => "suppress-high",
            Command::Sensitivity => "sensitivity",
            Command::Sql => "sql",
            Command::Fit => "fit-synthetic",
            Command::Tune => "tune-loop",
        }
    }
}

/// Where the configuration came from.
#[derive(Debug, Clone)]
pub enum ConfigSource {
    File(PathBuf),
    Preset(String),
}

/// Loads a configuration and the directory its relative paths resolve against.
pub fn load_config(source: &ConfigSource) -> Result<(ExperimentConfig, PathBuf), CliError> {
    match source {
        ConfigSource::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let cfg = ExperimentConfig::from_toml(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((cfg, base))
        }
        ConfigSource::Preset(name) => {
            let cfg = ExperimentConfig::from_toml(config::preset(name)?)?;
            Ok((cfg, PathBuf::from(".")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: Value,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs `command` and writes its tables, `summary.json` and `manifest.json`
/// into `out_dir`. Only the manifest carries timestamps.
pub fn run(command: Command, cfg: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<RunOutcome, CliError> {
    if !command.accepts(cfg.scenario) {
        return Err(CliError::Config(format!(
            "scenario {} cannot be run by the {} command",
            cfg.scenario,
            command.name()
        )));
    }
    let started = now();
    let mut ctx = RunContext {
        cfg,
        base_dir: base_dir.to_path_buf(),
        out: OutputSet::new(out_dir),
        inputs: Vec::new(),
    };
    let summary = match command {
        Command::DcResponse => commands::dc_response(&mut ctx),
        Command::Bode => commands::bode(&mut ctx),
        Command::Suppress => commands::suppress(&mut ctx),
        Command::Sensitivity => commands::sensitivity(&mut ctx),
        Command::Sql => commands::sql(&mut ctx),
        Command::Fit => commands::fit(&mut ctx),
        Command::Tune => commands::tune(&mut ctx),
    }?;
    ctx.out.write_json("summary.json", &summary)?;
    let canonical = cfg.canonical_json();
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        scenario: cfg.scenario.name().into(),
        seed: cfg.seed,
        config_sha256: sha256_hex(canonical.as_bytes()),
        config: serde_json::from_str(&canonical).expect("canonical config is JSON"),
        started_utc: started,
        finished_utc: now(),
        inputs: ctx.inputs,
        outputs: ctx.out.files().to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&out_dir.join(MANIFEST_NAME), text.as_bytes())?;
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        manifest,
        summary,
    })
}

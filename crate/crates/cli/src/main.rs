mod commands;
mod config;

use std::fs;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};

use config::{help_for, RunConfig, BOOL_KEYS};

const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "gate_learning_rate",
    "gate_adam_beta2",
    "lambda",
    "alpha_init",
    "beta_init",
    "epochs",
    "batch_size",
    "dropout_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "log_interval",
    "loss_unit_mm",
    "val_fraction",
    "trace_val_samples",
    "augment_flip",
    "freeze_layers",
    "output_scale",
];

const GLOBAL_KEYS: &[&str] = &["seed", "out"];

fn command_keys(name: &str) -> Vec<&'static str> {
    match name {
        "synth" => vec![
            "samples",
            "joints",
            "height",
            "width",
            "sigma_px",
            "occlusion_prob",
            "mirrored_pairs",
            "planar",
            "noise_image",
            "margin_px",
        ],
        "train" => [&["corpus"][..], TRAIN_KEYS].concat(),
        "eval" => vec!["corpus", "checkpoint", "predictions", "split"],
        "prune" => vec!["checkpoint", "tolerance", "corpus", "equivalence_samples"],
        "compare" => [&["corpus", "kinds"][..], TRAIN_KEYS].concat(),
        "analyze" => vec!["checkpoint", "corpus", "analysis_samples", "trace"],
        _ => Vec::new(),
    }
}

const COMMANDS: &[(&str, &str)] = &[
    ("synth", "Generate a synthetic corpus file"),
    ("train", "Train a gated fusion network; writes model/, trace.csv, summary.csv and config.txt"),
    ("eval", "Score a checkpoint or a predictions file; writes metrics.csv"),
    ("prune", "Prune a sharp-gated checkpoint into a two-phase network; writes model/ and equivalence.csv"),
    ("compare", "Train baselines under one budget; writes compare.csv"),
    ("analyze", "Feature correlations at the last convolution; writes r2.csv, r2_summary.csv and gate_weights.csv"),
];

fn flag(key: &'static str, defaults: &RunConfig) -> Arg {
    let mut arg = Arg::new(key)
        .long(key.replace('_', "-"))
        .help(help_for(key))
        .value_name(key.to_uppercase());
    let default = defaults.get(key).expect("listed key");
    if !default.is_empty() {
        arg = arg.default_value(default);
    }
    if BOOL_KEYS.contains(&key) {
        arg = arg
            .num_args(0..=1)
            .default_missing_value("true")
            .value_parser(["true", "false"])
            .value_name("BOOL");
    }
    arg
}

pub fn cli() -> Command {
    let defaults = RunConfig::default();
    let mut cmd = Command::new("posefuse")
        .about("Gated multi-stream fusion networks for 3D pose regression")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("PATH")
                .help("`key = value` file; flags given on the command line take precedence"),
        );
    for key in GLOBAL_KEYS {
        cmd = cmd.arg(flag(key, &defaults).global(true));
    }
    for (name, about) in COMMANDS {
        let mut sub = Command::new(*name).about(*about);
        for key in command_keys(name) {
            sub = sub.arg(flag(key, &defaults));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// A failure reported as one line on stderr with a distinct exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(posefuse::Error),
}

impl From<posefuse::Error> for CliError {
    fn from(e: posefuse::Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        use posefuse::Error;
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(Error::Io { .. }) => 3,
            CliError::Run(Error::Format { .. } | Error::GateNotSharp(_)) => 4,
            CliError::Run(_) => 1,
        }
    }

    fn message(&self) -> String {
        let m = match self {
            CliError::Usage(m) => m.clone(),
            CliError::Run(e) => e.to_string(),
        };
        m.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// Defaults, then the config file, then flags given on the command line.
fn resolve(matches: &ArgMatches, keys: &[&str]) -> Result<RunConfig, CliError> {
    let mut config = match matches.get_one::<String>("config") {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| posefuse::Error::Io {
                path: path.into(),
                source: e,
            })?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for key in GLOBAL_KEYS.iter().chain(keys) {
        if matches.value_source(key) == Some(ValueSource::CommandLine) {
            let value = matches.get_one::<String>(key).expect("string argument");
            config.set(key, value).map_err(CliError::Usage)?;
        }
    }
    Ok(config)
}

fn run() -> Result<(), CliError> {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            e.print().ok();
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::Usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let config = resolve(sub, &command_keys(name))?;
    match name {
        "synth" => commands::synth(&config),
        "train" => commands::train(&config),
        "eval" => commands::eval(&config),
        "prune" => commands::prune(&config),
        "compare" => commands::compare(&config),
        "analyze" => commands::analyze(&config),
        _ => unreachable!("unknown subcommand {name}"),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.message());
            ExitCode::from(e.code())
        }
    }
}

//! Command-line driver: `rpauth <generate|enroll|verify|refresh|attack|report>`.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 on runtime
//! failures. Settings layer as defaults < `--config` file < flags named
//! after the keys (e.g. `--seed 42`, `--synth.n_users 20`).

pub mod config;
pub mod pipeline;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, Command};

use config::{CliError, CliResult, PipelineConfig, RawConfig, KEYS};

pub fn build_command() -> Command {
    let mut cmd = Command::new("rpauth")
        .about("Privacy-preserving behavioral authentication via random projection")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .help("settings file of `key = value` lines (# starts a comment)"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .global(true)
                .default_value("out")
                .help("output root; every artifact and report lives here"),
        );
    for k in KEYS {
        cmd = cmd.arg(
            Arg::new(k.key)
                .long(k.key)
                .value_name("VALUE")
                .global(true)
                .help(k.help),
        );
    }
    cmd.subcommand(Command::new("generate").about("write the synthetic corpus as per-user CSVs"))
        .subcommand(Command::new("enroll").about("split, normalize, oversample, project, and train"))
        .subcommand(
            Command::new("verify")
                .about("score identity claims against the enrolled model")
                .arg(
                    Arg::new("claims")
                        .long("claims")
                        .value_name("FILE")
                        .help("CSV of claimant,claimed pairs (default: self-claims plus seeded impostor claims)"),
                )
                .arg(
                    Arg::new("wrong-matrix")
                        .long("wrong-matrix")
                        .action(ArgAction::SetTrue)
                        .help("also score self-claims projected with fresh, never-enrolled matrices"),
                ),
        )
        .subcommand(Command::new("refresh").about("replace every user's matrix and fine-tune the model"))
        .subcommand(Command::new("attack").about("reconstruct plain profiles from projected rows and score leakage"))
        .subcommand(Command::new("report").about("merge every report under --out into summary.json/.txt"))
}

/// Parses arguments, layers the configuration, and dispatches. `main` maps
/// the error variants to exit codes.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match build_command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    Ok(())
                }
                _ => Err(CliError::Config(e.to_string())),
            };
        }
    };

    let mut raw = RawConfig::defaults();
    if let Some(path) = matches.get_one::<String>("config") {
        raw.apply_file(&PathBuf::from(path))?;
    }
    for k in KEYS {
        if let Some(v) = matches.get_one::<String>(k.key) {
            raw.set(k.key, v)?;
        }
    }
    let cfg = PipelineConfig::from_raw(&raw)?;
    let out = PathBuf::from(matches.get_one::<String>("out").expect("has default"));

    match matches.subcommand() {
        Some(("generate", _)) => pipeline::cmd_generate(&cfg, &out),
        Some(("enroll", _)) => pipeline::cmd_enroll(&cfg, &out),
        Some(("verify", sub)) => pipeline::cmd_verify(
            &cfg,
            &out,
            sub.get_one::<String>("claims").map(std::path::Path::new),
            sub.get_flag("wrong-matrix"),
        ),
        Some(("refresh", _)) => pipeline::cmd_refresh(&cfg, &out),
        Some(("attack", _)) => pipeline::cmd_attack(&cfg, &out),
        Some(("report", _)) => pipeline::cmd_report(&out),
        _ => unreachable!("subcommand_required"),
    }
}

//! The `qin` command line: data generation, training, evaluation, gradient
//! certification and the ablation grid.
//!
//! stdout carries only `key=value` results (or the markdown table for
//! `ablate`); progress and errors go to stderr.
//!
//! Exit codes: 0 success, 1 gradient check failed or run aborted, 2 usage or
//! configuration error, 3 I/O or file-format error, 4 single-class labels.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};
use qin_core::QinError;

use crate::config::{RunConfig, KEYS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SINGLE_CLASS: i32 = 4;

pub fn exit_code(err: &QinError) -> i32 {
    match err {
        QinError::Config(_) => EXIT_USAGE,
        QinError::Io(_)
        | QinError::Malformed { .. }
        | QinError::IdOutOfRange { .. }
        | QinError::BadMagic { .. }
        | QinError::ShapeMismatch { .. }
        | QinError::Truncated(_) => EXIT_IO,
        QinError::SingleClass => EXIT_SINGLE_CLASS,
        _ => EXIT_FAILED,
    }
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).value_name("PATH").value_parser(clap::value_parser!(PathBuf)).help(help)
}

fn with_config_keys(cmd: Command) -> Command {
    let cmd = cmd.arg(path_arg("config", "key = value configuration file"));
    KEYS.iter().fold(cmd, |cmd, &key| {
        cmd.arg(Arg::new(key).long(key).value_name("VALUE").help_heading("Configuration keys"))
    })
}

pub fn command() -> Command {
    let seeds = Arg::new("seeds").long("seeds").value_name("N").value_parser(clap::value_parser!(u64).range(1..));
    Command::new("qin")
        .about("Sparse target attention and quadratic interaction layers for CTR prediction")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_config_keys(
            Command::new("gen-data")
                .about("Generate the synthetic dataset and print its manifests")
                .arg(path_arg("out", "output directory").required(true)),
        ))
        .subcommand(with_config_keys(
            Command::new("train")
                .about("Train and write best.ckpt, history.log and run.conf")
                .arg(path_arg("data", "dataset directory").required(true))
                .arg(path_arg("out", "output directory").required(true)),
        ))
        .subcommand(with_config_keys(
            Command::new("eval")
                .about("Print auc and logloss of a checkpoint on one split")
                .arg(path_arg("data", "dataset directory").required(true))
                .arg(path_arg(
                    "checkpoint",
                    "checkpoint to evaluate; without it the seeded initial parameters are used. \
                     A run.conf next to it is read unless --config is given",
                ))
                .arg(Arg::new("split").long("split").value_parser(["valid", "train"]).default_value("valid"))
                .arg(Arg::new("zero-head").long("zero-head").action(ArgAction::SetTrue).help("zero the prediction head first"))
                .arg(path_arg("dump", "write `prob<TAB>label` per sample")),
        ))
        .subcommand(
            Command::new("gradcheck")
                .about("Certify every backward pass against central finite differences")
                .arg(seeds.clone().default_value("5"))
                .arg(Arg::new("seed").long("seed").value_name("BASE").value_parser(clap::value_parser!(u64)).default_value("0"))
                .arg(Arg::new("sabotage").long("sabotage").value_name("GROUP").help("negate one group's analytic gradient (self-test)")),
        )
        .subcommand(with_config_keys(
            Command::new("ablate")
                .about("Train the variant grid and print a markdown table of valid AUCs")
                .arg(path_arg("data", "dataset directory").required(true))
                .arg(seeds.default_value("3").help("number of consecutive training seeds, starting at `seed`")),
        ))
}

fn config_from(m: &ArgMatches, fallback: Option<PathBuf>) -> qin_core::Result<RunConfig> {
    let file = match m.get_one::<PathBuf>("config").cloned().or(fallback) {
        Some(p) => Some(fs::read_to_string(&p).map_err(|e| {
            QinError::Io(std::io::Error::new(e.kind(), format!("config {}: {e}", p.display())))
        })?),
        None => None,
    };
    let flags: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|&k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(file.as_deref(), &flags)
}

fn dispatch(matches: &ArgMatches) -> qin_core::Result<i32> {
    let path = |m: &ArgMatches, name: &str| m.get_one::<PathBuf>(name).cloned();
    match matches.subcommand() {
        Some(("gen-data", m)) => commands::gen_data(&config_from(m, None)?, &path(m, "out").unwrap()),
        Some(("train", m)) => commands::train(&config_from(m, None)?, &path(m, "data").unwrap(), &path(m, "out").unwrap()),
        Some(("eval", m)) => {
            let checkpoint = path(m, "checkpoint");
            let beside = checkpoint
                .as_ref()
                .and_then(|c| c.parent().map(|d| d.join(commands::RUN_CONF)))
                .filter(|p| p.is_file());
            let cfg = config_from(m, beside)?;
            let opts = commands::EvalOptions {
                checkpoint,
                split: m.get_one::<String>("split").unwrap().clone(),
                zero_head: m.get_flag("zero-head"),
                dump: path(m, "dump"),
            };
            commands::eval(&cfg, &path(m, "data").unwrap(), &opts)
        }
        Some(("gradcheck", m)) => commands::gradcheck(
            *m.get_one::<u64>("seeds").unwrap(),
            *m.get_one::<u64>("seed").unwrap(),
            m.get_one::<String>("sabotage").cloned(),
        ),
        Some(("ablate", m)) => commands::ablate(&config_from(m, None)?, &path(m, "data").unwrap(), *m.get_one::<u64>("seeds").unwrap()),
        _ => unreachable!("subcommand_required"),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run(args: impl IntoIterator<Item = OsString>) -> i32 {
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&matches) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Arg, ArgMatches, Command};
use taml::config::{self, flag_name, KEYS};
use taml::pipeline;
use taml_core::synthetic::SyntheticConfig;

fn cli() -> Command {
    let mut cmd = Command::new("taml")
        .about("Diversity-aware top-K recommender: training, evaluation and experiment harness")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help(
            "Configuration is read from --config (dotted key=value lines), then TAML_* environment \
             variables (TAML_TRAIN_BATCH_SIZE for train.batch_size), then the flags below.",
        )
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .help("configuration file of key=value lines"),
        );
    for spec in KEYS {
        cmd = cmd.arg(
            Arg::new(spec.key)
                .long(flag_name(spec.key))
                .value_name("VALUE")
                .global(true)
                .help(format!("{} [{}]", spec.help, spec.key)),
        );
    }
    let usize_arg = |name: &'static str, default: &'static str, help: &'static str| {
        Arg::new(name)
            .long(name)
            .value_name("N")
            .default_value(default)
            .value_parser(clap::value_parser!(usize))
            .help(help)
    };
    cmd.subcommand(Command::new("ingest").about("Load, filter and split the dataset; write the corpus snapshot"))
        .subcommand(Command::new("report").about("Write the per-user diversity profile, histogram data and skewness"))
        .subcommand(Command::new("train").about("Train the configured model; write checkpoints and the loss history"))
        .subcommand(
            Command::new("evaluate")
                .about("Evaluate the checkpoints of a train run; write metric CSVs")
                .arg(
                    Arg::new("from")
                        .long("from")
                        .value_name("DIR")
                        .required(true)
                        .help("directory written by `taml train` (its config.txt is used unless --config is given)"),
                ),
        )
        .subcommand(Command::new("run").about("Ingest, report, train and evaluate in one go"))
        .subcommand(Command::new("ablate").about("Train and evaluate the seven ablation variants"))
        .subcommand(Command::new("sweep").about("Train and evaluate once per value of sweep.dims, sweep.negatives and sweep.aspects"))
        .subcommand(
            Command::new("synth")
                .about("Write a synthetic dataset in the canonical TSV layout")
                .arg(Arg::new("out").long("out").value_name("DIR").required(true).help("target directory"))
                .arg(usize_arg("users", "200", "number of users"))
                .arg(usize_arg("items", "300", "number of items"))
                .arg(usize_arg("categories", "12", "number of categories"))
                .arg(usize_arg("min-items", "8", "fewest interactions per user"))
                .arg(usize_arg("max-items", "30", "most interactions per user")),
        )
}

fn resolve(matches: &ArgMatches, default_file: Option<PathBuf>) -> Result<taml::ExperimentConfig> {
    let file = matches.get_one::<String>("config").map(PathBuf::from).or(default_file);
    let flags: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|spec| {
            matches
                .get_one::<String>(spec.key)
                .map(|v| (spec.key.to_string(), v.clone()))
        })
        .collect();
    config::resolve(file.as_deref(), std::env::vars(), &flags)
}

fn run(matches: &ArgMatches) -> Result<Vec<PathBuf>> {
    let (name, sub) = matches.subcommand().context("missing subcommand")?;
    match name {
        "evaluate" => {
            let from = PathBuf::from(sub.get_one::<String>("from").expect("required"));
            let config = resolve(sub, Some(from.join(pipeline::CONFIG_FILE)))?;
            pipeline::evaluate(&config, &from)
        }
        "synth" => {
            let config = resolve(sub, None)?;
            let count = |name: &str| *sub.get_one::<usize>(name).expect("defaulted");
            let synth = SyntheticConfig {
                users: count("users"),
                items: count("items"),
                categories: count("categories"),
                min_items: count("min-items"),
                max_items: count("max-items"),
                seed: config.train.seed,
                ..SyntheticConfig::default()
            };
            let out = PathBuf::from(sub.get_one::<String>("out").expect("required"));
            pipeline::synthesize(&synth, &out)
        }
        other => {
            let config = resolve(sub, None)?;
            match other {
                "ingest" => pipeline::ingest(&config),
                "report" => pipeline::report(&config),
                "train" => pipeline::train(&config),
                "run" => pipeline::run_experiment(&config),
                "ablate" => pipeline::ablate(&config),
                "sweep" => pipeline::sweep(&config),
                _ => unreachable!("clap rejects unknown subcommands"),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

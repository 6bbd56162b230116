mod args;
mod commands;
mod demo;
mod error;
mod manifest;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use crate::args::{Cli, Command};
use crate::error::CliError;
use crate::manifest::ManifestBuilder;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(run(&argv));
}

/// Names of the subcommand and flags as given, for help on bad input.
fn subcommand_of(argv: &[String]) -> Option<String> {
    let cmd = Cli::command();
    argv.iter()
        .skip(1)
        .find(|a| cmd.get_subcommands().any(|s| s.get_name() == a.as_str()))
        .cloned()
}

fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if matches!(e.kind(), ErrorKind::UnknownArgument | ErrorKind::InvalidValue) {
                let mut cmd = Cli::command();
                let sub = subcommand_of(argv).and_then(|name| cmd.find_subcommand_mut(&name).map(|s| s.clone()));
                let mut target = sub.unwrap_or(cmd);
                eprintln!();
                let _ = target.write_long_help(&mut std::io::stderr());
            }
            return code;
        }
    };
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .without_time()
        .with_target(false)
        .try_init();
    match dispatch(&cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    let mut recorded = argv.to_vec();
    if let Some(first) = recorded.first_mut() {
        *first = "dexpt".into();
    }
    let m = |name: &str| ManifestBuilder::new(name, &recorded);
    match &cli.command {
        Command::BuildVocab(a) => commands::build_vocab(a, m("build-vocab")),
        Command::Expand(a) => commands::expand(a, m("expand")),
        Command::Pretrain(a) => commands::pretrain(a, m("pretrain")),
        Command::Finetune(a) => commands::finetune(a, m("finetune")),
        Command::Encode(a) => commands::encode(a, m("encode")),
        Command::Eval(a) => commands::eval(a, m("eval")),
        Command::Demo(a) => demo::run(a, m("demo")),
    }
}

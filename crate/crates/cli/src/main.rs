mod commands;
mod config;
mod error;

use std::fs;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Arg, ArgAction, ArgMatches, Command};
use elrecon::kv::KvMap;

use config::{Cmd, Settings, KEYS};
use error::{CliError, CliResult};

fn cli() -> Command {
    let mut root = Command::new("elrecon")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Regularized tomographic reconstruction")
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("key=value config file; flags override it"),
        );
    for k in KEYS.iter().filter(|k| k.is_global()) {
        root = root.arg(
            Arg::new(k.name)
                .long(k.name)
                .value_name("VALUE")
                .global(true)
                .help(format!("{} [default: {}]", k.help, k.default)),
        );
    }
    for c in Cmd::ALL {
        let mut sub = Command::new(c.name()).about(c.about());
        for k in KEYS.iter().filter(|k| !k.is_global() && k.applies_to(c)) {
            let mut arg = Arg::new(k.name)
                .long(k.flag_name(c))
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help(format!("{} (key {}) [default: {}]", k.help, k.name, k.default));
            if k.boolean {
                arg = arg.num_args(0..=1).default_missing_value("true");
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

fn collect_flags(m: &ArgMatches, kv: &mut KvMap) {
    for k in KEYS {
        if let Ok(Some(v)) = m.try_get_one::<String>(k.name) {
            kv.set(k.name, v);
        }
    }
}

fn execute(matches: &ArgMatches) -> CliResult<()> {
    let (sub, sub_matches) = match matches.subcommand() {
        Some((name, m)) => (Some(Cmd::parse(name)?), Some(m)),
        None => (None, None),
    };
    let file = match sub_matches
        .and_then(|m| m.get_one::<String>("config"))
        .or_else(|| matches.get_one::<String>("config"))
    {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            KvMap::parse(&text).map_err(|e| CliError::config(format!("{path}: {e}")))?
        }
        None => KvMap::new(),
    };
    let cmd = match (sub, file.get("command")) {
        (Some(c), _) => c,
        (None, Some(name)) => Cmd::parse(name)?,
        (None, None) => return Err(CliError::config("no command given")),
    };
    let mut flags = KvMap::new();
    collect_flags(matches, &mut flags);
    if let Some(m) = sub_matches {
        collect_flags(m, &mut flags);
    }
    let settings = Settings::resolve(cmd, &file, &flags)?;
    let threads: usize = settings.get("threads")?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::config(format!("threads: {e}")))?;
    }
    commands::run(&settings)
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("bad arguments");
            eprintln!("error: {}", one_line(first.trim_start_matches("error:")));
            return ExitCode::from(2);
        }
    };
    match execute(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }
}

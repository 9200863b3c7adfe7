//! Command-line front end. Every subcommand writes its reports and a
//! `manifest.json` echoing the resolved flags into `--out`.
//!
//! Exit codes: 0 on success, 2 for usage errors (unknown flags, values out
//! of range, unreadable `--config`), 1 for pipeline errors, which are also
//! printed to stderr as one line of JSON.

mod args;
mod commands;

use std::ffi::OsString;
use std::fs;

use clap::{CommandFactory, FromArgMatches};

pub use args::{Cli, Command, List, VARIANTS};

pub const EXIT_PIPELINE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Splices the key=value pairs of a `--config` file in front of the
/// command-line flags, so that later (command-line) occurrences win.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path = None;
    let mut i = 2;
    while i < argv.len() {
        let arg = argv[i].to_string_lossy();
        if arg == "--config" {
            path = argv.get(i + 1).cloned();
            if path.is_none() {
                return Err("--config needs a file path".into());
            }
            i += 1;
        } else if let Some(p) = arg.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.to_string_lossy()))?;
    let mut spliced = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", n + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key == "config" || key.starts_with('-') {
            return Err(format!("config line {}: invalid key `{key}`", n + 1));
        }
        match value {
            "true" => spliced.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => spliced.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(spliced);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

/// Clap command with negative numbers accepted as values (so that range
/// checks, not the tokenizer, reject them) and repeated flags resolved to
/// the last occurrence.
pub fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| {
            s.allow_negative_numbers(true).args_override_self(true)
        });
    }
    cmd
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = if argv.len() > 2 {
        match expand_config(argv) {
            Ok(a) => a,
            Err(msg) => {
                eprintln!("error: {msg}");
                return EXIT_USAGE;
            }
        }
    } else {
        argv
    };
    let cli = match command()
        .try_get_matches_from(argv)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            EXIT_PIPELINE
        }
    }
}

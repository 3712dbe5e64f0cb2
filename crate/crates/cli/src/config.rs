//! `--config` support: a flat JSON object whose keys are flag names (either
//! `snake_case` or `kebab-case`). Values fill in every flag the command line
//! leaves unset.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::{ArgAction, CommandFactory, Parser};
use serde_json::{Map, Value};

use crate::args::Cli;
use crate::error::CliError;

pub fn parse(argv: Vec<OsString>) -> Result<Cli, CliError> {
    let (config_path, sub_name) = scan(&argv);
    let (Some(path), Some(name)) = (config_path, sub_name) else {
        return Ok(Cli::try_parse_from(argv)?);
    };
    let config = read_config(Path::new(&path))?;
    let command = Cli::command();
    let Some(sub) = command.find_subcommand(&name) else {
        return Ok(Cli::try_parse_from(argv)?);
    };
    let mut merged = argv.clone();
    for (key, value) in &config {
        let id = key.replace('-', "_");
        let arg = sub
            .get_arguments()
            .chain(command.get_arguments())
            .find(|a| a.get_id().as_str() == id && a.get_id() != "config")
            .ok_or_else(|| {
                CliError::Usage(format!("config key `{key}` is not a flag of `{name}`"))
            })?;
        let long = arg.get_long().expect("every flag has a long name");
        if given(&argv, long) {
            continue;
        }
        merged.extend(tokens(long, arg.get_action(), value, key)?);
    }
    Ok(Cli::try_parse_from(merged)?)
}

/// Config path and subcommand name, read from the raw arguments so that
/// flags supplied only by the config do not trip required-argument checks.
fn scan(argv: &[OsString]) -> (Option<String>, Option<String>) {
    let mut config = None;
    let mut tokens = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned());
    while let Some(t) = tokens.next() {
        if let Some(v) = t.strip_prefix("--config=") {
            config = Some(v.to_owned());
        } else if t == "--config" {
            config = tokens.next();
        } else if t == "--threads" {
            tokens.next();
        } else if !t.starts_with('-') {
            let rest: Vec<String> = tokens.collect();
            // the global flag may also follow the subcommand
            for (k, r) in rest.iter().enumerate() {
                if let Some(v) = r.strip_prefix("--config=") {
                    config = Some(v.to_owned());
                } else if r == "--config" {
                    config = rest.get(k + 1).cloned();
                }
            }
            return (config, Some(t));
        }
    }
    (config, None)
}

fn given(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let prefix = format!("{flag}=");
    argv.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&prefix)
    })
}

fn read_config(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Usage("config must be a JSON object".into())),
        Err(e) => Err(CliError::Usage(format!(
            "config {} is not valid JSON: {e}",
            path.display()
        ))),
    }
}

fn scalar(value: &Value, key: &str) -> Result<String, CliError> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(CliError::Usage(format!(
            "config key `{key}` must be a string or number"
        ))),
    }
}

/// Command-line tokens equivalent to one config entry.
fn tokens(
    long: &str,
    action: &ArgAction,
    value: &Value,
    key: &str,
) -> Result<Vec<OsString>, CliError> {
    let flag = format!("--{long}");
    if matches!(action, ArgAction::SetTrue) {
        return match value {
            Value::Bool(true) => Ok(vec![flag.into()]),
            Value::Bool(false) => Ok(vec![]),
            _ => Err(CliError::Usage(format!(
                "config key `{key}` must be true or false"
            ))),
        };
    }
    let text = match value {
        Value::Array(items) => items
            .iter()
            .map(|v| scalar(v, key))
            .collect::<Result<Vec<_>, _>>()?
            .join(","),
        v => scalar(v, key)?,
    };
    Ok(vec![format!("{flag}={text}").into()])
}

//! `--config FILE` support: a TOML table whose keys are long flag names.
//! Its entries are spliced into the argument list right after the
//! subcommand, so flags given on the command line win.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};

pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config=")) else {
        return Ok(args);
    };
    let (path, consumed) = match args[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => match args.get(pos + 1) {
            Some(p) => (p.to_string_lossy().into_owned(), 2),
            None => bail!("--config needs a file path"),
        },
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let table: toml::Table = text.parse().with_context(|| format!("parsing config {path}"))?;
    let injected = flags_from_table(&table)?;

    let mut rest = args;
    rest.drain(pos..pos + consumed);
    // program name and subcommand stay in front
    let split = rest.len().min(2);
    let tail = rest.split_off(split);
    rest.extend(injected);
    rest.extend(tail);
    Ok(rest)
}

fn flags_from_table(table: &toml::Table) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{key}");
        match value {
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                for item in items {
                    out.push(flag.clone().into());
                    out.push(scalar(key, item)?.into());
                }
            }
            other => {
                out.push(flag.into());
                out.push(scalar(key, other)?.into());
            }
        }
    }
    Ok(out)
}

fn scalar(key: &str, value: &toml::Value) -> Result<String> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        _ => bail!("config key `{key}` must be a string, number or boolean"),
    })
}

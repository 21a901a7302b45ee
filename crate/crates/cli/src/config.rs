//! `--config file.json` support: per-subcommand flag defaults, e.g.
//! `{"detect": {"threshold": 0.5, "adjacency": "8"}}`. Flags given on the
//! command line win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context};
use serde_json::Value;

fn config_path(args: &[OsString]) -> Option<(usize, OsString)> {
    args.iter().enumerate().find_map(|(i, a)| {
        let s = a.to_str()?;
        if s == "--config" {
            args.get(i + 1).map(|v| (i, v.clone()))
        } else {
            s.strip_prefix("--config=").map(|v| (i, v.into()))
        }
    })
}

fn subcommand(args: &[OsString], config_at: Option<usize>) -> Option<String> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_str()?;
        if Some(i) == config_at && s == "--config" {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            return Some(s.to_owned());
        }
        i += 1;
    }
    None
}

fn has_flag(args: &[OsString], flag: &str) -> bool {
    let with_value = format!("{flag}=");
    args.iter()
        .filter_map(|a| a.to_str())
        .any(|a| a == flag || a.starts_with(&with_value))
}

fn scalar(v: &Value, key: &str) -> anyhow::Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => bail!("config value for {key:?} must be a string, number, boolean or array"),
    }
}

/// Appends the config file's defaults for the chosen subcommand to `args`.
pub fn expand(args: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some((at, path)) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Some(cmd) = subcommand(&args, Some(at)) else {
        return Ok(args);
    };
    let Some(section) = doc.get(&cmd) else {
        return Ok(args);
    };
    let Some(section) = section.as_object() else {
        bail!("config section {cmd:?} must be an object");
    };
    let mut out = args.clone();
    for (key, value) in section {
        let flag = format!("--{}", key.replace('_', "-"));
        if has_flag(&args, &flag) {
            continue;
        }
        match value {
            Value::Bool(true) => out.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for item in items {
                    out.push(flag.clone().into());
                    out.push(scalar(item, key)?.into());
                }
            }
            v => {
                out.push(flag.into());
                out.push(scalar(v, key)?.into());
            }
        }
    }
    Ok(out)
}

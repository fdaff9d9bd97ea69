//! `key = value` config files: merged into argv before parsing, and echoed next to outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// Parses `key = value` lines. `#` starts a comment; keys may use `_` or `-`.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, got {raw:?}", n + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            bail!("line {}: empty key", n + 1);
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Removes `--config <path>` from `args` and appends a `--key value` pair for every
/// config entry not already given on the command line. Flags win over the file.
pub fn merge_into_args(mut args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="))
    else {
        return Ok(args);
    };
    let path = if let Some(p) = args[pos].strip_prefix("--config=") {
        let p = p.to_string();
        args.remove(pos);
        p
    } else {
        if pos + 1 >= args.len() {
            bail!("--config needs a file path");
        }
        args.remove(pos);
        args.remove(pos)
    };
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading config file {path}"))?;
    let entries = parse(&text).with_context(|| format!("in config file {path}"))?;
    for (key, value) in entries {
        if key == "command" {
            continue;
        }
        let flag = format!("--{key}");
        let given = args
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        match value.as_str() {
            "true" => args.push(flag),
            "false" => {}
            _ => {
                args.push(flag);
                args.push(value);
            }
        }
    }
    Ok(args)
}

/// Renders `args` as a config file that reproduces the run via `--config`.
pub fn echo<T: Serialize>(command: &str, args: &T) -> Result<String> {
    let value = serde_json::to_value(args)?;
    let mut out = format!("command = {command}\n");
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            let text = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s,
                serde_json::Value::Array(items) if items.is_empty() => continue,
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string))
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{} = {text}\n", k.replace('_', "-")));
        }
    }
    Ok(out)
}

/// Writes the echo as `<dir>/<name>.conf`.
pub fn write_echo<T: Serialize>(
    dir: &Path,
    name: &str,
    command: &str,
    args: &T,
) -> Result<PathBuf> {
    let path = dir.join(format!("{name}.conf"));
    std::fs::write(&path, echo(command, args)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_comments_and_keys() {
        let m = parse("# run\nepochs = 5\nbatch_size=64 # inline\n\nout = a b.ckpt\n").unwrap();
        assert_eq!(m["epochs"], "5");
        assert_eq!(m["batch-size"], "64");
        assert_eq!(m["out"], "a b.ckpt");
        assert!(parse("nonsense").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        std::fs::write(
            &p,
            "command = train\nepochs = 5\nseed = 3\nverbose-off = false\nsigned = true\n",
        )
        .unwrap();
        let args = strings(&[
            "ecg-xai",
            "train",
            "--config",
            p.to_str().unwrap(),
            "--seed",
            "9",
        ]);
        let merged = merge_into_args(args).unwrap();
        assert_eq!(
            merged,
            strings(&["ecg-xai", "train", "--seed", "9", "--epochs", "5", "--signed"])
        );
    }

    #[test]
    fn echo_round_trips() {
        #[derive(Serialize)]
        struct A {
            epochs: usize,
            batch_size: usize,
            out: String,
            history: Option<String>,
        }
        let text = echo(
            "train",
            &A {
                epochs: 3,
                batch_size: 8,
                out: "m.ckpt".into(),
                history: None,
            },
        )
        .unwrap();
        let m = parse(&text).unwrap();
        assert_eq!(m["command"], "train");
        assert_eq!(m["batch-size"], "8");
        assert!(!m.contains_key("history"));
    }
}

//! `key=value` config files, expanded into command-line flags.
//!
//! File entries are placed before the user's own arguments; single-valued
//! flags override themselves, so anything given on the command line wins.
//! List flags (`dataset`, `source`) from the file are dropped entirely when
//! the command line sets them.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

const LIST_KEYS: &[&str] = &["dataset", "source"];

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value", idx + 1);
        };
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            bail!("config line {}: invalid key `{key}`", idx + 1);
        }
        out.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(out)
}

/// Returns the value of `--config` in `args`, if any.
fn config_path(args: &[String]) -> Option<&str> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p);
        }
    }
    None
}

fn sets(args: &[String], key: &str) -> bool {
    let flag = format!("--{key}");
    args.iter()
        .any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
}

/// Splices the entries of the `--config` file (if any) into `args` right
/// after the subcommand words.
pub fn expand(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(path))
        .with_context(|| format!("cannot read config file {path}"))?;
    let mut injected = Vec::new();
    for (key, value) in parse(&text).with_context(|| format!("in config file {path}"))? {
        if LIST_KEYS.contains(&key.as_str()) && sets(&args, &key) {
            continue;
        }
        injected.push(format!("--{key}={value}"));
    }
    // Program name, then subcommand words up to the first flag.
    let split = args
        .iter()
        .skip(1)
        .position(|a| a.starts_with('-'))
        .map_or(args.len(), |p| p + 1);
    let mut out = args[..split].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[split..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = parse("# run\nT = 20\n\nselect=min # policy\n").unwrap();
        assert_eq!(kv, vec![("T".into(), "20".into()), ("select".into(), "min".into())]);
        assert!(parse("nonsense").is_err());
    }

    #[test]
    fn file_entries_go_before_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        fs::write(&path, "T=5\ndataset=a.jsonl\n").unwrap();
        let p = path.to_str().unwrap();
        let out = expand(strings(&["campus", "run", "--config", p, "--T", "7"])).unwrap();
        assert_eq!(
            out,
            strings(&["campus", "run", "--T=5", "--dataset=a.jsonl", "--config", p, "--T", "7"])
        );
        let out = expand(strings(&["campus", "run", "--config", p, "--dataset", "b"])).unwrap();
        assert!(!out.iter().any(|a| a == "--dataset=a.jsonl"));
    }
}

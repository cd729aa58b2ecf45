// SPDX-License-Identifier: Apache-2.0

//! `key = value` config files. A key names a long flag without its dashes;
//! `#` starts a comment. Values are spliced into argv for every flag the
//! command line does not already set, so flags > config > built-in defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, CommandFactory};
use frametrace::{Error, Result};

use crate::args::Cli;

pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ParseLine { line: i + 1, message: format!("expected key = value, got `{line}`") })?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(Error::ParseLine { line: i + 1, message: "empty key".into() });
        }
        if out.insert(key.clone(), v.trim().to_owned()).is_some() {
            return Err(Error::ParseLine { line: i + 1, message: format!("`{key}` set twice") });
        }
    }
    Ok(out)
}

/// Value of `--config` in argv, if any.
fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn sets_flag(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let with_eq = format!("--{long}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&with_eq)
    })
}

/// Argv with config-file values appended after the subcommand's own flags.
/// Keys no subcommand knows are rejected; keys the chosen one lacks are skipped.
pub fn merge(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", Path::new(&path).display())))?;
    let values = parse(&text)?;

    let cmd = Cli::command();
    let Some(sub) = argv
        .iter()
        .skip(1)
        .find_map(|a| cmd.get_subcommands().find(|s| s.get_name() == a.to_string_lossy()))
    else {
        return Ok(argv);
    };
    let known = |c: &clap::Command, key: &str| c.get_arguments().any(|a| a.get_long() == Some(key));
    for key in values.keys() {
        if key == "config" || (!cmd.get_subcommands().any(|s| known(s, key)) && !known(&cmd, key)) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
    }
    let mut out = argv.clone();
    for arg in sub.get_arguments().chain(cmd.get_arguments()) {
        let Some(long) = arg.get_long() else { continue };
        let Some(value) = values.get(long) else { continue };
        if long == "config" || sets_flag(&argv, long) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => out.push(format!("--{long}").into()),
                "false" | "0" | "no" => {}
                other => return Err(Error::Config(format!("`{long}` expects true or false, got `{other}`"))),
            },
            _ => {
                out.push(format!("--{long}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

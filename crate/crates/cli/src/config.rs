//! `--config FILE` support. The file holds `key = value` lines whose keys are
//! long flag names; `#` starts a comment. Values become flags placed right
//! after the subcommand, so anything given on the command line wins.
//!
//! ```text
//! # train.conf
//! epochs = 50
//! lr = 0.0001
//! no-augment = true
//! ```

use std::ffi::OsString;
use std::path::Path;

use crate::error::CliError;

pub fn parse_config(text: &str) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("config line {}: bad key", i + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn subcommand_index(argv: &[OsString]) -> Option<usize> {
    const NAMES: [&str; 8] = [
        "simulate",
        "train",
        "eval",
        "serve",
        "replay",
        "fsm-trace",
        "calibrate",
        "stats",
    ];
    argv.iter()
        .position(|a| NAMES.contains(&a.to_string_lossy().as_ref()))
}

/// Splice config-file flags into the argument list.
pub fn expand_args(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(CliError::io(format!("config {}", Path::new(&path).display())))?;
    let extra = parse_config(&text)?;
    let at = subcommand_index(&argv).map_or(argv.len(), |i| i + 1);
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

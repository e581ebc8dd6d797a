//! Line-oriented `key = value` files merged into the argument list.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

/// Flag arguments equivalent to the assignments in `text`.
///
/// `key = true` becomes a bare `--key`, `key = false` is dropped, and any
/// other value becomes `--key=value`. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(format!("line {}: invalid key {key:?}", i + 1));
        }
        match value.trim() {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => out.push(format!("--{key}={v}")),
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(p.into());
        }
    }
    None
}

/// Splices the assignments of a `--config` file in right after the
/// subcommand, so that explicit flags (which come later) take precedence.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("--config {}: {e}", Path::new(&path).display()))?;
    let extra = parse_config(&text).map_err(|e| format!("--config {}: {e}", Path::new(&path).display()))?;
    // The first bare word after the program name is the subcommand.
    let mut skip_value = false;
    let mut at = None;
    for (i, a) in args.iter().enumerate().skip(1) {
        if skip_value {
            skip_value = false;
            continue;
        }
        if a == "--config" {
            skip_value = true;
        } else if !a.to_string_lossy().starts_with('-') {
            at = Some(i + 1);
            break;
        }
    }
    let Some(at) = at else {
        return Ok(args);
    };
    let mut out = args[..at].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

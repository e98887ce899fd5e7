//! `--config FILE` handling: a TOML table per subcommand whose keys are flag
//! names. Preloaded flags are inserted right after the subcommand, so flags
//! given on the command line win.
//!
//! ```toml
//! [condition]
//! k = 4
//! r-min = 0.9
//! ```

use std::ffi::OsString;
use std::path::PathBuf;

use crate::CliError;

/// Remove a leading `--config FILE` and splice its flags into `args`.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::with_capacity(args.len());
    let mut config: Option<PathBuf> = None;
    let mut iter = args.into_iter();
    if let Some(prog) = iter.next() {
        out.push(prog);
    }
    let mut rest: Vec<OsString> = iter.collect();
    // Global options come before the subcommand.
    let mut i = 0;
    while i < rest.len() {
        let arg = rest[i].to_string_lossy().into_owned();
        if arg == "--config" {
            let path = rest
                .get(i + 1)
                .ok_or_else(|| CliError::new("--config: missing file name"))?;
            config = Some(PathBuf::from(path));
            rest.drain(i..i + 2);
            continue;
        }
        if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(PathBuf::from(path));
            rest.remove(i);
            continue;
        }
        if !arg.starts_with('-') {
            break;
        }
        i += 1;
    }
    let Some(path) = config else {
        out.extend(rest);
        return Ok(out);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::new(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::new(format!("{}: {}", path.display(), e.message())))?;
    let sub_pos = rest.iter().position(|a| !a.to_string_lossy().starts_with('-'));
    let Some(sub_pos) = sub_pos else {
        out.extend(rest);
        return Ok(out);
    };
    let sub = rest[sub_pos].to_string_lossy().into_owned();
    for key in table.keys() {
        if !table[key].is_table() {
            return Err(CliError::new(format!(
                "{}: {key}: top-level keys must be subcommand tables",
                path.display()
            )));
        }
    }
    let mut flags = Vec::new();
    if let Some(toml::Value::Table(t)) = table.get(&sub) {
        for (key, value) in t {
            push_flag(&mut flags, key, value).map_err(|m| CliError::new(format!("{}: {sub}.{key}: {m}", path.display())))?;
        }
    }
    out.extend(rest.drain(..=sub_pos));
    out.extend(flags);
    out.extend(rest);
    Ok(out)
}

fn push_flag(flags: &mut Vec<OsString>, key: &str, value: &toml::Value) -> Result<(), String> {
    let name = format!("--{}", key.replace('_', "-"));
    match value {
        toml::Value::Boolean(true) => flags.push(name.into()),
        toml::Value::Boolean(false) => {}
        toml::Value::String(s) => {
            flags.push(name.into());
            flags.push(s.into());
        }
        toml::Value::Integer(v) => {
            flags.push(name.into());
            flags.push(v.to_string().into());
        }
        toml::Value::Float(v) => {
            flags.push(name.into());
            flags.push(v.to_string().into());
        }
        toml::Value::Array(items) => {
            for item in items {
                push_flag(flags, key, item)?;
            }
        }
        _ => return Err("unsupported value type".into()),
    }
    Ok(())
}
